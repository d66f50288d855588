export type Verdict = "accept" | "reject";

export interface SequenceInfo {
    id: string;
    frame_count: number;
    labeled: boolean;
}

export interface Decision {
    sequence_id: string;
    start: number;
    end: number; // inclusive
    verdict: Verdict;
    reviewer: string;
    timestamp: string;
}

export interface DecisionInput {
    sequence_id: string;
    start: number;
    end: number;
    verdict: Verdict;
    reviewer?: string;
}
