import { Decision, DecisionInput, Verdict } from "./types.js";

// capture runs at 48Hz, so playback defaults to real time
export const DEFAULT_FPS = 48;

export interface Session {
    sequenceId: string | null;
    frameCount: number;
    cursor: number;
    playing: boolean;
    fps: number;
    showOverlay: boolean;
    pendingStart: number | null;
    decisions: Decision[];
    unsaved: DecisionInput[];
}

export function emptySession(): Session {
    return {
        sequenceId: null,
        frameCount: 0,
        cursor: 0,
        playing: false,
        fps: DEFAULT_FPS,
        showOverlay: true,
        pendingStart: null,
        decisions: [],
        unsaved: [],
    };
}

export function openSequence(s: Session, id: string, frameCount: number): Session {
    return { ...emptySession(), sequenceId: id, frameCount, fps: s.fps, showOverlay: s.showOverlay };
}

function clampFrame(s: Session, frame: number): number {
    if (s.frameCount <= 0) return 0;
    return Math.min(Math.max(frame, 0), s.frameCount - 1);
}

export function seek(s: Session, frame: number): Session {
    return { ...s, cursor: clampFrame(s, frame) };
}

export function step(s: Session, delta: number): Session {
    return seek(s, s.cursor + delta);
}

/** One playback tick; stops at the last frame instead of wrapping. */
export function tick(s: Session): Session {
    if (!s.playing) return s;
    if (s.cursor >= s.frameCount - 1) return { ...s, playing: false };
    return { ...s, cursor: s.cursor + 1 };
}

export function togglePlay(s: Session): Session {
    return { ...s, playing: !s.playing };
}

export function toggleOverlay(s: Session): Session {
    return { ...s, showOverlay: !s.showOverlay };
}

export function setFps(s: Session, fps: number): Session {
    return { ...s, fps: Math.min(Math.max(fps, 1), 240) };
}

export function beginRange(s: Session): Session {
    return { ...s, pendingStart: s.cursor };
}

export function cancelRange(s: Session): Session {
    return { ...s, pendingStart: null };
}

export function validRange(start: number, end: number, frameCount: number): boolean {
    return Number.isInteger(start) && Number.isInteger(end)
        && start <= end && start >= 0 && end < frameCount;
}

/** Close the pending range (or the cursor frame alone) with a verdict.
 * The range is normalized so marking backwards still yields start <= end. */
export function closeRange(s: Session, verdict: Verdict, reviewer = ""): { session: Session; decision: DecisionInput } | null {
    if (s.sequenceId === null || s.frameCount === 0) return null;
    const anchor = s.pendingStart ?? s.cursor;
    const start = Math.min(anchor, s.cursor);
    const end = Math.max(anchor, s.cursor);
    if (!validRange(start, end, s.frameCount)) return null;
    const decision: DecisionInput = { sequence_id: s.sequenceId, start, end, verdict, reviewer };
    return { session: { ...s, pendingStart: null }, decision };
}

/** A posted decision came back acknowledged from the service. */
export function acceptAck(s: Session, decision: Decision): Session {
    return { ...s, decisions: [...s.decisions, decision] };
}

/** A POST failed: keep the decision locally, flagged unsaved, for retry. */
export function holdUnsaved(s: Session, decision: DecisionInput): Session {
    return { ...s, unsaved: [...s.unsaved, decision] };
}

export function takeUnsaved(s: Session): { session: Session; retry: DecisionInput[] } {
    return { session: { ...s, unsaved: [] }, retry: s.unsaved };
}

export function replaceDecisions(s: Session, decisions: Decision[]): Session {
    return { ...s, decisions };
}
