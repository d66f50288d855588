import { Decision } from "./types.js";

export type FrameMark = "none" | "accept" | "reject";

/** Per-frame verdict for the timeline strip. Reject beats accept on overlap,
 * mirroring how the dataset filter treats the same decisions. */
export function frameMarks(decisions: Decision[], frameCount: number): FrameMark[] {
    const marks: FrameMark[] = new Array(frameCount).fill("none");
    for (const d of decisions) {
        if (d.verdict !== "accept") continue;
        for (let i = Math.max(0, d.start); i <= Math.min(frameCount - 1, d.end); i++) {
            marks[i] = "accept";
        }
    }
    for (const d of decisions) {
        if (d.verdict !== "reject") continue;
        for (let i = Math.max(0, d.start); i <= Math.min(frameCount - 1, d.end); i++) {
            marks[i] = "reject";
        }
    }
    return marks;
}

export interface Segment {
    start: number;
    end: number; // inclusive
    mark: FrameMark;
}

/** Merge equal-mark runs into segments for rendering. */
export function segments(decisions: Decision[], frameCount: number): Segment[] {
    const marks = frameMarks(decisions, frameCount);
    const out: Segment[] = [];
    for (let i = 0; i < marks.length; i++) {
        const last = out[out.length - 1];
        if (last && last.mark === marks[i] && last.end === i - 1) {
            last.end = i;
        } else {
            out.push({ start: i, end: i, mark: marks[i] });
        }
    }
    return out;
}
