/** Keyboard-first bindings: triage speed is the whole point of this tool. */
export type Action =
    | { kind: "step"; delta: number }
    | { kind: "seek-start" }
    | { kind: "seek-end" }
    | { kind: "toggle-play" }
    | { kind: "toggle-overlay" }
    | { kind: "begin-range" }
    | { kind: "close-range"; verdict: "accept" | "reject" }
    | { kind: "cancel-range" }
    | { kind: "retry-unsaved" };

export function actionForKey(key: string, shift: boolean): Action | null {
    switch (key) {
        case "ArrowLeft":
            return { kind: "step", delta: shift ? -10 : -1 };
        case "ArrowRight":
            return { kind: "step", delta: shift ? 10 : 1 };
        case "Home":
            return { kind: "seek-start" };
        case "End":
            return { kind: "seek-end" };
        case " ":
            return { kind: "toggle-play" };
        case "o":
            return { kind: "toggle-overlay" };
        case "m":
            return { kind: "begin-range" };
        case "a":
            return { kind: "close-range", verdict: "accept" };
        case "x":
            return { kind: "close-range", verdict: "reject" };
        case "Escape":
            return { kind: "cancel-range" };
        case "r":
            return { kind: "retry-unsaved" };
        default:
            return null;
    }
}

export const KEY_HELP = [
    ["←/→", "step (shift: ±10)"],
    ["space", "play/pause"],
    ["o", "overlay on/off"],
    ["m", "mark range start"],
    ["x", "reject range (or current frame)"],
    ["a", "accept range (or current frame)"],
    ["esc", "cancel pending range"],
    ["r", "retry unsaved decisions"],
] as const;
