import { ReviewApi } from "./api.js";
import { actionForKey, KEY_HELP } from "./keys.js";
import * as st from "./state.js";
import { segments } from "./timeline.js";
import { DecisionInput, SequenceInfo } from "./types.js";

const api = new ReviewApi("");

let session = st.emptySession();
let sequences: SequenceInfo[] = [];
let playTimer: number | null = null;
let statusText = "";

const $ = (id: string) => document.getElementById(id)!;
const frameImg = () => $("frame") as HTMLImageElement;

function setStatus(text: string, kind: "ok" | "error" = "ok") {
    statusText = text;
    const el = $("status");
    el.textContent = text;
    el.className = kind === "error" ? "status error" : "status";
}

async function refreshSequences() {
    try {
        sequences = await api.sequences();
        renderSequenceList();
        setStatus(`${sequences.length} sequence(s)`);
    } catch (err) {
        setStatus(`service unreachable: ${err}`, "error");
    }
}

async function openSequence(info: SequenceInfo) {
    session = st.openSequence(session, info.id, info.frame_count);
    await refreshDecisions();
    render();
}

async function refreshDecisions() {
    if (!session.sequenceId) return;
    try {
        session = st.replaceDecisions(session, await api.decisions(session.sequenceId));
    } catch (err) {
        setStatus(`failed to fetch decisions: ${err}`, "error");
    }
}

async function submit(decision: DecisionInput) {
    try {
        const acked = await api.postDecision(decision);
        session = st.acceptAck(session, acked);
        setStatus(`saved ${decision.verdict} [${decision.start}, ${decision.end}]`);
    } catch (err) {
        session = st.holdUnsaved(session, decision);
        setStatus(`decision NOT saved (${session.unsaved.length} pending retry): ${err}`, "error");
    }
    render();
}

async function retryUnsaved() {
    const { session: cleared, retry } = st.takeUnsaved(session);
    session = cleared;
    for (const decision of retry) {
        await submit(decision);
    }
}

function applyPlayTimer() {
    if (playTimer !== null) {
        clearInterval(playTimer);
        playTimer = null;
    }
    if (session.playing) {
        playTimer = setInterval(() => {
            session = st.tick(session);
            if (!session.playing && playTimer !== null) {
                clearInterval(playTimer);
                playTimer = null;
            }
            render();
        }, 1000 / session.fps) as unknown as number;
    }
}

function onKey(event: KeyboardEvent) {
    if ((event.target as HTMLElement).tagName === "INPUT") return;
    const action = actionForKey(event.key, event.shiftKey);
    if (!action) return;
    event.preventDefault();
    switch (action.kind) {
        case "step":
            session = st.step(session, action.delta);
            break;
        case "seek-start":
            session = st.seek(session, 0);
            break;
        case "seek-end":
            session = st.seek(session, session.frameCount - 1);
            break;
        case "toggle-play":
            session = st.togglePlay(session);
            applyPlayTimer();
            break;
        case "toggle-overlay":
            session = st.toggleOverlay(session);
            break;
        case "begin-range":
            session = st.beginRange(session);
            break;
        case "close-range": {
            const closed = st.closeRange(session, action.verdict);
            if (closed) {
                session = closed.session;
                void submit(closed.decision);
            }
            break;
        }
        case "cancel-range":
            session = st.cancelRange(session);
            break;
        case "retry-unsaved":
            void retryUnsaved();
            break;
    }
    render();
}

function renderSequenceList() {
    const list = $("sequences");
    list.innerHTML = "";
    for (const info of sequences) {
        const item = document.createElement("li");
        item.textContent = `${info.id} (${info.frame_count}${info.labeled ? "" : ", unlabeled"})`;
        item.className = info.id === session.sequenceId ? "active" : "";
        item.onclick = () => void openSequence(info);
        list.appendChild(item);
    }
}

function renderTimeline() {
    const bar = $("timeline");
    bar.innerHTML = "";
    if (session.frameCount === 0) return;
    for (const seg of segments(session.decisions, session.frameCount)) {
        if (seg.mark === "none") continue;
        const div = document.createElement("div");
        div.className = `band ${seg.mark}`;
        div.style.left = `${(100 * seg.start) / session.frameCount}%`;
        div.style.width = `${(100 * (seg.end - seg.start + 1)) / session.frameCount}%`;
        bar.appendChild(div);
    }
    if (session.pendingStart !== null) {
        const lo = Math.min(session.pendingStart, session.cursor);
        const hi = Math.max(session.pendingStart, session.cursor);
        const div = document.createElement("div");
        div.className = "band pending";
        div.style.left = `${(100 * lo) / session.frameCount}%`;
        div.style.width = `${(100 * (hi - lo + 1)) / session.frameCount}%`;
        bar.appendChild(div);
    }
    const cursor = document.createElement("div");
    cursor.className = "cursor";
    cursor.style.left = `${(100 * session.cursor) / session.frameCount}%`;
    bar.appendChild(cursor);
}

function render() {
    if (session.sequenceId) {
        const url = session.showOverlay
            ? api.overlayUrl(session.sequenceId, session.cursor)
            : api.rawUrl(session.sequenceId, session.cursor);
        if (frameImg().src !== location.origin + url) frameImg().src = url;
        $("position").textContent =
            `${session.sequenceId}  frame ${session.cursor}/${session.frameCount - 1}` +
            (session.playing ? `  playing @${session.fps}fps` : "") +
            (session.pendingStart !== null ? `  marking from ${session.pendingStart}` : "") +
            (session.unsaved.length ? `  [${session.unsaved.length} UNSAVED]` : "");
    } else {
        $("position").textContent = "pick a sequence";
    }
    renderSequenceList();
    renderTimeline();
}

function init() {
    const fpsInput = $("fps") as HTMLInputElement;
    fpsInput.value = String(session.fps);
    fpsInput.onchange = () => {
        session = st.setFps(session, Number(fpsInput.value) || st.DEFAULT_FPS);
        applyPlayTimer();
        render();
    };
    const help = $("help");
    for (const [key, what] of KEY_HELP) {
        const row = document.createElement("div");
        row.innerHTML = `<kbd>${key}</kbd> ${what}`;
        help.appendChild(row);
    }
    document.addEventListener("keydown", onKey);
    $("timeline").addEventListener("click", (event) => {
        const bar = $("timeline").getBoundingClientRect();
        const frac = (event.clientX - bar.left) / bar.width;
        session = st.seek(session, Math.floor(frac * session.frameCount));
        render();
    });
    void refreshSequences();
    render();
}

document.addEventListener("DOMContentLoaded", init);
