import { Decision, DecisionInput, SequenceInfo } from "./types.js";

/** Typed client for the review service; the UI holds no authoritative state,
 * everything re-fetches from here. */
export class ReviewApi {
    constructor(private baseUrl: string = "") {}

    private async getJson<T>(path: string): Promise<T> {
        const resp = await fetch(this.baseUrl + path);
        if (!resp.ok) {
            throw new Error(`GET ${path}: ${resp.status} ${await resp.text()}`);
        }
        return (await resp.json()) as T;
    }

    sequences(): Promise<SequenceInfo[]> {
        return this.getJson("/api/sequences");
    }

    decisions(sequenceId: string): Promise<Decision[]> {
        return this.getJson(`/api/decisions?sequence=${encodeURIComponent(sequenceId)}`);
    }

    async postDecision(decision: DecisionInput): Promise<Decision> {
        const resp = await fetch(this.baseUrl + "/api/decisions", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(decision),
        });
        if (resp.status !== 201) {
            throw new Error(`POST /api/decisions: ${resp.status} ${await resp.text()}`);
        }
        return (await resp.json()) as Decision;
    }

    overlayUrl(sequenceId: string, frame: number): string {
        return `${this.baseUrl}/api/sequences/${encodeURIComponent(sequenceId)}/frames/${frame}/overlay.png`;
    }

    rawUrl(sequenceId: string, frame: number): string {
        return `${this.baseUrl}/api/sequences/${encodeURIComponent(sequenceId)}/frames/${frame}/raw.png`;
    }

    depthUrl(sequenceId: string, frame: number): string {
        return `${this.baseUrl}/api/sequences/${encodeURIComponent(sequenceId)}/frames/${frame}/depth.png`;
    }
}
