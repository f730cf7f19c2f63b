/** HTTP client for the study service; the only coupling to the backend. */

import type { RatingBody, RatingTransport, SessionSnapshot } from "./controller";

export interface MethodSummary {
  mean: number;
  count: number;
  ci: [number, number] | null;
}

export interface StudySummary {
  methods: Record<string, MethodSummary>;
  total_ratings: number;
}

export class StudyApi implements RatingTransport {
  constructor(readonly baseUrl: string = "") {}

  async startSession(raterId?: string): Promise<SessionSnapshot> {
    const query = raterId ? `?rater_id=${encodeURIComponent(raterId)}` : "";
    return this.getJson<SessionSnapshot>(`/session${query}`);
  }

  async submitRating(body: RatingBody): Promise<void> {
    const res = await fetch(`${this.baseUrl}/rating`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) {
      throw new Error(await rejectionMessage(res));
    }
  }

  async fetchSummary(): Promise<StudySummary> {
    return this.getJson<StudySummary>("/summary");
  }

  audioUrl(path: string): string {
    return this.baseUrl + path;
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) {
      throw new Error(`GET ${path} failed with HTTP ${res.status}`);
    }
    return (await res.json()) as T;
  }
}

async function rejectionMessage(res: Response): Promise<string> {
  try {
    const data = (await res.json()) as { detail?: unknown };
    if (data.detail !== undefined) {
      return typeof data.detail === "string" ? data.detail : JSON.stringify(data.detail);
    }
  } catch {
    // non-JSON body; fall through to the status line
  }
  return `rating rejected: HTTP ${res.status}`;
}
