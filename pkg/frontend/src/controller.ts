/** Session state machine for the listening study, independent of the DOM.
 *
 * Guards enforced here, mirroring the server's validation:
 *  - a stimulus cannot be submitted until its audio has been played once;
 *  - every score leaving the controller lies in [1, 100];
 *  - one user submit action issues at most one POST (in-flight and
 *    already-submitted stimuli reject further attempts).
 */

export interface StimulusInfo {
  stimulus_id: string;
  method_label: string;
  audio: Record<string, string>;
}

export interface SessionSnapshot {
  rater_id: string;
  stimuli: StimulusInfo[];
}

export interface RatingBody {
  rater_id: string;
  stimulus_id: string;
  method_label: string;
  score: number;
}

export interface RatingTransport {
  /** Resolves on acceptance; throws with a human-readable message on rejection. */
  submitRating(body: RatingBody): Promise<void>;
}

export interface SavedEntry {
  score: number;
  played: boolean;
  submitted: boolean;
}

export interface SavedProgress {
  rater_id: string;
  entries: Record<string, SavedEntry>;
}

export interface ProgressStore {
  load(): SavedProgress | null;
  save(progress: SavedProgress): void;
  clear(): void;
}

export type StimulusStatus = "pending" | "submitting" | "submitted";

export interface SubmitResult {
  accepted: boolean;
  reason?: string;
}

export interface Progress {
  submitted: number;
  total: number;
  fraction: number;
}

export const DEFAULT_SCORE = 50;

export function clampScore(value: number): number {
  if (!Number.isFinite(value)) {
    return DEFAULT_SCORE;
  }
  return Math.min(100, Math.max(1, Math.round(value)));
}

interface Entry {
  info: StimulusInfo;
  score: number;
  played: boolean;
  status: StimulusStatus;
  error: string | null;
}

export class SessionController {
  readonly raterId: string;
  private readonly order: string[] = [];
  private readonly entries = new Map<string, Entry>();

  constructor(
    session: SessionSnapshot,
    private readonly transport: RatingTransport,
    private readonly store: ProgressStore | null = null,
  ) {
    this.raterId = session.rater_id;
    for (const info of session.stimuli) {
      this.order.push(info.stimulus_id);
      this.entries.set(info.stimulus_id, {
        info,
        score: DEFAULT_SCORE,
        played: false,
        status: "pending",
        error: null,
      });
    }
    this.restore();
  }

  stimulusIds(): string[] {
    return [...this.order];
  }

  info(stimulusId: string): StimulusInfo {
    return this.require(stimulusId).info;
  }

  score(stimulusId: string): number {
    return this.require(stimulusId).score;
  }

  played(stimulusId: string): boolean {
    return this.require(stimulusId).played;
  }

  status(stimulusId: string): StimulusStatus {
    return this.require(stimulusId).status;
  }

  errorMessage(stimulusId: string): string | null {
    return this.require(stimulusId).error;
  }

  setScore(stimulusId: string, value: number): void {
    const entry = this.require(stimulusId);
    if (!Number.isFinite(value) || entry.status !== "pending") {
      return;
    }
    entry.score = clampScore(value);
    this.persist();
  }

  markPlayed(stimulusId: string): void {
    const entry = this.require(stimulusId);
    if (!entry.played) {
      entry.played = true;
      this.persist();
    }
  }

  canSubmit(stimulusId: string): boolean {
    const entry = this.require(stimulusId);
    return entry.played && entry.status === "pending";
  }

  async submit(stimulusId: string): Promise<SubmitResult> {
    const entry = this.require(stimulusId);
    if (entry.status === "submitted") {
      return { accepted: false, reason: "already submitted" };
    }
    if (entry.status === "submitting") {
      return { accepted: false, reason: "submission already in flight" };
    }
    if (!entry.played) {
      return { accepted: false, reason: "play the audio before rating it" };
    }
    entry.status = "submitting";
    entry.error = null;
    const body: RatingBody = {
      rater_id: this.raterId,
      stimulus_id: stimulusId,
      method_label: entry.info.method_label,
      score: clampScore(entry.score),
    };
    try {
      await this.transport.submitRating(body);
    } catch (err) {
      entry.status = "pending";
      entry.error = err instanceof Error ? err.message : String(err);
      this.persist();
      return { accepted: false, reason: entry.error };
    }
    entry.status = "submitted";
    this.persist();
    return { accepted: true };
  }

  progress(): Progress {
    const total = this.order.length;
    let submitted = 0;
    for (const entry of this.entries.values()) {
      if (entry.status === "submitted") {
        submitted += 1;
      }
    }
    return { submitted, total, fraction: total === 0 ? 0 : submitted / total };
  }

  isComplete(): boolean {
    const { submitted, total } = this.progress();
    return total > 0 && submitted === total;
  }

  private require(stimulusId: string): Entry {
    const entry = this.entries.get(stimulusId);
    if (!entry) {
      throw new Error(`unknown stimulus: ${stimulusId}`);
    }
    return entry;
  }

  private restore(): void {
    const saved = this.store?.load();
    if (!saved || saved.rater_id !== this.raterId) {
      return;
    }
    for (const [id, savedEntry] of Object.entries(saved.entries)) {
      const entry = this.entries.get(id);
      if (!entry) {
        continue; // stimulus no longer in the manifest
      }
      entry.score = clampScore(savedEntry.score);
      entry.played = Boolean(savedEntry.played);
      entry.status = savedEntry.submitted ? "submitted" : "pending";
    }
  }

  private persist(): void {
    if (!this.store) {
      return;
    }
    const entries: Record<string, SavedEntry> = {};
    for (const [id, entry] of this.entries) {
      entries[id] = {
        score: entry.score,
        played: entry.played,
        submitted: entry.status === "submitted",
      };
    }
    this.store.save({ rater_id: this.raterId, entries });
  }
}
