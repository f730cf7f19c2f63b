/** Progress persistence on top of any localStorage-shaped backend, so an
 * interrupted session resumes with its unsubmitted scores intact. */

import type { ProgressStore, SavedProgress } from "./controller";

export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const RATER_KEY = "study-ui.rater";

export class LocalProgressStore implements ProgressStore {
  private readonly key: string;

  constructor(raterId: string, private readonly backend: KeyValueStore) {
    this.key = `study-ui.progress.${raterId}`;
  }

  load(): SavedProgress | null {
    const raw = this.backend.getItem(this.key);
    if (raw === null) {
      return null;
    }
    try {
      const parsed = JSON.parse(raw) as SavedProgress;
      if (typeof parsed.rater_id !== "string" || typeof parsed.entries !== "object") {
        return null;
      }
      return parsed;
    } catch {
      return null; // corrupted progress is discarded, never trusted
    }
  }

  save(progress: SavedProgress): void {
    this.backend.setItem(this.key, JSON.stringify(progress));
  }

  clear(): void {
    this.backend.removeItem(this.key);
  }
}

export function loadRaterId(backend: KeyValueStore): string | null {
  return backend.getItem(RATER_KEY);
}

export function saveRaterId(backend: KeyValueStore, raterId: string): void {
  backend.setItem(RATER_KEY, raterId);
}
