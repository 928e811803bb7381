// Rating session state machine. Drives the API client through the strict
// one-image-at-a-time protocol and exposes a snapshot for the view layer.
// The server is authoritative throughout: on any client/server divergence the
// machine refetches the current item instead of trusting local history.

import { ApiError, RatingApi, RatingItem, deriveSessionId } from "./api.js";

export const MIN_SCORE = 0;
export const MAX_SCORE = 100;

export type Phase =
  | "idle"
  | "starting"
  | "resumable"
  | "rating"
  | "submitting"
  | "complete"
  | "failed";

export interface Snapshot {
  phase: Phase;
  criticId: string;
  bundleId: string;
  rated: number;
  total: number;
  item: RatingItem | null;
  pendingScore: number | null;
  error: string | null;
}

export type Listener = (snapshot: Snapshot) => void;

export function validateScore(score: number): string | null {
  if (!Number.isFinite(score)) return "score must be a finite number";
  if (score < MIN_SCORE || score > MAX_SCORE) {
    return `score must be between ${MIN_SCORE} and ${MAX_SCORE}`;
  }
  return null;
}

export class RatingSession {
  private readonly api: RatingApi;
  private readonly criticId: string;
  private readonly bundleId: string;
  private readonly listeners: Listener[] = [];

  private phase: Phase = "idle";
  private sessionId = "";
  private rated = 0;
  private total = 0;
  private item: RatingItem | null = null;
  private pendingScore: number | null = null;
  private error: string | null = null;

  constructor(api: RatingApi, criticId: string, bundleId: string) {
    this.api = api;
    this.criticId = criticId;
    this.bundleId = bundleId;
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  snapshot(): Snapshot {
    return {
      phase: this.phase,
      criticId: this.criticId,
      bundleId: this.bundleId,
      rated: this.rated,
      total: this.total,
      item: this.item,
      pendingScore: this.pendingScore,
      error: this.error,
    };
  }

  private emit(): void {
    const snap = this.snapshot();
    for (const listener of this.listeners) listener(snap);
  }

  private fail(err: unknown): void {
    this.phase = "failed";
    this.error = err instanceof Error ? err.message : String(err);
    this.emit();
  }

  private finish(): void {
    this.phase = "complete";
    this.item = null;
    this.pendingScore = null;
    this.error = null;
    this.emit();
  }

  async start(): Promise<void> {
    if (this.phase !== "idle") throw new Error(`cannot start from phase ${this.phase}`);
    this.phase = "starting";
    this.emit();
    try {
      const info = await this.api.createSession(this.criticId, this.bundleId);
      this.sessionId = info.session_id;
      this.rated = info.rated;
      this.total = info.total;
      await this.advance();
    } catch (err) {
      if (err instanceof ApiError && err.errorClass === "DuplicateSession") {
        // an earlier session exists; let the critic pick up where it stopped
        this.phase = "resumable";
        this.error = err.message;
        this.emit();
        return;
      }
      this.fail(err);
    }
  }

  // rejoin an existing session: ids are deterministic, so no lookup is needed
  async resume(): Promise<void> {
    if (this.phase !== "resumable") throw new Error(`cannot resume from phase ${this.phase}`);
    this.phase = "starting";
    this.error = null;
    this.emit();
    try {
      this.sessionId = await deriveSessionId(this.criticId, this.bundleId);
      await this.refresh();
    } catch (err) {
      this.fail(err);
    }
  }

  private async advance(): Promise<void> {
    if (this.rated >= this.total) {
      this.finish();
      return;
    }
    await this.refresh();
  }

  // fetch the authoritative current item; a SessionComplete answer means some
  // other client already finished, which is success, not a fault
  private async refresh(): Promise<void> {
    let item: RatingItem;
    try {
      item = await this.api.nextItem(this.sessionId);
    } catch (err) {
      if (err instanceof ApiError && err.errorClass === "SessionComplete") {
        this.finish();
        return;
      }
      throw err;
    }
    this.item = item;
    this.rated = item.rated;
    this.total = item.total;
    this.phase = "rating";
    this.pendingScore = null;
    this.error = null;
    this.emit();
  }

  async submit(score: number): Promise<void> {
    if (this.phase !== "rating" || this.item === null) {
      throw new Error(`cannot submit in phase ${this.phase}`);
    }
    const invalid = validateScore(score);
    if (invalid !== null) {
      // out-of-range input stays on the current image, session keeps going
      this.error = invalid;
      this.emit();
      return;
    }
    this.phase = "submitting";
    this.pendingScore = score;
    this.error = null;
    this.emit();
    try {
      const ack = await this.api.submitScore(this.sessionId, this.item.image_id, score);
      this.rated = ack.rated;
      this.total = ack.total;
      this.pendingScore = null;
      await this.advance();
    } catch (err) {
      if (err instanceof ApiError && err.errorClass === "SessionComplete") {
        this.finish();
        return;
      }
      if (err instanceof ApiError && err.errorClass === "OutOfOrderSubmission") {
        // stale cursor; drop the pending score and refetch the real item
        this.pendingScore = null;
        try {
          await this.refresh();
        } catch (inner) {
          this.fail(inner);
        }
        return;
      }
      if (err instanceof ApiError) {
        this.fail(err);
        return;
      }
      // transport failure: the score stays pending so the critic can retry,
      // and the next attempt resolves any silent ack via OutOfOrderSubmission
      this.phase = "rating";
      this.error = err instanceof Error ? err.message : String(err);
      this.emit();
    }
  }

  currentImageUrl(): string | null {
    return this.item === null ? null : this.api.imageUrl(this.item);
  }
}
