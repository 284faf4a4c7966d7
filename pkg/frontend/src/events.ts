// Long-poll loop over GET /v1/events. One outstanding request at a
// time; the cursor only moves forward, so a handler sees every event
// exactly once in log order.

import type { EventRecord, StudioApi } from "./api.js";

const wait = (ms: number) =>
  new Promise<void>(resolve => setTimeout(resolve, ms));

export interface FeedOptions {
  timeoutS?: number;
  backoffMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

export class EventFeed {
  private readonly api: StudioApi;
  private readonly onEvent: (e: EventRecord) => void;
  private readonly timeoutS: number;
  private readonly backoffMs: number;
  private readonly sleep: (ms: number) => Promise<void>;
  private running = false;
  cursor = 0;

  constructor(api: StudioApi, onEvent: (e: EventRecord) => void,
              opts: FeedOptions = {}) {
    this.api = api;
    this.onEvent = onEvent;
    this.timeoutS = opts.timeoutS ?? 25;
    this.backoffMs = opts.backoffMs ?? 1000;
    this.sleep = opts.sleep ?? wait;
  }

  /** One poll: dispatch whatever is pending, return the next cursor. */
  async pollOnce(): Promise<number> {
    const batch = await this.api.pollEvents(this.cursor, this.timeoutS);
    for (const event of batch.events) {
      this.cursor = event.seq;
      this.onEvent(event);
    }
    this.cursor = Math.max(this.cursor, batch.next);
    return this.cursor;
  }

  start(after = 0): void {
    if (this.running) return;
    this.cursor = after;
    this.running = true;
    void this.loop();
  }

  stop(): void {
    this.running = false;
  }

  private async loop(): Promise<void> {
    while (this.running) {
      try {
        await this.pollOnce();
      } catch {
        await this.sleep(this.backoffMs);
      }
    }
  }
}
