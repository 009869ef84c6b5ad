import type { RenderRequest } from "./types.js";

export type PreviewSender = (req: RenderRequest, signal: AbortSignal) => Promise<unknown>;

/**
 * Latest-wins preview pipeline: at most one request is ever in flight.
 *
 * Submissions while busy replace the queued candidate (intermediate camera
 * states are never sent); when the active request settles, the newest
 * candidate goes out immediately, so the issue rate tracks the service's
 * completion rate with no added delay.
 */
export class PreviewScheduler {
  private active: AbortController | null = null;
  private queued: RenderRequest | null = null;
  private sent = 0;
  private settled = 0;

  constructor(
    private readonly send: PreviewSender,
    private readonly onResult: (req: RenderRequest, result: unknown) => void,
    private readonly onError: (req: RenderRequest, error: unknown) => void = () => {},
  ) {}

  get inFlight(): number {
    return this.active ? 1 : 0;
  }

  get issued(): number {
    return this.sent;
  }

  submit(req: RenderRequest): void {
    if (this.active) {
      this.queued = req;
      return;
    }
    this.dispatch(req);
  }

  /** Drop the queued candidate and abort any in-flight request. */
  cancel(): void {
    this.queued = null;
    this.active?.abort();
    this.active = null;
  }

  /** Resolves once nothing is running or queued (test convenience). */
  async idle(): Promise<void> {
    while (this.active || this.queued) {
      await new Promise((r) => setTimeout(r, 0));
    }
  }

  private dispatch(req: RenderRequest): void {
    const controller = new AbortController();
    this.active = controller;
    this.sent += 1;
    this.send(req, controller.signal)
      .then((result) => {
        if (!controller.signal.aborted) {
          this.onResult(req, result);
        }
      })
      .catch((error) => {
        if (!controller.signal.aborted) {
          this.onError(req, error);
        }
      })
      .finally(() => {
        this.settled += 1;
        if (this.active === controller) {
          this.active = null;
        }
        const next = this.queued;
        this.queued = null;
        if (next && !this.active) {
          this.dispatch(next);
        }
      });
  }
}
