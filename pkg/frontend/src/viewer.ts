import { BookmarkStore, KeyValueStore, MemoryStore } from "./bookmarks.js";
import { ServiceClient } from "./client.js";
import { clampOrbit, frameScene, orbitFromPosition, rotateOrbit, zoomOrbit } from "./orbit.js";
import { DEFAULT_RENDER_OPTIONS, RenderOptions, buildRenderRequest, requestsEqual } from "./requests.js";
import { PreviewScheduler } from "./scheduler.js";
import type { Bookmark, RenderRequest, ViewerState } from "./types.js";

export interface ViewerEvents {
  /** A full-quality frame should be displayed from this request. */
  onFullFrame?(req: RenderRequest): void;
  /** A preview frame finished. */
  onPreviewFrame?(req: RenderRequest, result: unknown): void;
  /** Connection or render failure worth surfacing. */
  onError?(message: string): void;
  onStateChange?(state: ViewerState): void;
}

/**
 * Replay-viewer behavior with every effect injected: steering produces a
 * stream of RenderRequests (previews while dragging, one full-quality
 * request on release), the scrubber changes only the time index, playback
 * advances time at a chosen rate, and bookmarks capture and restore the
 * exact request parameters.
 */
export class Viewer {
  state: ViewerState;
  timeline: number[] = [];
  connected = false;
  halfExtent = 2.0;

  /** Request whose frame is currently displayed, if any. */
  displayed: RenderRequest | null = null;

  readonly previews: PreviewScheduler;
  private readonly bookmarks: BookmarkStore;
  private dragging = false;

  constructor(
    private readonly client: ServiceClient,
    private readonly events: ViewerEvents = {},
    readonly options: RenderOptions = DEFAULT_RENDER_OPTIONS,
    storage: KeyValueStore = new MemoryStore(),
  ) {
    this.state = {
      orbit: frameScene(this.halfExtent),
      timeIndex: 0,
      playing: false,
      playbackFps: 10,
      quality: "full",
    };
    this.bookmarks = new BookmarkStore(storage);
    this.previews = new PreviewScheduler(
      (req, signal) => this.client.preview(req, signal),
      (req, result) => {
        this.displayed = req;
        this.events.onPreviewFrame?.(req, result);
      },
      () => this.events.onError?.("preview render failed; keeping last frame"),
    );
  }

  /** True when the shown frame no longer matches the current state. */
  get stale(): boolean {
    return this.displayed === null
      || !requestsEqual(this.displayed, this.currentRequest(this.displayed.quality));
  }

  currentRequest(quality: "full" | "preview" = "full"): RenderRequest {
    return buildRenderRequest(this.state, this.options, quality);
  }

  async connect(): Promise<void> {
    try {
      const info = await this.client.archive();
      this.timeline = [...info.timesteps].sort((a, b) => a - b);
      this.halfExtent = info.half_extent ?? this.halfExtent;
      this.state = {
        ...this.state,
        orbit: frameScene(this.halfExtent),
        timeIndex: this.timeline[0] ?? 0,
      };
      this.connected = true;
      this.events.onStateChange?.(this.state);
      if (this.timeline.length) {
        this.requestFull();
      }
    } catch (err) {
      this.connected = false;
      this.events.onError?.(`cannot reach render service: ${String(err)}`);
      throw err;
    }
  }

  // -- steering ------------------------------------------------------------

  beginDrag(): void {
    this.dragging = true;
  }

  dragBy(dAzimuth: number, dElevation: number): void {
    this.state = { ...this.state, orbit: rotateOrbit(this.state.orbit, dAzimuth, dElevation) };
    this.events.onStateChange?.(this.state);
    this.previews.submit(this.currentRequest("preview"));
  }

  zoomBy(factor: number): void {
    this.state = { ...this.state, orbit: zoomOrbit(this.state.orbit, factor) };
    this.events.onStateChange?.(this.state);
    if (this.dragging) {
      this.previews.submit(this.currentRequest("preview"));
    } else {
      this.requestFull();
    }
  }

  endDrag(): void {
    if (!this.dragging) return;
    this.dragging = false;
    this.previews.cancel();
    this.requestFull();
  }

  /** Scrubbing moves through archived time with the camera untouched. */
  scrub(timeIndex: number): void {
    if (!this.timeline.includes(timeIndex)) {
      this.events.onError?.(`time ${timeIndex} is not archived`);
      return;
    }
    this.state = { ...this.state, timeIndex };
    this.events.onStateChange?.(this.state);
    this.requestFull();
  }

  // -- playback ---------------------------------------------------------------

  play(fps?: number): void {
    this.state = { ...this.state, playing: true,
                   playbackFps: fps ?? this.state.playbackFps };
    this.events.onStateChange?.(this.state);
  }

  stop(): void {
    this.state = { ...this.state, playing: false };
    this.events.onStateChange?.(this.state);
  }

  /** Advance one frame of playback (the UI drives this at playbackFps). */
  tick(): void {
    if (!this.state.playing || this.timeline.length === 0) return;
    const at = this.timeline.indexOf(this.state.timeIndex);
    const next = this.timeline[(at + 1) % this.timeline.length];
    this.state = { ...this.state, timeIndex: next };
    this.events.onStateChange?.(this.state);
    this.requestFull();
  }

  // -- bookmarks ----------------------------------------------------------------

  bookmark(name: string): Bookmark {
    return this.bookmarks.add(name, this.state.orbit, this.state.timeIndex);
  }

  listBookmarks(): Bookmark[] {
    return this.bookmarks.list();
  }

  /** Restore a saved pose and time; unknown or stale times leave state alone. */
  recall(name: string): boolean {
    const mark = this.bookmarks.get(name);
    if (!mark) {
      this.events.onError?.(`no bookmark named ${name}`);
      return false;
    }
    if (!this.timeline.includes(mark.timeIndex)) {
      this.events.onError?.(`bookmark ${name} points at time ${mark.timeIndex}, `
        + "which is no longer archived");
      return false;
    }
    this.state = { ...this.state, orbit: clampOrbit(mark.orbit), timeIndex: mark.timeIndex };
    this.events.onStateChange?.(this.state);
    this.requestFull();
    return true;
  }

  // -- helpers ---------------------------------------------------------------------

  /** Round-trip used by the orbit-idempotence contract. */
  orbitRoundTrip(): ViewerState["orbit"] {
    const req = this.currentRequest();
    return orbitFromPosition(req.camera.position, req.camera.look_at);
  }

  private requestFull(): void {
    const req = this.currentRequest("full");
    this.displayed = req;
    this.events.onFullFrame?.(req);
  }
}
