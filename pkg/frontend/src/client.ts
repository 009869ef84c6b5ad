import { renderUrl } from "./requests.js";
import type { ArchiveInfo, RenderRequest } from "./types.js";

export type FetchLike = (url: string, init?: { signal?: AbortSignal }) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
  blob(): Promise<unknown>;
}>;

/** Thin HTTP wrapper; fetch is injectable so tests can mock the service. */
export class ServiceClient {
  constructor(
    readonly base: string,
    private readonly fetchImpl: FetchLike = fetch as unknown as FetchLike,
  ) {}

  async archive(): Promise<ArchiveInfo> {
    const res = await this.fetchImpl(`${this.base.replace(/\/$/, "")}/archive`);
    if (!res.ok) {
      throw new Error(`GET /archive failed with ${res.status}`);
    }
    return (await res.json()) as ArchiveInfo;
  }

  /** Preview frames arrive as abortable blob fetches. */
  async preview(req: RenderRequest, signal: AbortSignal): Promise<unknown> {
    const res = await this.fetchImpl(renderUrl(this.base, req), { signal });
    if (!res.ok) {
      throw new Error(`render failed with ${res.status}`);
    }
    return res.blob();
  }

  /** Full-quality frames load through a plain <img> URL. */
  frameUrl(req: RenderRequest): string {
    return renderUrl(this.base, req);
  }
}
