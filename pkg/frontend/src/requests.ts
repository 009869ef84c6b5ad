import { orbitPosition } from "./orbit.js";
import type { Quality, RenderRequest, ViewerState } from "./types.js";

export interface RenderOptions {
  width: number;
  height: number;
  fovX: number;
  samples: number;
}

export const DEFAULT_RENDER_OPTIONS: RenderOptions = {
  width: 256,
  height: 256,
  fovX: 0.6911,
  samples: 64,
};

/** The orbit state converted to the service's look-at camera form. */
export function buildRenderRequest(
  state: ViewerState,
  opts: RenderOptions,
  quality: Quality,
): RenderRequest {
  return {
    time_index: state.timeIndex,
    width: opts.width,
    height: opts.height,
    fov_x: opts.fovX,
    samples: opts.samples,
    quality,
    camera: {
      position: orbitPosition(state.orbit),
      look_at: [...state.orbit.target] as [number, number, number],
      up: [0, 0, 1],
    },
  };
}

/** GET /render URL carrying the same request (usable as an <img> src). */
export function renderUrl(base: string, req: RenderRequest): string {
  const p = new URLSearchParams();
  p.set("time", String(req.time_index));
  p.set("width", String(req.width));
  p.set("height", String(req.height));
  p.set("fov_x", String(req.fov_x));
  p.set("samples", String(req.samples));
  p.set("quality", req.quality);
  p.set("position", req.camera.position.join(","));
  p.set("look_at", req.camera.look_at.join(","));
  p.set("up", req.camera.up.join(","));
  return `${base.replace(/\/$/, "")}/render?${p.toString()}`;
}

export function requestsEqual(a: RenderRequest, b: RenderRequest): boolean {
  return JSON.stringify(a) === JSON.stringify(b);
}
