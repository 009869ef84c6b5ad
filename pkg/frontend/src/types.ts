export type Vec3 = [number, number, number];

export type Quality = "full" | "preview";

/** Body of POST /render and the parameter set of GET /render. */
export interface RenderRequest {
  time_index: number;
  width: number;
  height: number;
  fov_x: number;
  samples: number;
  quality: Quality;
  camera: {
    position: Vec3;
    look_at: Vec3;
    up: Vec3;
  };
}

/** Response of GET /archive. */
export interface ArchiveInfo {
  timesteps: number[];
  timestep_count: number;
  parameter_count: number;
  half_extent: number;
  scene_scale: number;
  config_digest: string;
}

export interface OrbitState {
  /** radians around +Z, measured from +X */
  azimuth: number;
  /** radians above the horizontal plane, clamped to (-89deg, 89deg) */
  elevation: number;
  distance: number;
  target: Vec3;
}

export interface ViewerState {
  orbit: OrbitState;
  timeIndex: number;
  playing: boolean;
  playbackFps: number;
  quality: Quality;
}

export interface Bookmark {
  name: string;
  orbit: OrbitState;
  timeIndex: number;
}
