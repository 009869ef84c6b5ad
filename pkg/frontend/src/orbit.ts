import type { OrbitState, Vec3 } from "./types.js";

const MAX_ELEVATION = (89 * Math.PI) / 180;
const MIN_DISTANCE = 1e-3;

export function clampOrbit(state: OrbitState): OrbitState {
  return {
    azimuth: state.azimuth,
    elevation: Math.min(MAX_ELEVATION, Math.max(-MAX_ELEVATION, state.elevation)),
    distance: Math.max(MIN_DISTANCE, state.distance),
    target: state.target,
  };
}

/** Camera position for an orbit state (Z-up world). */
export function orbitPosition(state: OrbitState): Vec3 {
  const { azimuth: az, elevation: el, distance: d, target: t } = state;
  return [
    t[0] + d * Math.cos(el) * Math.cos(az),
    t[1] + d * Math.cos(el) * Math.sin(az),
    t[2] + d * Math.sin(el),
  ];
}

/** Recover the orbit state that places a camera at `position`. */
export function orbitFromPosition(position: Vec3, target: Vec3): OrbitState {
  const dx = position[0] - target[0];
  const dy = position[1] - target[1];
  const dz = position[2] - target[2];
  const distance = Math.hypot(dx, dy, dz);
  return clampOrbit({
    azimuth: Math.atan2(dy, dx),
    elevation: Math.asin(dz / distance),
    distance,
    target,
  });
}

export function rotateOrbit(state: OrbitState, dAzimuth: number, dElevation: number): OrbitState {
  return clampOrbit({ ...state, azimuth: state.azimuth + dAzimuth, elevation: state.elevation + dElevation });
}

export function zoomOrbit(state: OrbitState, factor: number): OrbitState {
  return clampOrbit({ ...state, distance: state.distance * factor });
}

/** Initial framing: back far enough that the scene cube fits the view. */
export function frameScene(halfExtent: number): OrbitState {
  return clampOrbit({
    azimuth: Math.PI / 4,
    elevation: Math.PI / 6,
    distance: 3.5 * halfExtent,
    target: [0, 0, 0],
  });
}
