/**
 * Viewer state and the pure update rules the UI applies to it.
 *
 * Everything here is deterministic and DOM-free so the invariants
 * (elevation strictly inside (-90, 90) degrees, radius positive,
 * t in [0, 1], playback wrapping) are directly unit-testable.
 */

import type { OrbitParams, Vec3 } from "./math.js";

// Strict interior of (-90, 90) degrees; at the poles the up vector would
// be parallel to the view direction and the pose degenerates.
export const ELEVATION_LIMIT = Math.PI / 2 - 1e-4;
export const MIN_RADIUS = 1e-3;

export type ConnectionStatus =
  | "connecting"
  | "connected"
  | "reconnecting"
  | "failed"
  | "closed";

export interface ViewerState {
  orbit: OrbitParams;
  center: Vec3;
  time: number;
  playing: boolean;
  /** Playback rate in scene-time units per wall second. */
  speed: number;
  connection: ConnectionStatus;
  fps: number;
}

export function initialState(): ViewerState {
  return {
    orbit: { azimuth: 0, elevation: 0, radius: 4 },
    center: [0, 0, 0],
    time: 0,
    playing: false,
    speed: 0.25,
    connection: "connecting",
    fps: 0,
  };
}

export function clampElevation(elevation: number): number {
  return Math.min(ELEVATION_LIMIT, Math.max(-ELEVATION_LIMIT, elevation));
}

export function clampTime(t: number): number {
  return Math.min(1, Math.max(0, t));
}

/** Rotate the orbit by a drag gesture, in radians per axis. */
export function applyDrag(state: ViewerState, dAzimuth: number, dElevation: number): void {
  state.orbit.azimuth += dAzimuth;
  state.orbit.elevation = clampElevation(state.orbit.elevation + dElevation);
}

/** Dolly in or out by a multiplicative factor (wheel gesture). */
export function applyZoom(state: ViewerState, factor: number): void {
  state.orbit.radius = Math.max(MIN_RADIUS, state.orbit.radius * factor);
}

export function applyScrub(state: ViewerState, t: number): void {
  state.time = clampTime(t);
}

/**
 * Advance playback by dt wall seconds. At speed 1 scene time moves
 * linearly with wall time and wraps at 1.
 */
export function advancePlayback(state: ViewerState, dt: number): void {
  if (!state.playing) return;
  let t = state.time + state.speed * dt;
  t -= Math.floor(t);
  state.time = t;
}

/** Rolling frames-per-second estimate over a short window of displays. */
export class FpsMeter {
  private times: number[] = [];

  constructor(private windowSize = 30) {}

  /** Record one displayed frame at the given timestamp (seconds). */
  tick(now: number): void {
    this.times.push(now);
    if (this.times.length > this.windowSize) this.times.shift();
  }

  value(): number {
    if (this.times.length < 2) return 0;
    const first = this.times[0] as number;
    const last = this.times[this.times.length - 1] as number;
    const span = last - first;
    if (span <= 0) return 0;
    return (this.times.length - 1) / span;
  }

  reset(): void {
    this.times.length = 0;
  }
}
