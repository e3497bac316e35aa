/**
 * Camera math for the orbit viewer.
 *
 * Poses are camera-to-world 4x4 matrices stored row-major as 16 numbers,
 * matching the render service's request schema. The camera frame follows
 * the service convention: column 0 is screen-right, column 1 is
 * screen-down, column 2 is the viewing direction, translation is the eye.
 * World up is +Z.
 */

export type Vec3 = readonly [number, number, number];

export interface OrbitParams {
  /** Angle in the XY plane, radians; 0 puts the camera on the +X axis. */
  azimuth: number;
  /** Angle above the XY plane, radians; must stay inside (-pi/2, pi/2). */
  elevation: number;
  /** Distance from the orbit center; must be positive. */
  radius: number;
}

export function add(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

export function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  if (n < 1e-12) throw new Error("cannot normalize a zero-length vector");
  return [a[0] / n, a[1] / n, a[2] / n];
}

/** Camera-to-world pose looking from eye toward target; up fixes the roll. */
export function lookAtPose(eye: Vec3, target: Vec3, up: Vec3): number[] {
  const forward = normalize(sub(target, eye));
  const rightRaw = cross(forward, up);
  if (norm(rightRaw) < 1e-12) {
    throw new Error("up vector is parallel to the view direction");
  }
  const right = normalize(rightRaw);
  const down = cross(forward, right);
  // prettier-ignore
  return [
    right[0], down[0], forward[0], eye[0],
    right[1], down[1], forward[1], eye[1],
    right[2], down[2], forward[2], eye[2],
    0, 0, 0, 1,
  ];
}

/** Eye position for orbit parameters around a center, world up +Z. */
export function orbitEye(orbit: OrbitParams, center: Vec3): Vec3 {
  const ce = Math.cos(orbit.elevation);
  const offset: Vec3 = [
    orbit.radius * ce * Math.cos(orbit.azimuth),
    orbit.radius * ce * Math.sin(orbit.azimuth),
    orbit.radius * Math.sin(orbit.elevation),
  ];
  return add(center, offset);
}

/** Pose on the orbit sphere looking at the center. */
export function orbitPose(orbit: OrbitParams, center: Vec3): number[] {
  return lookAtPose(orbitEye(orbit, center), center, [0, 0, 1]);
}

/**
 * True when the matrix is a rigid camera pose: orthonormal rotation block,
 * affine last row, every entry finite. Checked before any pose leaves the
 * client, since the service rejects non-rigid poses.
 */
export function isRigidPose(pose: readonly number[], tol = 1e-6): boolean {
  if (pose.length !== 16) return false;
  if (!pose.every(Number.isFinite)) return false;
  const lastRow = [pose[12], pose[13], pose[14], pose[15]];
  const affine = [0, 0, 0, 1];
  for (let i = 0; i < 4; i++) {
    if (Math.abs((lastRow[i] as number) - (affine[i] as number)) > tol) return false;
  }
  // R R^T == I, checked entry by entry on the 3x3 block
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      let dot = 0;
      for (let k = 0; k < 3; k++) {
        dot += (pose[i * 4 + k] as number) * (pose[j * 4 + k] as number);
      }
      if (Math.abs(dot - (i === j ? 1 : 0)) > tol) return false;
    }
  }
  return true;
}
