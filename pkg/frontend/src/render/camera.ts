// Orbit camera + the 4x4 helpers the mesh view and picking need.

import { cross, dot, norm, sub, Vec3 } from "../picking.js";

export type Mat4 = Float32Array; // column-major

export function perspective(fovYRad: number, aspect: number, near: number,
                            far: number): Mat4 {
  const f = 1.0 / Math.tan(fovYRad / 2);
  const m = new Float32Array(16);
  m[0] = f / aspect;
  m[5] = f;
  m[10] = (far + near) / (near - far);
  m[11] = -1;
  m[14] = (2 * far * near) / (near - far);
  return m;
}

export function lookAt(eye: Vec3, center: Vec3, up: Vec3): Mat4 {
  const z = normalize(sub(eye, center));
  const x = normalize(cross(up, z));
  const y = cross(z, x);
  const m = new Float32Array(16);
  m[0] = x[0]; m[4] = x[1]; m[8] = x[2];
  m[1] = y[0]; m[5] = y[1]; m[9] = y[2];
  m[2] = z[0]; m[6] = z[1]; m[10] = z[2];
  m[12] = -dot(x, eye);
  m[13] = -dot(y, eye);
  m[14] = -dot(z, eye);
  m[15] = 1;
  return m;
}

export function multiply(a: Mat4, b: Mat4): Mat4 {
  const out = new Float32Array(16);
  for (let c = 0; c < 4; c++) {
    for (let r = 0; r < 4; r++) {
      let s = 0;
      for (let k = 0; k < 4; k++) s += a[k * 4 + r] * b[c * 4 + k];
      out[c * 4 + r] = s;
    }
  }
  return out;
}

function normalize(v: Vec3): Vec3 {
  const n = norm(v) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}

export interface Orbit {
  center: Vec3;
  distance: number;
  yaw: number;
  pitch: number;
}

export function orbitEye(o: Orbit): Vec3 {
  const cp = Math.cos(o.pitch);
  return [
    o.center[0] + o.distance * cp * Math.cos(o.yaw),
    o.center[1] + o.distance * cp * Math.sin(o.yaw),
    o.center[2] + o.distance * Math.sin(o.pitch),
  ];
}

/** Mouse NDC -> world-space ray for picking. */
export function cameraRay(o: Orbit, fovYRad: number, aspect: number,
                          ndcX: number, ndcY: number): { origin: Vec3; dir: Vec3 } {
  const eye = orbitEye(o);
  const forward = normalize(sub(o.center, eye));
  const right = normalize(cross(forward, [0, 0, 1]));
  const up = cross(right, forward);
  const th = Math.tan(fovYRad / 2);
  const dir = normalize([
    forward[0] + ndcX * aspect * th * right[0] + ndcY * th * up[0],
    forward[1] + ndcX * aspect * th * right[1] + ndcY * th * up[1],
    forward[2] + ndcX * aspect * th * right[2] + ndcY * th * up[2],
  ]);
  return { origin: eye, dir };
}
