// Mesh picking: a camera ray against the heat-map triangles, then the nearest
// vertex of the hit face becomes the selection candidate.

import { HeatmapMesh } from "./ply.js";

export type Vec3 = [number, number, number];

export function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

export function norm(a: Vec3): number {
  return Math.sqrt(dot(a, a));
}

function vertex(mesh: HeatmapMesh, i: number): Vec3 {
  return [mesh.positions[3 * i], mesh.positions[3 * i + 1], mesh.positions[3 * i + 2]];
}

/** Moller-Trumbore; returns the ray parameter t or null. */
export function rayTriangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3):
    number | null {
  const e1 = sub(b, a);
  const e2 = sub(c, a);
  const p = cross(dir, e2);
  const det = dot(e1, p);
  if (Math.abs(det) < 1e-12) return null;
  const inv = 1.0 / det;
  const tv = sub(origin, a);
  const u = dot(tv, p) * inv;
  if (u < 0 || u > 1) return null;
  const q = cross(tv, e1);
  const v = dot(dir, q) * inv;
  if (v < 0 || u + v > 1) return null;
  const t = dot(e2, q) * inv;
  return t > 1e-9 ? t : null;
}

export interface PickResult {
  vertex: number;
  point: Vec3;
  t: number;
}

/** Closest triangle hit along the ray; the nearest of its corners wins. */
export function pickVertex(mesh: HeatmapMesh, origin: Vec3, dir: Vec3):
    PickResult | null {
  let best: { t: number; tri: number } | null = null;
  for (let f = 0; f < mesh.triangles.length / 3; f++) {
    const a = vertex(mesh, mesh.triangles[3 * f]);
    const b = vertex(mesh, mesh.triangles[3 * f + 1]);
    const c = vertex(mesh, mesh.triangles[3 * f + 2]);
    const t = rayTriangle(origin, dir, a, b, c);
    if (t !== null && (best === null || t < best.t)) {
      best = { t, tri: f };
    }
  }
  if (best === null) return null;
  const point: Vec3 = [
    origin[0] + best.t * dir[0],
    origin[1] + best.t * dir[1],
    origin[2] + best.t * dir[2],
  ];
  let bestVertex = mesh.triangles[3 * best.tri];
  let bestDist = Infinity;
  for (const vi of [mesh.triangles[3 * best.tri], mesh.triangles[3 * best.tri + 1],
                    mesh.triangles[3 * best.tri + 2]]) {
    const d = norm(sub(vertex(mesh, vi), point));
    if (d < bestDist) {
      bestDist = d;
      bestVertex = vi;
    }
  }
  return { vertex: bestVertex, point, t: best.t };
}
