// Orthogonal slice views over the downsampled preview volume: pixel <->
// world mapping mirrors the service's volume geometry (identity direction on
// previews), crosshair state shared across the three planes.

export interface PreviewVolume {
  dims: [number, number, number];
  spacing: [number, number, number];
  origin: [number, number, number];
  voxels: Int16Array; // x-fastest order
}

export function decodePreview(payload: {
  dims: number[];
  spacing: number[];
  origin: number[];
  data_base64: string;
}): PreviewVolume {
  const bin =
    typeof atob === "function"
      ? atob(payload.data_base64)
      : Buffer.from(payload.data_base64, "base64").toString("binary");
  const bytes = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
  return {
    dims: payload.dims as [number, number, number],
    spacing: payload.spacing as [number, number, number],
    origin: payload.origin as [number, number, number],
    voxels: new Int16Array(bytes.buffer),
  };
}

export function voxelAt(v: PreviewVolume, i: number, j: number, k: number): number {
  const [nx, ny] = v.dims;
  return v.voxels[i + nx * (j + ny * k)];
}

export function indexToWorld(v: PreviewVolume, idx: [number, number, number]):
    [number, number, number] {
  return [
    v.origin[0] + idx[0] * v.spacing[0],
    v.origin[1] + idx[1] * v.spacing[1],
    v.origin[2] + idx[2] * v.spacing[2],
  ];
}

export function worldToIndex(v: PreviewVolume, p: [number, number, number]):
    [number, number, number] {
  return [
    (p[0] - v.origin[0]) / v.spacing[0],
    (p[1] - v.origin[1]) / v.spacing[1],
    (p[2] - v.origin[2]) / v.spacing[2],
  ];
}

export type Plane = "axial" | "coronal" | "sagittal";

// in-plane axes (u, v) and the sliced axis per plane
export const PLANE_AXES: Record<Plane, [number, number, number]> = {
  axial: [0, 1, 2],    // x-y image, slice along z
  coronal: [0, 2, 1],  // x-z image, slice along y
  sagittal: [1, 2, 0], // y-z image, slice along x
};

/** Voxel index under an image pixel of one slice view. */
export function pixelToIndex(plane: Plane, u: number, vpix: number, slice: number):
    [number, number, number] {
  const [ua, va, sa] = PLANE_AXES[plane];
  const idx: [number, number, number] = [0, 0, 0];
  idx[ua] = u;
  idx[va] = vpix;
  idx[sa] = slice;
  return idx;
}

export interface Crosshair {
  index: [number, number, number];
  world: [number, number, number];
}

/** Click in a slice view -> synchronized crosshair + world target. */
export function annotate(v: PreviewVolume, plane: Plane, u: number, vpix: number,
                         slice: number): Crosshair {
  const idx = pixelToIndex(plane, Math.round(u), Math.round(vpix), Math.round(slice));
  for (let a = 0; a < 3; a++) {
    idx[a] = Math.min(Math.max(idx[a], 0), v.dims[a] - 1);
  }
  return { index: idx, world: indexToWorld(v, idx) };
}

/** Window a HU slice into 8-bit grayscale for canvas upload. */
export function sliceToGray(v: PreviewVolume, plane: Plane, slice: number,
                            huLo = -400, huHi = 600): { width: number; height: number;
                                                        data: Uint8ClampedArray } {
  const [ua, va] = [PLANE_AXES[plane][0], PLANE_AXES[plane][1]];
  const width = v.dims[ua];
  const height = v.dims[va];
  const out = new Uint8ClampedArray(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const idx = pixelToIndex(plane, x, y, slice);
      const hu = voxelAt(v, idx[0], idx[1], idx[2]);
      out[y * width + x] = Math.round(255 * (hu - huLo) / (huHi - huLo));
    }
  }
  return { width, height, data: out };
}
