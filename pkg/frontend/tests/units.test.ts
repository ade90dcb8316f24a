import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { classifyQuality, CLASS_COLORS, costColor, vertexColors } from "../src/heatmap.js";
import { pickVertex, rayTriangle } from "../src/picking.js";
import { parseHeatmapPly } from "../src/ply.js";
import { decodeMessage, encodeMessage, isErr } from "../src/protocol.js";
import { annotate, decodePreview, indexToWorld, pixelToIndex, sliceToGray,
         worldToIndex } from "../src/slices.js";
import { buildPly } from "./helpers.js";

describe("protocol", () => {
  it("encodes one request per line", () => {
    const line = encodeMessage({ type: "set_target", x: 1, y: 2, z: 3 });
    expect(line.endsWith("\n")).toBe(true);
    expect(JSON.parse(line)).toEqual({ type: "set_target", x: 1, y: 2, z: 3 });
  });

  it("decodes and classifies responses", () => {
    const ok = decodeMessage('{"type":"ok","dims":[2,2,2]}');
    expect(isErr(ok)).toBe(false);
    const err = decodeMessage('{"type":"err","code":"BadRequest","message":"x"}');
    expect(isErr(err)).toBe(true);
    expect(() => decodeMessage('{"no":"type"}')).toThrow();
  });
});

describe("ply parsing", () => {
  it("round-trips a small heat-map payload", () => {
    const text = buildPly(
      [
        { position: [0, 0, 0], normal: [0, 0, 1], quality: 0.25 },
        { position: [1, 0, 0], normal: [0, 0, 1], quality: 3.0 },
        { position: [0, 1, 0], normal: [0, 0, 1], quality: 5.0 },
      ],
      [[0, 1, 2]],
    );
    const mesh = parseHeatmapPly(text);
    expect(mesh.vertexCount).toBe(3);
    expect(Array.from(mesh.triangles)).toEqual([0, 1, 2]);
    expect(mesh.quality[0]).toBeCloseTo(0.25, 12);
    expect(mesh.quality[2]).toBe(5.0);
    expect(mesh.positions[3]).toBe(1);
  });

  it("rejects payloads without the quality scalar", () => {
    const noQuality = buildPly([], []).replace("property float quality\n", "");
    expect(() => parseHeatmapPly(noQuality)).toThrow(/quality/);
  });
});

describe("heat map legend", () => {
  it("maps sentinel values to classes (5.0 is unreachable grey)", () => {
    expect(classifyQuality(0.0)).toBe("feasible");
    expect(classifyQuality(1.0)).toBe("feasible");
    expect(classifyQuality(2.0)).toBe("out_of_range");
    expect(classifyQuality(3.0)).toBe("occluded");
    expect(classifyQuality(4.0)).toBe("air_blocked");
    expect(classifyQuality(5.0)).toBe("unreachable");
    const grey = CLASS_COLORS.unreachable;
    expect(grey[0]).toBeCloseTo(grey[1], 6);
    expect(grey[1]).toBeCloseTo(grey[2], 6);
  });

  it("feasible ramp runs blue to yellow with cost", () => {
    const low = costColor(0);
    const high = costColor(1);
    expect(low[2]).toBeGreaterThan(low[0]); // low cost: blue dominant
    expect(high[0]).toBeGreaterThan(high[2]); // high cost: yellow dominant
  });

  it("legend toggles recolor without touching geometry", () => {
    const quality = new Float64Array([0.2, 3.0, 5.0]);
    const visible = vertexColors(quality);
    const hidden = vertexColors(quality, { hidden: new Set(["occluded"]) });
    expect(visible.slice(0, 3)).toEqual(hidden.slice(0, 3));
    expect(Array.from(visible.slice(3, 6))).not.toEqual(Array.from(hidden.slice(3, 6)));
  });
});

describe("slice geometry against volume-module goldens", () => {
  const fixture = JSON.parse(readFileSync(
    join(__dirname, "fixtures", "slice_golden.json"), "utf-8"));

  it("index/world mapping matches within 0.5 * spacing", () => {
    for (const c of fixture.cases) {
      const vol = {
        dims: c.dims as [number, number, number],
        spacing: c.spacing as [number, number, number],
        origin: c.origin as [number, number, number],
        voxels: new Int16Array(0),
      };
      const world = indexToWorld(vol, c.index as [number, number, number]);
      for (let a = 0; a < 3; a++) {
        expect(Math.abs(world[a] - c.world[a])).toBeLessThan(0.5 * c.spacing[a]);
        expect(Math.abs(world[a] - c.world[a])).toBeLessThan(1e-9);
      }
      const back = worldToIndex(vol, c.world as [number, number, number]);
      for (let a = 0; a < 3; a++) {
        expect(Math.abs(back[a] - c.round_trip_index[a])).toBeLessThan(1e-9);
      }
    }
  });

  it("plane pixel mapping places the sliced axis correctly", () => {
    expect(pixelToIndex("axial", 3, 4, 5)).toEqual([3, 4, 5]);
    expect(pixelToIndex("coronal", 3, 4, 5)).toEqual([3, 5, 4]);
    expect(pixelToIndex("sagittal", 3, 4, 5)).toEqual([5, 3, 4]);
  });

  it("annotating clamps to the lattice and reports world mm", () => {
    const vol = {
      dims: [4, 4, 4] as [number, number, number],
      spacing: [2, 2, 2] as [number, number, number],
      origin: [10, 20, 30] as [number, number, number],
      voxels: new Int16Array(64),
    };
    const hit = annotate(vol, "axial", 1, 2, 3);
    expect(hit.index).toEqual([1, 2, 3]);
    expect(hit.world).toEqual([12, 24, 36]);
    const clamped = annotate(vol, "axial", -5, 99, 2);
    expect(clamped.index).toEqual([0, 3, 2]);
  });

  it("decodes the preview payload and windows slices", () => {
    const voxels = new Int16Array([-1000, 0, 500, 1000, -1000, 0, 500, 1000]);
    const payload = {
      dims: [2, 2, 2],
      spacing: [1, 1, 1],
      origin: [0, 0, 0],
      data_base64: Buffer.from(new Uint8Array(voxels.buffer)).toString("base64"),
    };
    const vol = decodePreview(payload);
    expect(Array.from(vol.voxels)).toEqual(Array.from(voxels));
    const gray = sliceToGray(vol, "axial", 0);
    expect(gray.width).toBe(2);
    expect(gray.data[0]).toBe(0); // air clamps to black
  });
});

describe("picking", () => {
  it("ray-triangle agrees with plain geometry", () => {
    const t = rayTriangle([0.2, 0.2, -5], [0, 0, 1], [0, 0, 0], [1, 0, 0], [0, 1, 0]);
    expect(t).toBeCloseTo(5, 9);
    expect(rayTriangle([2, 2, -5], [0, 0, 1], [0, 0, 0], [1, 0, 0], [0, 1, 0])).toBeNull();
  });

  it("picks the nearest vertex of the front-most face", () => {
    const mesh = parseHeatmapPly(buildPly(
      [
        { position: [0, 0, 0], normal: [0, 0, 1], quality: 0.1 },
        { position: [2, 0, 0], normal: [0, 0, 1], quality: 0.2 },
        { position: [0, 2, 0], normal: [0, 0, 1], quality: 0.3 },
        // a second triangle further along the ray must lose
        { position: [0, 0, 4], normal: [0, 0, 1], quality: 0.4 },
        { position: [2, 0, 4], normal: [0, 0, 1], quality: 0.5 },
        { position: [0, 2, 4], normal: [0, 0, 1], quality: 0.6 },
      ],
      [[0, 1, 2], [3, 4, 5]],
    ));
    const hit = pickVertex(mesh, [0.1, 0.1, -10], [0, 0, 1]);
    expect(hit).not.toBeNull();
    expect(hit!.vertex).toBe(0);
  });
});
