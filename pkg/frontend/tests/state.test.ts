import { describe, expect, it } from "vitest";

import { Request, Response } from "../src/protocol.js";
import { PlannerController } from "../src/state.js";
import { buildPly, MockTransport, toBase64 } from "./helpers.js";

const PLY = buildPly(
  [
    { position: [0, 0, 0], normal: [0, 0, 1], quality: 0.4 },
    { position: [10, 0, 0], normal: [0, 0, 1], quality: 0.2 },   // optimal
    { position: [0, 10, 0], normal: [0, 0, 1], quality: 3.0 },   // occluded
    { position: [10, 10, 0], normal: [0, 0, 1], quality: 0.7 },
  ],
  [[0, 1, 2], [1, 3, 2]],
);

function scriptedService(): (msg: Request) => Response {
  let target: number[] | null = null;
  let selected: number | null = null;
  let pending: string | null = null;
  const entry = (vertex: number): Record<string, unknown> => ({
    vertex,
    position: [0, 0, 0],
    cost: vertex === 1 ? 0.2 : 0.4,
    distance_mm: 42.5,
    angle_deg: 7.25,
  });
  return (msg) => {
    switch (msg.type) {
      case "set_volume":
        return { type: "ok", dims: [4, 4, 4], spacing: [2, 2, 2] };
      case "set_target":
        if (msg.x < 0) {
          return { type: "err", code: "TargetOutsideBody", message: "outside" };
        }
        target = [msg.x, msg.y, msg.z];
        return { type: "ok" };
      case "heatmap":
        if (!target) return { type: "err", code: "NoTarget", message: "no target" };
        return { type: "ok", ply_payload_base64: toBase64(PLY), optimal: 1,
                 class_counts: { FEASIBLE: 3, OCCLUDED: 1 } };
      case "select": {
        const vertex = (msg as { vertex?: number }).vertex ?? 1;
        selected = vertex;
        return { type: "ok", entry: entry(vertex) } as Response;
      }
      case "execute":
        if (!("confirm_token" in msg) || msg.confirm_token === undefined) {
          pending = "tok-1";
          return { type: "needs_confirm", token: pending };
        }
        if (msg.confirm_token !== pending) {
          return { type: "err", code: "NotConfirmed", message: "stale token" };
        }
        pending = null;
        return {
          type: "ok",
          record: {
            target, entry: entry(selected ?? 1), class_counts: {},
            reachability: null, executed_entry: [0, 0, 0],
            executed_tip: [1, 2, 3],
            report: { deviation_3d_mm: 0.0, deviation_lateral_mm: 0.0,
                      biopsy_center: [0, 0, 0] },
          },
        } as Response;
      default:
        return { type: "err", code: "BadRequest", message: "unexpected" };
    }
  };
}

const PREVIEW = {
  dims: [4, 4, 4] as [number, number, number],
  spacing: [2, 2, 2] as [number, number, number],
  origin: [0, 0, 0] as [number, number, number],
  voxels: new Int16Array(64),
};

describe("planner controller", () => {
  it("annotates targets through the slice geometry and flags stale maps", async () => {
    const transport = new MockTransport(scriptedService());
    const c = new PlannerController(transport);
    await c.loadVolume("/x.nrrd");
    c.setPreview(PREVIEW);
    expect(await c.annotateTarget("axial", 1, 1, 1)).toBe(true);
    expect(c.state.target).toEqual([2, 2, 2]);
    expect(c.state.crosshair).toEqual([1, 1, 1]);
    await c.requestHeatmap();
    expect(c.state.mesh).not.toBeNull();
    expect(c.state.staleHeatmap).toBe(false);
    // re-clicking replaces the target and flags the heat map as stale
    expect(await c.annotateTarget("axial", 2, 2, 2)).toBe(true);
    expect(c.state.staleHeatmap).toBe(true);
    expect(c.state.target).toEqual([4, 4, 4]);
  });

  it("keeps state unchanged when the service refuses a target", async () => {
    const transport = new MockTransport(scriptedService());
    const c = new PlannerController(transport);
    await c.loadVolume("/x.nrrd");
    c.setPreview({ ...PREVIEW, origin: [-10, 0, 0] });
    expect(await c.annotateTarget("axial", 0, 0, 0)).toBe(false);
    expect(c.state.target).toBeNull();
    expect(c.state.lastError).toContain("TargetOutsideBody");
  });

  it("preselects the optimal vertex after a heat map", async () => {
    const transport = new MockTransport(scriptedService());
    const c = new PlannerController(transport);
    await c.loadVolume("/x.nrrd");
    c.setPreview(PREVIEW);
    await c.annotateTarget("axial", 1, 1, 1);
    await c.requestHeatmap();
    expect(c.state.optimal).toBe(1);
    expect(c.state.selected?.vertex).toBe(1);
    expect(c.state.selected?.cost).toBe(0.2);
  });

  it("refuses non-feasible picks without sending any message", async () => {
    const transport = new MockTransport(scriptedService());
    const c = new PlannerController(transport);
    await c.loadVolume("/x.nrrd");
    c.setPreview(PREVIEW);
    await c.annotateTarget("axial", 1, 1, 1);
    await c.requestHeatmap();
    const before = transport.log.length;
    const prev = c.state.selected;
    expect(await c.selectVertex(2)).toBe(false); // occluded vertex
    expect(transport.log.length).toBe(before);   // nothing was sent
    expect(c.state.selected).toBe(prev);         // previous selection retained
    expect(c.state.lastError).toContain("occluded");
    // feasible override goes through
    expect(await c.selectVertex(3)).toBe(true);
    expect(c.state.selected?.vertex).toBe(3);
  });

  it("runs the two-step confirm flow and records the plan", async () => {
    const transport = new MockTransport(scriptedService());
    const c = new PlannerController(transport);
    await c.loadVolume("/x.nrrd");
    c.setPreview(PREVIEW);
    await c.annotateTarget("axial", 1, 1, 1);
    await c.requestHeatmap();
    expect(await c.submitPlan()).toBe("needs_confirm");
    expect(c.state.pendingToken).toBe("tok-1");
    expect(await c.confirmPlan()).toBe(true);
    expect(c.state.records).toHaveLength(1);
    expect(c.state.records[0].executed_tip).toEqual([1, 2, 3]);
  });

  it("cancelling the confirm leaves no record and clears the token", async () => {
    const transport = new MockTransport(scriptedService());
    const c = new PlannerController(transport);
    await c.loadVolume("/x.nrrd");
    c.setPreview(PREVIEW);
    await c.annotateTarget("axial", 1, 1, 1);
    await c.requestHeatmap();
    await c.submitPlan();
    c.cancelConfirm();
    expect(c.state.pendingToken).toBeNull();
    expect(c.state.records).toHaveLength(0);
    // a later confirm without a fresh token is a programming error
    await expect(c.confirmPlan()).rejects.toThrow();
  });

  it("allows at most one in-flight request", async () => {
    let release: (() => void) | null = null;
    const slow = new MockTransport(() => ({ type: "ok" }));
    const gate = new Promise<void>((resolve) => { release = resolve; });
    const original = slow.send.bind(slow);
    slow.send = async (msg) => {
      await gate;
      return original(msg);
    };
    const c = new PlannerController(slow);
    const first = c.loadVolume("/x.nrrd");
    await expect(c.loadVolume("/y.nrrd")).rejects.toThrow(/in flight/);
    release!();
    await first;
  });
});
