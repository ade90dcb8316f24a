// UI controller: a ViewState store plus the actions behind every widget.
// Planning numbers are never computed here; each displayed value is lifted
// verbatim from a service response, and non-feasible selections are refused
// before any message leaves the client.

import { classifyQuality, VertexClass } from "./heatmap.js";
import { decodeBase64Payload, HeatmapMesh, parseHeatmapPly } from "./ply.js";
import { EntryPayload, isErr, PlanRecord, Request, Response } from "./protocol.js";
import { annotate, Plane, PreviewVolume } from "./slices.js";
import { Transport } from "./transport.js";

export interface ViewState {
  connected: boolean;
  volumeLoaded: boolean;
  sceneLoaded: boolean;
  preview: PreviewVolume | null;
  crosshair: [number, number, number] | null; // voxel index in the preview
  target: [number, number, number] | null;    // world mm
  mesh: HeatmapMesh | null;
  optimal: number | null;
  selected: EntryPayload | null;
  staleHeatmap: boolean;
  pendingToken: string | null;
  records: PlanRecord[];
  hiddenClasses: Set<VertexClass>;
  busy: boolean;
  lastError: string | null;
}

export function initialState(): ViewState {
  return {
    connected: false,
    volumeLoaded: false,
    sceneLoaded: false,
    preview: null,
    crosshair: null,
    target: null,
    mesh: null,
    optimal: null,
    selected: null,
    staleHeatmap: false,
    pendingToken: null,
    records: [],
    hiddenClasses: new Set(),
    busy: false,
    lastError: null,
  };
}

export type Listener = (state: ViewState) => void;

export class PlannerController {
  state: ViewState = initialState();
  private listeners: Listener[] = [];

  constructor(private transport: Transport) {}

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const l of this.listeners) l(this.state);
  }

  private async request(msg: Request): Promise<Response> {
    if (this.state.busy) {
      throw new Error("a request is already in flight");
    }
    this.state.busy = true;
    this.emit();
    try {
      const response = await this.transport.send(msg);
      this.state.lastError = isErr(response)
        ? `${response.code}: ${response.message}`
        : null;
      return response;
    } finally {
      this.state.busy = false;
      this.emit();
    }
  }

  async loadVolume(path: string): Promise<boolean> {
    const r = await this.request({ type: "set_volume", path });
    if (isErr(r)) return false;
    this.state.volumeLoaded = true;
    this.state.target = null;
    this.state.mesh = null;
    this.state.selected = null;
    this.state.records = this.state.records;
    this.emit();
    return true;
  }

  async loadScene(path: string): Promise<boolean> {
    const r = await this.request({ type: "set_scene", path });
    if (!isErr(r)) this.state.sceneLoaded = true;
    this.emit();
    return !isErr(r);
  }

  setPreview(preview: PreviewVolume): void {
    this.state.preview = preview;
    this.emit();
  }

  /** Click in a slice view: map to world, send set_target, sync crosshair. */
  async annotateTarget(plane: Plane, u: number, v: number, slice: number):
      Promise<boolean> {
    const preview = this.state.preview;
    if (!preview) throw new Error("no preview volume loaded");
    const { index, world } = annotate(preview, plane, u, v, slice);
    const r = await this.request({
      type: "set_target", x: world[0], y: world[1], z: world[2],
    });
    if (isErr(r)) {
      return false; // state untouched: crosshair and target keep prior values
    }
    this.state.crosshair = index;
    this.state.target = world;
    if (this.state.mesh) this.state.staleHeatmap = true;
    this.state.selected = null;
    this.emit();
    return true;
  }

  async requestHeatmap(): Promise<boolean> {
    const r = await this.request({ type: "heatmap" });
    if (r.type !== "ok") return false;
    const payload = (r as unknown as { ply_payload_base64?: string }).ply_payload_base64;
    if (!payload) return false;
    this.state.mesh = parseHeatmapPly(decodeBase64Payload(payload));
    this.state.optimal = (r as unknown as { optimal: number | null }).optimal;
    this.state.staleHeatmap = false;
    this.state.selected = null;
    this.emit();
    // the optimal vertex is preselected when present
    if (this.state.optimal !== null && this.state.optimal !== undefined) {
      return this.selectVertex(this.state.optimal);
    }
    return true;
  }

  classOf(vertex: number): VertexClass {
    const mesh = this.state.mesh;
    if (!mesh) throw new Error("no heat map loaded");
    return classifyQuality(mesh.quality[vertex]);
  }

  /**
   * Select an entry vertex. Non-feasible picks are refused locally: no
   * select message is ever sent for them (the refusal reason lands in
   * lastError and the previous selection is retained).
   */
  async selectVertex(vertex: number | null): Promise<boolean> {
    if (vertex !== null) {
      const cls = this.classOf(vertex);
      if (cls !== "feasible") {
        this.state.lastError = `refused: vertex ${vertex} is ${cls}`;
        this.emit();
        return false;
      }
    }
    const msg: Request = vertex === null
      ? { type: "select" }
      : { type: "select", vertex };
    const r = await this.request(msg);
    if (r.type !== "ok") return false;
    const entry = (r as unknown as { entry: EntryPayload | null }).entry;
    if (entry === null) {
      this.state.selected = null;
      this.emit();
      return false;
    }
    this.state.selected = entry;
    this.state.pendingToken = null;
    this.emit();
    return true;
  }

  /** Two-step plan submission: request, surface needs_confirm, confirm. */
  async submitPlan(): Promise<"needs_confirm" | "done" | "failed"> {
    if (!this.state.selected) throw new Error("no entry selected");
    const r = await this.request({ type: "execute" });
    if (isErr(r)) return "failed";
    if (r.type !== "needs_confirm") return "failed";
    this.state.pendingToken = r.token;
    this.emit();
    return "needs_confirm";
  }

  async confirmPlan(): Promise<boolean> {
    const token = this.state.pendingToken;
    if (!token) throw new Error("nothing awaiting confirmation");
    const r = await this.request({ type: "execute", confirm_token: token });
    this.state.pendingToken = null;
    if (r.type !== "ok") {
      this.emit();
      return false;
    }
    const record = (r as unknown as { record: PlanRecord }).record;
    this.state.records = [...this.state.records, record];
    this.emit();
    return true;
  }

  cancelConfirm(): void {
    this.state.pendingToken = null;
    this.emit();
  }

  toggleClass(cls: VertexClass): void {
    const hidden = new Set(this.state.hiddenClasses);
    if (hidden.has(cls)) hidden.delete(cls);
    else hidden.add(cls);
    this.state.hiddenClasses = hidden;
    this.emit();
  }
}
