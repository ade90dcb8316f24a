// Plan-service message vocabulary: single-line JSON objects, one request one
// response, identical over raw TCP and the HTTP bridge.

export interface OkResponse {
  type: "ok";
  [key: string]: unknown;
}

export interface ErrResponse {
  type: "err";
  code: string;
  message: string;
}

export interface NeedsConfirmResponse {
  type: "needs_confirm";
  token: string;
}

export type Response = OkResponse | ErrResponse | NeedsConfirmResponse;

export interface EntryPayload {
  vertex: number;
  position: [number, number, number];
  cost: number | null;
  distance_mm: number;
  angle_deg: number;
}

export interface PlanRecord {
  target: number[];
  entry: EntryPayload;
  class_counts: Record<string, number>;
  reachability: { reachable: boolean; reason: string | null } | null;
  executed_entry: number[];
  executed_tip: number[];
  report: {
    deviation_3d_mm: number;
    deviation_lateral_mm: number;
    biopsy_center: number[];
  };
}

export type Request =
  | { type: "set_volume"; path: string }
  | { type: "set_scene"; path: string }
  | { type: "set_target"; x: number; y: number; z: number }
  | { type: "heatmap" }
  | { type: "check_reachability"; points: number[] }
  | { type: "select"; vertex?: number }
  | { type: "execute"; confirm_token?: string }
  | { type: "evaluate"; target: number[]; entry: number[]; tip: number[] }
  | { type: "info" };

export function encodeMessage(msg: Request): string {
  return JSON.stringify(msg) + "\n";
}

export function decodeMessage(line: string): Response {
  const obj = JSON.parse(line);
  if (typeof obj !== "object" || obj === null || typeof obj.type !== "string") {
    throw new Error("malformed service response");
  }
  return obj as Response;
}

export function isErr(r: Response): r is ErrResponse {
  return r.type === "err";
}
