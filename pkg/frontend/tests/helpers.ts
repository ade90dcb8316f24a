// Shared test scaffolding: a scripted mock transport and a tiny PLY builder.

import { Request, Response } from "../src/protocol.js";
import { Transport } from "../src/transport.js";

export class MockTransport implements Transport {
  log: Request[] = [];

  constructor(private script: (msg: Request) => Response) {}

  async send(msg: Request): Promise<Response> {
    this.log.push(msg);
    return this.script(msg);
  }
}

export interface PlyVertex {
  position: [number, number, number];
  normal: [number, number, number];
  quality: number;
}

export function buildPly(vertices: PlyVertex[], faces: number[][]): string {
  const lines = [
    "ply",
    "format ascii 1.0",
    `element vertex ${vertices.length}`,
    "property float x", "property float y", "property float z",
    "property float nx", "property float ny", "property float nz",
    "property float quality",
    `element face ${faces.length}`,
    "property list uchar int vertex_indices",
    "end_header",
  ];
  for (const v of vertices) {
    lines.push([...v.position, ...v.normal, v.quality].join(" "));
  }
  for (const f of faces) {
    lines.push(`3 ${f.join(" ")}`);
  }
  return lines.join("\n") + "\n";
}

export function toBase64(text: string): string {
  return Buffer.from(text, "binary").toString("base64");
}
