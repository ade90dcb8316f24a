// Minimal ASCII PLY reader for the service's heat-map payloads: vertex
// positions, normals, the per-vertex quality scalar, and triangle faces.

export interface HeatmapMesh {
  positions: Float32Array; // xyz triples
  normals: Float32Array;
  quality: Float64Array;
  triangles: Uint32Array;
  vertexCount: number;
}

export function parseHeatmapPly(text: string): HeatmapMesh {
  const lines = text.split("\n");
  let i = 0;
  if (lines[i++].trim() !== "ply") throw new Error("not a PLY payload");
  let vertexCount = 0;
  let faceCount = 0;
  const props: string[] = [];
  let current = "";
  for (; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "end_header") {
      i++;
      break;
    }
    const parts = line.split(/\s+/);
    if (parts[0] === "element") {
      current = parts[1];
      if (current === "vertex") vertexCount = parseInt(parts[2], 10);
      if (current === "face") faceCount = parseInt(parts[2], 10);
    } else if (parts[0] === "property" && current === "vertex" && parts[1] !== "list") {
      props.push(parts[2]);
    }
  }
  const col = (name: string) => {
    const idx = props.indexOf(name);
    if (idx < 0) throw new Error(`PLY payload lacks property ${name}`);
    return idx;
  };
  const ix = col("x");
  const inx = col("nx");
  const iq = props.indexOf("quality");
  if (iq < 0) throw new Error("heat map PLY lacks the quality scalar");

  const positions = new Float32Array(vertexCount * 3);
  const normals = new Float32Array(vertexCount * 3);
  const quality = new Float64Array(vertexCount);
  for (let v = 0; v < vertexCount; v++, i++) {
    const parts = lines[i].trim().split(/\s+/).map(Number);
    positions[3 * v] = parts[ix];
    positions[3 * v + 1] = parts[ix + 1];
    positions[3 * v + 2] = parts[ix + 2];
    normals[3 * v] = parts[inx];
    normals[3 * v + 1] = parts[inx + 1];
    normals[3 * v + 2] = parts[inx + 2];
    quality[v] = parts[iq];
  }
  const triangles = new Uint32Array(faceCount * 3);
  for (let f = 0; f < faceCount; f++, i++) {
    const parts = lines[i].trim().split(/\s+/).map(Number);
    triangles[3 * f] = parts[1];
    triangles[3 * f + 1] = parts[2];
    triangles[3 * f + 2] = parts[3];
  }
  return { positions, normals, quality, triangles, vertexCount };
}

export function decodeBase64Payload(b64: string): string {
  if (typeof atob === "function") {
    return atob(b64);
  }
  return Buffer.from(b64, "base64").toString("binary");
}
