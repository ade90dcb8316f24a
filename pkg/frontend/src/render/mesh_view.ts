// WebGL heat-map mesh viewer: per-vertex colors, orbit interaction, marker
// points for the optimal and selected vertices, click picking.

import { vertexColors } from "../heatmap.js";
import { pickVertex, Vec3 } from "../picking.js";
import { HeatmapMesh } from "../ply.js";
import { cameraRay, lookAt, multiply, Orbit, orbitEye, perspective } from "./camera.js";

const VERT_SRC = `
attribute vec3 aPosition;
attribute vec3 aNormal;
attribute vec3 aColor;
uniform mat4 uMvp;
varying vec3 vColor;
varying vec3 vNormal;
void main() {
  gl_Position = uMvp * vec4(aPosition, 1.0);
  vColor = aColor;
  vNormal = aNormal;
}`;

const FRAG_SRC = `
precision mediump float;
varying vec3 vColor;
varying vec3 vNormal;
void main() {
  vec3 light = normalize(vec3(0.4, 0.3, 0.85));
  float shade = 0.55 + 0.45 * abs(dot(normalize(vNormal), light));
  gl_FragColor = vec4(vColor * shade, 1.0);
}`;

const MARKER_SRC = `
attribute vec3 aPosition;
uniform mat4 uMvp;
uniform float uSize;
void main() {
  gl_Position = uMvp * vec4(aPosition, 1.0);
  gl_PointSize = uSize;
}`;

const MARKER_FRAG = `
precision mediump float;
uniform vec3 uColor;
void main() { gl_FragColor = vec4(uColor, 1.0); }`;

function compile(gl: WebGLRenderingContext, kind: number, src: string): WebGLShader {
  const shader = gl.createShader(kind)!;
  gl.shaderSource(shader, src);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failure");
  }
  return shader;
}

function link(gl: WebGLRenderingContext, vs: string, fs: string): WebGLProgram {
  const program = gl.createProgram()!;
  gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, vs));
  gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, fs));
  gl.linkProgram(program);
  if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
    throw new Error(gl.getProgramInfoLog(program) ?? "program link failure");
  }
  return program;
}

export class MeshView {
  private gl: WebGLRenderingContext;
  private program: WebGLProgram;
  private markerProgram: WebGLProgram;
  private buffers: { pos: WebGLBuffer; nrm: WebGLBuffer; col: WebGLBuffer;
                     idx: WebGLBuffer } | null = null;
  private indexCount = 0;
  private mesh: HeatmapMesh | null = null;
  orbit: Orbit = { center: [0, 0, 0], distance: 400, yaw: 0.6, pitch: 0.4 };
  private fovY = Math.PI / 4;
  markers: { position: Vec3; color: [number, number, number] }[] = [];
  onPick: ((vertex: number) => void) | null = null;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl");
    if (!gl) throw new Error("WebGL unavailable");
    gl.getExtension("OES_element_index_uint"); // 32-bit face indices
    this.gl = gl;
    this.program = link(gl, VERT_SRC, FRAG_SRC);
    this.markerProgram = link(gl, MARKER_SRC, MARKER_FRAG);
    gl.enable(gl.DEPTH_TEST);
    this.bindInput();
  }

  setMesh(mesh: HeatmapMesh, hidden: Set<never> | Set<string>): void {
    this.mesh = mesh;
    const gl = this.gl;
    const colors = vertexColors(mesh.quality, { hidden: hidden as never });
    const mk = (data: ArrayBufferView, target: number) => {
      const buffer = gl.createBuffer()!;
      gl.bindBuffer(target, buffer);
      gl.bufferData(target, data, gl.STATIC_DRAW);
      return buffer;
    };
    this.buffers = {
      pos: mk(mesh.positions, gl.ARRAY_BUFFER),
      nrm: mk(mesh.normals, gl.ARRAY_BUFFER),
      col: mk(colors, gl.ARRAY_BUFFER),
      idx: mk(mesh.triangles, gl.ELEMENT_ARRAY_BUFFER),
    };
    this.indexCount = mesh.triangles.length;
    // center the orbit on the mesh
    const c: Vec3 = [0, 0, 0];
    for (let i = 0; i < mesh.vertexCount; i++) {
      c[0] += mesh.positions[3 * i];
      c[1] += mesh.positions[3 * i + 1];
      c[2] += mesh.positions[3 * i + 2];
    }
    this.orbit.center = [c[0] / mesh.vertexCount, c[1] / mesh.vertexCount,
                         c[2] / mesh.vertexCount];
    let reach = 1;
    for (let i = 0; i < mesh.vertexCount; i++) {
      const dx = mesh.positions[3 * i] - this.orbit.center[0];
      const dy = mesh.positions[3 * i + 1] - this.orbit.center[1];
      const dz = mesh.positions[3 * i + 2] - this.orbit.center[2];
      reach = Math.max(reach, Math.sqrt(dx * dx + dy * dy + dz * dz));
    }
    this.orbit.distance = reach * 2.6;
    this.draw();
  }

  recolor(hidden: Set<string>): void {
    if (!this.mesh || !this.buffers) return;
    const gl = this.gl;
    const colors = vertexColors(this.mesh.quality, { hidden: hidden as never });
    gl.bindBuffer(gl.ARRAY_BUFFER, this.buffers.col);
    gl.bufferData(gl.ARRAY_BUFFER, colors, gl.STATIC_DRAW);
    this.draw();
  }

  private mvp(): Float32Array {
    const aspect = this.canvas.width / Math.max(this.canvas.height, 1);
    const proj = perspective(this.fovY, aspect, 1.0, 20000.0);
    const view = lookAt(orbitEye(this.orbit), this.orbit.center, [0, 0, 1]);
    return multiply(proj, view);
  }

  draw(): void {
    const gl = this.gl;
    gl.viewport(0, 0, this.canvas.width, this.canvas.height);
    gl.clearColor(0.09, 0.09, 0.12, 1.0);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    if (!this.buffers) return;
    const mvp = this.mvp();
    gl.useProgram(this.program);
    const bind = (name: string, buffer: WebGLBuffer) => {
      const loc = gl.getAttribLocation(this.program, name);
      gl.bindBuffer(gl.ARRAY_BUFFER, buffer);
      gl.enableVertexAttribArray(loc);
      gl.vertexAttribPointer(loc, 3, gl.FLOAT, false, 0, 0);
    };
    bind("aPosition", this.buffers.pos);
    bind("aNormal", this.buffers.nrm);
    bind("aColor", this.buffers.col);
    gl.uniformMatrix4fv(gl.getUniformLocation(this.program, "uMvp"), false, mvp);
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.buffers.idx);
    gl.drawElements(gl.TRIANGLES, this.indexCount, gl.UNSIGNED_INT, 0);

    if (this.markers.length) {
      gl.useProgram(this.markerProgram);
      gl.uniformMatrix4fv(gl.getUniformLocation(this.markerProgram, "uMvp"),
                          false, mvp);
      const loc = gl.getAttribLocation(this.markerProgram, "aPosition");
      const buffer = gl.createBuffer()!;
      gl.bindBuffer(gl.ARRAY_BUFFER, buffer);
      gl.enableVertexAttribArray(loc);
      for (const marker of this.markers) {
        gl.bufferData(gl.ARRAY_BUFFER, new Float32Array(marker.position),
                      gl.DYNAMIC_DRAW);
        gl.vertexAttribPointer(loc, 3, gl.FLOAT, false, 0, 0);
        gl.uniform3fv(gl.getUniformLocation(this.markerProgram, "uColor"),
                      marker.color);
        gl.uniform1f(gl.getUniformLocation(this.markerProgram, "uSize"), 12.0);
        gl.drawArrays(gl.POINTS, 0, 1);
      }
    }
  }

  private bindInput(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    let moved = 0;
    this.canvas.addEventListener("mousedown", (e) => {
      dragging = true;
      moved = 0;
      lastX = e.clientX;
      lastY = e.clientY;
    });
    window.addEventListener("mouseup", () => {
      dragging = false;
    });
    this.canvas.addEventListener("mousemove", (e) => {
      if (!dragging) return;
      const dx = e.clientX - lastX;
      const dy = e.clientY - lastY;
      moved += Math.abs(dx) + Math.abs(dy);
      lastX = e.clientX;
      lastY = e.clientY;
      this.orbit.yaw -= dx * 0.008;
      this.orbit.pitch = Math.min(Math.max(this.orbit.pitch + dy * 0.008, -1.4), 1.4);
      this.draw();
    });
    this.canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.orbit.distance *= Math.exp(e.deltaY * 0.001);
      this.draw();
    });
    this.canvas.addEventListener("click", (e) => {
      if (moved > 4 || !this.mesh || !this.onPick) return;
      const rect = this.canvas.getBoundingClientRect();
      const ndcX = (2 * (e.clientX - rect.left)) / rect.width - 1;
      const ndcY = 1 - (2 * (e.clientY - rect.top)) / rect.height;
      const aspect = this.canvas.width / Math.max(this.canvas.height, 1);
      const ray = cameraRay(this.orbit, this.fovY, aspect, ndcX, ndcY);
      const hit = pickVertex(this.mesh, ray.origin, ray.dir);
      if (hit) this.onPick(hit.vertex);
    });
  }
}
