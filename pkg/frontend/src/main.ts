// Browser entry point: wires the controller to the DOM, the bridge transport,
// the slice views, and the WebGL heat-map view.

import { VertexClass } from "./heatmap.js";
import { MeshView } from "./render/mesh_view.js";
import { SliceView } from "./render/slice_view.js";
import { decodePreview, Plane } from "./slices.js";
import { PlannerController } from "./state.js";
import { HttpBridgeTransport } from "./transport.js";

const transport = new HttpBridgeTransport("");
const controller = new PlannerController(transport);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const status = el<HTMLDivElement>("status");
const errorBanner = el<HTMLDivElement>("error-banner");
const readout = el<HTMLDivElement>("entry-readout");
const recordsList = el<HTMLUListElement>("records");
const confirmBox = el<HTMLDivElement>("confirm-box");

const meshView = new MeshView(el<HTMLCanvasElement>("mesh-canvas"));
const sliceViews: SliceView[] = (["axial", "coronal", "sagittal"] as Plane[]).map(
  (plane) => new SliceView(el<HTMLCanvasElement>(`slice-${plane}`), plane,
                           el<HTMLInputElement>(`slider-${plane}`)),
);

for (const view of sliceViews) {
  view.onAnnotate = (u, v, slice) => {
    controller.annotateTarget(view.plane, u, v, slice).then((ok) => {
      if (ok) controller.requestHeatmap();
    });
  };
}

meshView.onPick = (vertex) => {
  controller.selectVertex(vertex);
};

controller.subscribe((state) => {
  status.textContent = [
    state.volumeLoaded ? "volume loaded" : "no volume",
    state.sceneLoaded ? "scene loaded" : "no scene",
    state.target ? `target (${state.target.map((x) => x.toFixed(1)).join(", ")})` : "no target",
    state.staleHeatmap ? "HEAT MAP STALE - recompute" : "",
    state.busy ? "working..." : "",
  ].filter(Boolean).join(" | ");
  errorBanner.textContent = state.lastError ?? "";
  errorBanner.style.display = state.lastError ? "block" : "none";

  for (const view of sliceViews) {
    if (state.preview) view.setVolume(state.preview);
    view.setCrosshair(state.crosshair);
  }

  if (state.mesh) {
    meshView.setMesh(state.mesh, state.hiddenClasses);
    meshView.markers = [];
    if (state.optimal !== null && state.mesh) {
      const i = state.optimal;
      meshView.markers.push({
        position: [state.mesh.positions[3 * i], state.mesh.positions[3 * i + 1],
                   state.mesh.positions[3 * i + 2]],
        color: [1.0, 1.0, 1.0],
      });
    }
    if (state.selected) {
      meshView.markers.push({
        position: state.selected.position,
        color: [1.0, 0.85, 0.2],
      });
    }
    meshView.draw();
  }

  if (state.selected) {
    readout.textContent =
      `vertex ${state.selected.vertex} | cost ${state.selected.cost?.toFixed(4)} | ` +
      `depth ${state.selected.distance_mm.toFixed(1)} mm | ` +
      `angle ${state.selected.angle_deg.toFixed(1)} deg`;
  } else {
    readout.textContent = "no entry selected";
  }

  confirmBox.style.display = state.pendingToken ? "block" : "none";

  recordsList.innerHTML = "";
  for (const record of state.records) {
    const li = document.createElement("li");
    li.textContent =
      `entry ${record.entry.vertex}: 3D ${record.report.deviation_3d_mm.toFixed(2)} mm, ` +
      `lateral ${record.report.deviation_lateral_mm.toFixed(2)} mm`;
    recordsList.appendChild(li);
  }
});

el<HTMLButtonElement>("btn-load").addEventListener("click", async () => {
  const path = el<HTMLInputElement>("volume-path").value;
  if (!(await controller.loadVolume(path))) return;
  const scenePath = el<HTMLInputElement>("scene-path").value.trim();
  if (scenePath) await controller.loadScene(scenePath);
  const preview = (await transport.fetchPreview()) as Parameters<typeof decodePreview>[0];
  controller.setPreview(decodePreview(preview));
});

el<HTMLButtonElement>("btn-heatmap").addEventListener("click", () => {
  controller.requestHeatmap();
});

el<HTMLButtonElement>("btn-submit").addEventListener("click", () => {
  controller.submitPlan();
});

el<HTMLButtonElement>("btn-confirm").addEventListener("click", () => {
  controller.confirmPlan();
});

el<HTMLButtonElement>("btn-cancel").addEventListener("click", () => {
  controller.cancelConfirm();
});

for (const cls of ["feasible", "out_of_range", "occluded", "air_blocked",
                   "unreachable"] as VertexClass[]) {
  const box = document.getElementById(`toggle-${cls}`) as HTMLInputElement | null;
  box?.addEventListener("change", () => controller.toggleClass(cls));
}
