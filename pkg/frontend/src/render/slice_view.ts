// Canvas slice views with crosshair overlay and click-to-annotate.

import { Plane, PreviewVolume, PLANE_AXES, sliceToGray } from "../slices.js";

export class SliceView {
  slice = 0;
  crosshair: [number, number, number] | null = null;
  onAnnotate: ((u: number, v: number, slice: number) => void) | null = null;
  private volume: PreviewVolume | null = null;

  constructor(private canvas: HTMLCanvasElement, readonly plane: Plane,
              private slider: HTMLInputElement) {
    canvas.addEventListener("click", (e) => {
      if (!this.volume || !this.onAnnotate) return;
      const rect = this.canvas.getBoundingClientRect();
      const [ua, va] = [PLANE_AXES[this.plane][0], PLANE_AXES[this.plane][1]];
      const u = ((e.clientX - rect.left) / rect.width) * this.volume.dims[ua];
      const v = ((e.clientY - rect.top) / rect.height) * this.volume.dims[va];
      this.onAnnotate(u, v, this.slice);
    });
    slider.addEventListener("input", () => {
      this.slice = parseInt(slider.value, 10);
      this.draw();
    });
  }

  setVolume(volume: PreviewVolume): void {
    this.volume = volume;
    const sa = PLANE_AXES[this.plane][2];
    this.slider.max = String(volume.dims[sa] - 1);
    this.slice = Math.floor(volume.dims[sa] / 2);
    this.slider.value = String(this.slice);
    this.draw();
  }

  setCrosshair(index: [number, number, number] | null): void {
    this.crosshair = index;
    if (index && this.volume) {
      const sa = PLANE_AXES[this.plane][2];
      this.slice = index[sa];
      this.slider.value = String(this.slice);
    }
    this.draw();
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx || !this.volume) return;
    const { width, height, data } = sliceToGray(this.volume, this.plane, this.slice);
    const image = ctx.createImageData(width, height);
    for (let i = 0; i < width * height; i++) {
      image.data[4 * i] = image.data[4 * i + 1] = image.data[4 * i + 2] = data[i];
      image.data[4 * i + 3] = 255;
    }
    this.canvas.width = width;
    this.canvas.height = height;
    ctx.putImageData(image, 0, 0);
    if (this.crosshair) {
      const [ua, va, sa] = PLANE_AXES[this.plane];
      if (this.crosshair[sa] === this.slice) {
        ctx.strokeStyle = "#ffd43b";
        ctx.lineWidth = 1;
        const x = this.crosshair[ua] + 0.5;
        const y = this.crosshair[va] + 0.5;
        ctx.beginPath();
        ctx.moveTo(x, 0);
        ctx.lineTo(x, height);
        ctx.moveTo(0, y);
        ctx.lineTo(width, y);
        ctx.stroke();
      }
    }
  }
}
