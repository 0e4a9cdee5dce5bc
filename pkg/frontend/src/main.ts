/** Canvas wiring: slice image, overlay, pointer events -> SessionController. */

import { DragdropClient } from "./api.js";
import { crossSectionPx } from "./geometry.js";
import { SessionController, Tool } from "./session.js";

const client = new DragdropClient("");
let controller: SessionController | null = null;

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status") as HTMLElement;
const sliceSlider = document.getElementById("slice") as HTMLInputElement;
const SCALE = 8;

function setStatus(text: string): void {
  statusEl.textContent = text;
}

function toPixel(ev: MouseEvent): { px: number; py: number } {
  const rect = canvas.getBoundingClientRect();
  return {
    px: (ev.clientX - rect.left) / SCALE,
    py: (ev.clientY - rect.top) / SCALE,
  };
}

async function redraw(previewFrom?: MouseEvent): Promise<void> {
  if (!controller) return;
  const base = new Image();
  base.src = controller.sliceImageUrl();
  await base.decode();
  canvas.width = base.width * SCALE;
  canvas.height = base.height * SCALE;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(base, 0, 0, canvas.width, canvas.height);

  const labelUrl = controller.labelImageUrl();
  if (labelUrl && (controller.view.showForeground || controller.view.showUncertain)) {
    const overlay = new Image();
    overlay.src = labelUrl;
    try {
      await overlay.decode();
      ctx.globalAlpha = 0.4;
      ctx.drawImage(overlay, 0, 0, canvas.width, canvas.height);
      ctx.globalAlpha = 1.0;
    } catch {
      /* no label yet */
    }
  }

  const geo = controller.geometry;
  const spheres = [...controller.annotations];
  if (previewFrom) {
    const p = controller.preview(toPixel(previewFrom));
    if (p) spheres.push({ ...p, lesion_id: 0, warnings: [] });
  }
  ctx.strokeStyle = "#ff5050";
  ctx.lineWidth = 2;
  for (const ann of spheres) {
    const cs = crossSectionPx(ann, geo);
    if (!cs) continue;
    ctx.beginPath();
    ctx.ellipse(cs.cx * SCALE, cs.cy * SCALE, cs.rx * SCALE, cs.ry * SCALE, 0, 0, 2 * Math.PI);
    ctx.stroke();
  }
}

function bindControls(): void {
  canvas.addEventListener("mousedown", (ev) => controller?.press(toPixel(ev)));
  canvas.addEventListener("mousemove", (ev) => {
    if (ev.buttons & 1) void redraw(ev);
  });
  canvas.addEventListener("mouseup", async (ev) => {
    if (!controller) return;
    const placed = await controller.release(toPixel(ev));
    if (placed?.warnings.length) setStatus(placed.warnings.join("; "));
    await controller.click(toPixel(ev));
    void redraw();
  });
  sliceSlider.addEventListener("input", () => {
    controller?.setSlice(Number(sliceSlider.value));
    void redraw();
  });
  window.addEventListener("keydown", (ev) => {
    if (!controller) return;
    if (ev.key === "ArrowUp") controller.stepSlice(1);
    else if (ev.key === "ArrowDown") controller.stepSlice(-1);
    else return;
    sliceSlider.value = String(controller.view.index);
    void redraw();
  });
  for (const tool of ["dragdrop", "refine-fg", "refine-bg"] as Tool[]) {
    document.getElementById(`tool-${tool}`)?.addEventListener("click", () => {
      if (controller) controller.view.tool = tool;
      setStatus(`tool: ${tool}`);
    });
  }
  document.getElementById("propagate")?.addEventListener("click", async () => {
    if (!controller) return;
    setStatus("propagating…");
    try {
      await controller.runPropagation();
      setStatus("done");
    } catch (e) {
      setStatus(String(e));
    }
    void redraw();
  });
  document.getElementById("export")?.addEventListener("click", async () => {
    if (!controller) return;
    const { foreground } = await controller.exportLabels();
    const blob = new Blob([foreground], { type: "application/octet-stream" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "foreground.nii";
    a.click();
    URL.revokeObjectURL(a.href);
  });
  document.getElementById("open")?.addEventListener("click", async () => {
    const input = document.getElementById("volume-id") as HTMLInputElement;
    try {
      const info = await client.volumeInfo(input.value.trim());
      controller = new SessionController(client, info);
      const dim = info.dims[2];
      sliceSlider.max = String(dim - 1);
      sliceSlider.value = String(Math.floor(dim / 2));
      controller.setSlice(Math.floor(dim / 2));
      setStatus(`opened ${info.volume_id} ${info.dims.join("×")}`);
      void redraw();
    } catch (e) {
      setStatus(String(e));
    }
  });
}

bindControls();
setStatus("enter a volume id and press open");
