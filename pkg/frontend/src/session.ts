/**
 * DOM-free session controller: turns pointer gestures into service calls and
 * tracks view state. The canvas layer (main.ts) only forwards events here and
 * redraws from the returned state, so the whole annotation loop is testable
 * without a browser.
 */

import { Click, DragdropClient, StatusResponse, SummaryResponse, VolumeInfo } from "./api.js";
import {
  Axis,
  Pixel,
  SliceGeometry,
  SphereAnnotation,
  gestureToAnnotation,
  pixelToVoxel,
} from "./geometry.js";

export type Tool = "dragdrop" | "refine-fg" | "refine-bg";

export interface ViewState {
  axis: Axis;
  index: number;
  window: [number, number]; // lo < hi
  showForeground: boolean;
  showUncertain: boolean;
  tool: Tool;
}

export interface PlacedAnnotation extends SphereAnnotation {
  lesion_id: number;
  warnings: string[];
}

export class SessionController {
  readonly view: ViewState = {
    axis: "z",
    index: 0,
    window: [0, 255],
    showForeground: true,
    showUncertain: true,
    tool: "dragdrop",
  };
  readonly annotations: PlacedAnnotation[] = [];
  private anchor: Pixel | null = null;
  private sessionId: string | null = null;

  constructor(
    private readonly client: DragdropClient,
    readonly volume: VolumeInfo,
  ) {}

  get geometry(): SliceGeometry {
    return {
      axis: this.view.axis,
      index: this.view.index,
      spacing: this.volume.spacing,
    };
  }

  private axisDim(): number {
    return this.volume.dims[{ x: 0, y: 1, z: 2 }[this.view.axis]];
  }

  setSlice(index: number): void {
    this.view.index = Math.max(0, Math.min(index, this.axisDim() - 1));
  }

  stepSlice(delta: number): void {
    this.setSlice(this.view.index + delta);
  }

  setWindow(lo: number, hi: number): void {
    if (lo >= hi) throw new Error(`window lo must be < hi, got [${lo}, ${hi}]`);
    this.view.window = [lo, hi];
  }

  async ensureSession(config: Record<string, unknown> = {}): Promise<string> {
    if (this.sessionId === null) {
      this.sessionId = await this.client.createSession(
        this.volume.volume_id,
        config,
      );
    }
    return this.sessionId;
  }

  press(p: Pixel): void {
    if (this.view.tool === "dragdrop") this.anchor = p;
  }

  /** Live preview of the sphere while dragging; null before press. */
  preview(current: Pixel): SphereAnnotation | null {
    if (this.anchor === null) return null;
    return gestureToAnnotation(this.anchor, current, this.geometry);
  }

  /**
   * Complete the gesture. Sub-voxel drags cancel silently (null); otherwise
   * the annotation is posted and recorded with the server's lesion id.
   */
  async release(p: Pixel): Promise<PlacedAnnotation | null> {
    if (this.view.tool !== "dragdrop" || this.anchor === null) return null;
    const ann = gestureToAnnotation(this.anchor, p, this.geometry);
    this.anchor = null;
    if (ann === null) return null;
    const sid = await this.ensureSession();
    const res = await this.client.addAnnotation(sid, ann);
    const placed: PlacedAnnotation = { ...ann, ...res };
    this.annotations.push(placed);
    return placed;
  }

  async click(p: Pixel): Promise<SummaryResponse | null> {
    const tool = this.view.tool;
    if (tool !== "refine-fg" && tool !== "refine-bg") return null;
    const click: Click = {
      voxel: pixelToVoxel(p, this.geometry),
      polarity: tool === "refine-fg" ? "foreground" : "background",
    };
    const sid = await this.ensureSession();
    return this.client.refine(sid, [click]);
  }

  async runPropagation(): Promise<StatusResponse> {
    const sid = await this.ensureSession();
    await this.client.startPropagation(sid);
    const st = await this.client.waitForPropagation(sid);
    if (st.state === "error") {
      throw new Error(st.error ?? "propagation failed");
    }
    return st;
  }

  async exportLabels(): Promise<{ foreground: ArrayBuffer; uncertain: ArrayBuffer }> {
    const sid = await this.ensureSession();
    const [foreground, uncertain] = await Promise.all([
      this.client.exportPart(sid, "foreground"),
      this.client.exportPart(sid, "uncertain"),
    ]);
    return { foreground, uncertain };
  }

  sliceImageUrl(): string {
    return this.client.sliceUrl(
      this.volume.volume_id,
      this.view.axis,
      this.view.index,
      this.view.window,
    );
  }

  labelImageUrl(): string | null {
    if (this.sessionId === null) return null;
    return this.client.labelSliceUrl(this.sessionId, this.view.axis, this.view.index);
  }
}
