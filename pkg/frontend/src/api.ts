/** Typed client for the annotation service's /v1 HTTP API. */

export interface VolumeInfo {
  volume_id: string;
  dims: [number, number, number];
  spacing: [number, number, number];
}

export interface AnnotationResponse {
  lesion_id: number;
  warnings: string[];
}

export interface StatusResponse {
  state: "idle" | "propagating" | "done" | "error";
  error: string | null;
}

export interface SummaryResponse {
  state: string;
  annotation_count: number;
  foreground_voxels: number | null;
  uncertain_voxels: number | null;
  config: Record<string, unknown>;
}

export interface Click {
  voxel: [number, number, number];
  polarity: "foreground" | "background";
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function raiseForStatus(res: Response): Promise<Response> {
  if (res.ok) return res;
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (typeof body?.detail === "string") detail = body.detail;
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(res.status, detail);
}

export class DragdropClient {
  constructor(private readonly baseUrl: string) {}

  private url(path: string): string {
    return `${this.baseUrl}/v1${path}`;
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await raiseForStatus(await fetch(this.url(path)));
    return (await res.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const res = await raiseForStatus(
      await fetch(this.url(path), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      }),
    );
    return (await res.json()) as T;
  }

  async uploadVolume(data: ArrayBuffer | Uint8Array): Promise<VolumeInfo> {
    const res = await raiseForStatus(
      await fetch(this.url("/volumes"), {
        method: "POST",
        headers: { "Content-Type": "application/octet-stream" },
        body: data as BodyInit,
      }),
    );
    return (await res.json()) as VolumeInfo;
  }

  volumeFromPath(path: string, format?: string): Promise<VolumeInfo> {
    return this.postJson("/volumes/from-path", { path, format: format ?? null });
  }

  volumeInfo(volumeId: string): Promise<VolumeInfo> {
    return this.getJson(`/volumes/${volumeId}`);
  }

  sliceUrl(
    volumeId: string,
    axis: string,
    index: number,
    window: [number, number],
  ): string {
    const q = new URLSearchParams({
      axis,
      index: String(index),
      lo: String(window[0]),
      hi: String(window[1]),
    });
    return this.url(`/volumes/${volumeId}/slice?${q}`);
  }

  async createSession(
    volumeId: string,
    config: Record<string, unknown> = {},
  ): Promise<string> {
    const res = await this.postJson<{ session_id: string }>("/sessions", {
      volume_id: volumeId,
      config,
    });
    return res.session_id;
  }

  addAnnotation(
    sessionId: string,
    ann: { center_mm: [number, number, number]; radius_mm: number; class_id?: number },
  ): Promise<AnnotationResponse> {
    return this.postJson(`/sessions/${sessionId}/annotations`, ann);
  }

  startPropagation(sessionId: string): Promise<StatusResponse> {
    return this.postJson(`/sessions/${sessionId}/propagate`, {});
  }

  status(sessionId: string): Promise<StatusResponse> {
    return this.getJson(`/sessions/${sessionId}/status`);
  }

  async waitForPropagation(
    sessionId: string,
    opts?: { intervalMs?: number; timeoutMs?: number },
  ): Promise<StatusResponse> {
    const intervalMs = opts?.intervalMs ?? 250;
    const timeoutMs = opts?.timeoutMs ?? 120_000;
    const start = Date.now();
    for (;;) {
      const st = await this.status(sessionId);
      if (st.state === "done" || st.state === "error") return st;
      if (Date.now() - start >= timeoutMs) {
        throw new Error("propagation timed out");
      }
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  refine(sessionId: string, clicks: Click[]): Promise<SummaryResponse> {
    return this.postJson(`/sessions/${sessionId}/refine`, { clicks });
  }

  summary(sessionId: string): Promise<SummaryResponse> {
    return this.getJson(`/sessions/${sessionId}/summary`);
  }

  labelSliceUrl(sessionId: string, axis: string, index: number): string {
    return this.url(`/sessions/${sessionId}/label?axis=${axis}&index=${index}`);
  }

  async exportPart(
    sessionId: string,
    part: "foreground" | "uncertain",
  ): Promise<ArrayBuffer> {
    const res = await raiseForStatus(
      await fetch(this.url(`/sessions/${sessionId}/export?part=${part}`)),
    );
    return res.arrayBuffer();
  }

  getLog(sessionId: string): Promise<{ session_id: string; log: unknown[] }> {
    return this.getJson(`/sessions/${sessionId}/log`);
  }
}
