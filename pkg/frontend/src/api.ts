// Thin fetch wrapper around the scenegen service.  Every box quantity the UI
// shows comes from these endpoints; the client never reimplements camera math.

import {
  JobRequest,
  JobSnapshot,
  LossResponse,
  PlaceRequest,
  PlaceResponse,
  ViewsResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export class ApiClient {
  constructor(public baseUrl: string = "http://127.0.0.1:8000") {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        detail = body.error ?? body.detail ?? detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, `${path}: ${detail}`);
    }
    return resp.json() as Promise<T>;
  }

  private post<T>(path: string, body?: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  }

  getViews(): Promise<ViewsResponse> {
    return this.request("/views");
  }

  place(req: PlaceRequest): Promise<PlaceResponse> {
    return this.post("/place", req);
  }

  createJob(req: JobRequest): Promise<JobSnapshot> {
    return this.post("/jobs", req);
  }

  jobStatus(jobId: string): Promise<JobSnapshot> {
    return this.request(`/jobs/${jobId}`);
  }

  cancelJob(jobId: string): Promise<JobSnapshot> {
    return this.post(`/jobs/${jobId}/cancel`);
  }

  losses(jobId: string, tail = 200): Promise<LossResponse> {
    return this.request(`/jobs/${jobId}/losses?tail=${tail}`);
  }

  colorUrl(viewId: number): string {
    return `${this.baseUrl}/views/${viewId}/color.png`;
  }

  thumbUrl(viewId: number, size = 128): string {
    return `${this.baseUrl}/views/${viewId}/thumb.png?size=${size}`;
  }

  renderUrl(jobId: string, viewId: number, step?: number): string {
    const stamp = step === undefined ? "" : `&step=${step}`;
    return `${this.baseUrl}/jobs/${jobId}/render?view=${viewId}${stamp}`;
  }
}
