// Placement session state: selected view, click buffer, ratio sliders, box
// preview and active job.  Every submission-relevant field is exportable as
// a JSON snippet so a run can be reproduced from the CLI.

import { ApiClient } from "./api.js";
import { JobSnapshot, PlaceRequest, PlaceResponse } from "./types.js";

export interface SessionSnapshot {
  view_id: number;
  clicks: [number, number][];
  size_ratios: [number, number, number];
  prompt: string;
  config: { [key: string]: unknown };
}

export class PlacementSession {
  viewId = 0;
  clicks: [number, number][] = [];
  sizeRatios: [number, number, number] = [1.2, 1.2, 1.2];
  prompt = "";
  config: { [key: string]: unknown } = {};
  boxPreview: PlaceResponse | null = null;
  activeJobId: string | null = null;

  constructor(
    private api: ApiClient,
    private onBox: (resp: PlaceResponse) => void = () => {},
  ) {}

  placeRequest(): PlaceRequest {
    return {
      view_id: this.viewId,
      clicks: this.clicks.map((c) => [c[0], c[1]] as [number, number]),
      size_ratios: [...this.sizeRatios],
    };
  }

  // Called with the full click buffer (capture module's third click).
  async clicksComplete(clicks: [number, number][]): Promise<PlaceResponse> {
    this.clicks = clicks.map((c) => [c[0], c[1]] as [number, number]);
    return this.replace();
  }

  // Slider change: with a complete click buffer the box is re-requested so
  // the overlay tracks the new ratios; otherwise just record them.
  async setRatios(ratios: [number, number, number]): Promise<PlaceResponse | null> {
    this.sizeRatios = [...ratios];
    if (this.clicks.length === 3) return this.replace();
    return null;
  }

  selectView(viewId: number): void {
    if (viewId !== this.viewId) {
      this.viewId = viewId;
      this.clicks = [];
      this.boxPreview = null;
    }
  }

  clearBox(): void {
    this.clicks = [];
    this.boxPreview = null;
  }

  private async replace(): Promise<PlaceResponse> {
    const resp = await this.api.place(this.placeRequest());
    this.boxPreview = resp;
    this.onBox(resp);
    return resp;
  }

  async submit(): Promise<JobSnapshot> {
    if (this.boxPreview === null) throw new Error("no box placed yet");
    if (this.prompt.trim() === "") throw new Error("prompt is empty");
    const snap = await this.api.createJob({
      prompt: this.prompt,
      box: this.boxPreview.box,
      config: this.config,
    });
    this.activeJobId = snap.job_id;
    return snap;
  }

  exportSnapshot(): string {
    const snapshot: SessionSnapshot = {
      view_id: this.viewId,
      clicks: this.clicks.map((c) => [c[0], c[1]] as [number, number]),
      size_ratios: [...this.sizeRatios],
      prompt: this.prompt,
      config: this.config,
    };
    return JSON.stringify(snapshot, null, 2);
  }
}
