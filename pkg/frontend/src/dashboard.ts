// Job dashboard: polls status/loss endpoints while a job runs, draws a loss
// sparkline, and exposes the before/after comparison.  Polling ticks every
// second during pending/running and stops once the job is terminal; a 404
// raises the stale-job banner instead.

import { ApiClient, ApiError } from "./api.js";
import { isTerminal, JobSnapshot, LossRecord, StrokeContext } from "./types.js";

export interface LossPoint {
  step: number;
  total: number;
}

// Plot points from raw loss records: skipped steps carry no total and are
// dropped; steps arrive in increasing order from the service, and any
// duplicate from overlapping tails keeps the latest value.
export function lossCurvePoints(records: LossRecord[]): LossPoint[] {
  const points: LossPoint[] = [];
  for (const rec of records) {
    if (typeof rec.total !== "number") continue;
    const last = points[points.length - 1];
    if (last !== undefined && rec.step <= last.step) {
      if (rec.step === last.step) last.total = rec.total;
      continue;
    }
    points.push({ step: rec.step, total: rec.total });
  }
  return points;
}

export function drawSparkline(
  ctx: StrokeContext,
  points: LossPoint[],
  width: number,
  height: number,
): void {
  if (points.length < 2) return;
  const x0 = points[0].step;
  const x1 = points[points.length - 1].step;
  let lo = Infinity;
  let hi = -Infinity;
  for (const p of points) {
    lo = Math.min(lo, p.total);
    hi = Math.max(hi, p.total);
  }
  const spanX = Math.max(x1 - x0, 1);
  const spanY = Math.max(hi - lo, 1e-12);
  ctx.beginPath();
  points.forEach((p, k) => {
    const x = ((p.step - x0) / spanX) * width;
    const y = height - ((p.total - lo) / spanY) * height;
    if (k === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

// What the dashboard pushes to the page; main.ts binds these to DOM nodes
// and tests bind them to recorders.
export interface DashboardView {
  setStatus(snap: JobSnapshot): void;
  setLossCurve(points: LossPoint[]): void;
  setPreview(url: string): void;
  showStaleBanner(message: string): void;
}

export class JobDashboard {
  jobId: string | null = null;
  lastSnapshot: JobSnapshot | null = null;
  observedStates: string[] = [];
  polling = false;
  pollMs = 1000;

  private timer: ReturnType<typeof setTimeout> | null = null;
  private looping = false;

  constructor(
    private api: ApiClient,
    private view: DashboardView,
    private previewViewId = 0,
  ) {}

  // Point the dashboard at a job.  Tests drive tick() by hand; the page
  // calls start() afterwards to run the timer loop.
  attach(jobId: string): void {
    this.detach();
    this.jobId = jobId;
    this.lastSnapshot = null;
    this.observedStates = [];
    this.polling = true;
  }

  start(): void {
    this.looping = true;
    this.schedule(0);
  }

  previewView(viewId: number): void {
    this.previewViewId = viewId;
  }

  detach(): void {
    this.polling = false;
    this.looping = false;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private schedule(delay: number): void {
    this.timer = setTimeout(() => {
      void this.tick();
    }, delay);
  }

  // One poll cycle; returns false once polling has stopped.  Kept public so
  // tests can drive the loop without timers.
  async tick(): Promise<boolean> {
    if (!this.polling || this.jobId === null) return false;
    let snap: JobSnapshot;
    try {
      snap = await this.api.jobStatus(this.jobId);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.view.showStaleBanner(`job ${this.jobId} is gone`);
        this.detach();
        return false;
      }
      throw err;
    }

    if (snap.state !== this.lastSnapshot?.state) {
      this.observedStates.push(snap.state);
    }
    this.lastSnapshot = snap;
    this.view.setStatus(snap);

    if (snap.step > 0) {
      const losses = await this.api.losses(this.jobId);
      this.view.setLossCurve(lossCurvePoints(losses.records));
    }
    if (isTerminal(snap.state) && snap.state !== "failed") {
      this.view.setPreview(this.api.renderUrl(this.jobId, this.previewViewId));
    }

    if (isTerminal(snap.state)) {
      this.detach();
      return false;
    }
    if (this.looping) this.schedule(this.pollMs);
    return true;
  }

  async cancel(): Promise<JobSnapshot | null> {
    if (this.jobId === null) return null;
    const snap = await this.api.cancelJob(this.jobId);
    this.view.setStatus(snap);
    return snap;
  }
}
