// Wire types for the scenegen service JSON API, plus the small structural
// interfaces that let the DOM-facing classes run against stubs in tests.

export interface ViewInfo {
  view_id: number;
  width: number;
  height: number;
  intrinsics: number[];    // row-major 3x3
  cam_to_world: number[];  // row-major 4x4
}

export interface ViewsResponse {
  world_scale: number;
  views: ViewInfo[];
}

export interface PlaceRequest {
  view_id: number;
  clicks: [number, number][];
  size_ratios: [number, number, number];
}

// One projected corner: pixel u, pixel v, camera-space depth.  Depth <= 0
// means the corner sits behind that camera.
export type ProjectedCorner = [number, number, number];

export interface PlaceResponse {
  box: string;
  center: number[];
  half_extents: number[];
  axes: number[][];
  corners: number[][];
  projections: { [viewId: string]: ProjectedCorner[] };
  visibility: { [viewId: string]: { pixels: number; bbox: number[] | null } };
}

export interface JobRequest {
  prompt: string;
  box: string;
  config?: { [key: string]: unknown };
}

export interface JobSnapshot {
  job_id: string;
  state: "pending" | "running" | "completed" | "failed" | "cancelled";
  prompt: string;
  step: number;
  total_steps: number;
  error: string | null;
  last_record: LossRecord | null;
}

export interface LossRecord {
  step: number;
  total?: number;
  sds?: number;
  sparsity?: number;
  entropy?: number;
  skipped?: string;
  [key: string]: unknown;
}

export interface LossResponse {
  job_id: string;
  records: LossRecord[];
}

export const TERMINAL_STATES = ["completed", "failed", "cancelled"] as const;

export function isTerminal(state: JobSnapshot["state"]): boolean {
  return (TERMINAL_STATES as readonly string[]).includes(state);
}

// Structural stand-ins for DOM objects so the logic classes are testable
// without a browser.
export interface RectLike {
  left: number;
  top: number;
  width: number;
  height: number;
}

export interface ClickTarget {
  getBoundingClientRect(): RectLike;
}

export interface PointLike {
  clientX: number;
  clientY: number;
}

export interface StrokeContext {
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
}
