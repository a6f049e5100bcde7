// Wireframe overlay for the placed 3D box.  Vertices come straight from the
// server's per-view projected corners; the client only rescales image pixels
// to display pixels and drops edges that touch a behind-camera corner.

import { ProjectedCorner, StrokeContext } from "./types.js";

// Corner index bit a encodes the sign along box axis a, matching the order
// of the server's corners/projections arrays.  Edges connect indices that
// differ in exactly one bit: 4 edges per axis, 12 total.
export const BOX_EDGES: ReadonlyArray<[number, number]> = (() => {
  const edges: [number, number][] = [];
  for (let i = 0; i < 8; i++) {
    for (let a = 0; a < 3; a++) {
      if (((i >> a) & 1) === 0) edges.push([i, i | (1 << a)]);
    }
  }
  return edges;
})();

export interface Segment {
  a: [number, number];
  b: [number, number];
}

// Display-space line segments for one view's overlay.  scaleX/scaleY map
// image pixels to display pixels (display_size / image_size).
export function overlaySegments(
  corners: ProjectedCorner[],
  scaleX = 1,
  scaleY = 1,
): Segment[] {
  const segments: Segment[] = [];
  for (const [i, j] of BOX_EDGES) {
    const [ui, vi, zi] = corners[i];
    const [uj, vj, zj] = corners[j];
    if (zi <= 0 || zj <= 0) continue;
    segments.push({
      a: [ui * scaleX, vi * scaleY],
      b: [uj * scaleX, vj * scaleY],
    });
  }
  return segments;
}

export function drawBoxOverlay(ctx: StrokeContext, segments: Segment[]): void {
  ctx.beginPath();
  for (const seg of segments) {
    ctx.moveTo(seg.a[0], seg.a[1]);
    ctx.lineTo(seg.b[0], seg.b[1]);
  }
  ctx.stroke();
}
