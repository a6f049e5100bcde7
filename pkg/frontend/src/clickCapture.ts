// Collects the three placement clicks on a displayed view image and converts
// them from display coordinates to sub-pixel image coordinates.  This scale
// inversion is the only geometry the UI does itself.

import { ClickTarget, PointLike } from "./types.js";

// Invert the display transform of an image drawn into `rect`: the image of
// size (imageWidth, imageHeight) is stretched over rect, so an on-screen
// point maps back by removing the offset and dividing out the scale.
// Returns null for points outside the image area.
export function displayToImage(
  point: PointLike,
  rect: { left: number; top: number; width: number; height: number },
  imageWidth: number,
  imageHeight: number,
): [number, number] | null {
  const u = ((point.clientX - rect.left) / rect.width) * imageWidth;
  const v = ((point.clientY - rect.top) / rect.height) * imageHeight;
  if (u < 0 || v < 0 || u >= imageWidth || v >= imageHeight) return null;
  return [u, v];
}

export class ClickCapture {
  clicks: [number, number][] = [];

  constructor(
    private target: ClickTarget,
    private imageSize: [number, number],
    private onComplete: (clicks: [number, number][]) => void,
    private onIgnored?: (point: PointLike) => void,
  ) {}

  // Feed one pointer event.  The third in-bounds click hands the full buffer
  // to onComplete; out-of-bounds clicks only trigger the visual cue.
  handle(event: PointLike): void {
    if (this.clicks.length >= 3) return;
    const rect = this.target.getBoundingClientRect();
    const pt = displayToImage(event, rect, this.imageSize[0], this.imageSize[1]);
    if (pt === null) {
      this.onIgnored?.(event);
      return;
    }
    this.clicks.push(pt);
    if (this.clicks.length === 3) {
      this.onComplete(this.clicks.slice());
    }
  }

  reset(): void {
    this.clicks = [];
  }
}
