import { RegionDto } from "./types";

// Heatmap overlay rendering, kept free of canvas/DOM types so it can be
// unit-tested: callers hand the returned RGBA buffer to ImageData.

export interface OverlayImage {
  width: number;
  height: number;
  data: Uint8ClampedArray<ArrayBuffer>; // RGBA, row-major
}

export interface PatchRect {
  x: number; // region-local
  y: number;
  w: number;
  h: number;
}

const MAX_ALPHA = 170;

// Mirrors the service's patch partition: near-equal rectangles with
// remainder pixels absorbed by the last row/column.
export function patchLayout(region: RegionDto, gx: number, gy: number): PatchRect[] {
  const baseW = Math.floor(region.w / gx);
  const baseH = Math.floor(region.h / gy);
  const rects: PatchRect[] = [];
  for (let py = 0; py < gy; py++) {
    for (let px = 0; px < gx; px++) {
      const x = px * baseW;
      const y = py * baseH;
      const w = px === gx - 1 ? region.w - x : baseW;
      const h = py === gy - 1 ? region.h - y : baseH;
      rects.push({ x, y, w, h });
    }
  }
  return rects;
}

// Symmetric diverging map centered at zero: positive attribution is
// red, negative blue, zero fully transparent.  The scale maximum is
// max |phi| so overlays from different scans are visually comparable.
export function divergingColor(
  phi: number,
  scale: number,
): [number, number, number, number] {
  if (scale <= 0 || phi === 0) return [0, 0, 0, 0];
  const t = Math.max(-1, Math.min(1, phi / scale));
  const alpha = Math.round(Math.abs(t) * MAX_ALPHA);
  return t > 0 ? [220, 30, 30, alpha] : [30, 60, 220, alpha];
}

export function overlayScale(values: number[]): number {
  return values.reduce((acc, v) => Math.max(acc, Math.abs(v)), 0);
}

// Patch attribution spread over the patch's pixels, matching the
// service's heatmap painting (phi_i divided by the patch pixel count).
export function pixelValues(region: RegionDto, gx: number, gy: number, phis: number[]): number[] {
  if (phis.length !== gx * gy) {
    throw new Error(`expected ${gx * gy} patch values, got ${phis.length}`);
  }
  return patchLayout(region, gx, gy).map((rect, i) => phis[i] / (rect.w * rect.h));
}

export function renderOverlay(
  region: RegionDto,
  gx: number,
  gy: number,
  phis: number[],
): OverlayImage {
  const perPixel = pixelValues(region, gx, gy, phis);
  const scale = overlayScale(perPixel);
  const data = new Uint8ClampedArray(new ArrayBuffer(region.w * region.h * 4));
  const rects = patchLayout(region, gx, gy);
  rects.forEach((rect, i) => {
    const [r, g, b, a] = divergingColor(perPixel[i], scale);
    for (let y = rect.y; y < rect.y + rect.h; y++) {
      for (let x = rect.x; x < rect.x + rect.w; x++) {
        const offset = (y * region.w + x) * 4;
        data[offset] = r;
        data[offset + 1] = g;
        data[offset + 2] = b;
        data[offset + 3] = a;
      }
    }
  });
  return { width: region.w, height: region.h, data };
}
