/** Display/image coordinate mapping and box construction.
 *
 * The canvas renders the H x W label map at an integer zoom factor, so one
 * image pixel covers a zoom x zoom block of display pixels. Box corners are
 * inclusive image-pixel indices [r1, c1, r2, c2], matching the edit API.
 *
 * Continuous positions convert exactly between the two spaces (divide or
 * multiply by zoom); quantization to pixel indices happens once, when a drag
 * becomes a box. Drag edges snap to the nearest image grid line (half-up),
 * so a gesture and its snapped rectangle never disagree by more than half a
 * zoom step, and re-reading the drawn rectangle returns the same box.
 */

export interface Box {
  r1: number;
  c1: number;
  r2: number;
  c2: number;
}

export interface Drag {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface DisplayRect {
  x: number;
  y: number;
  width: number;
  height: number;
}

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(Math.max(value, lo), hi);
}

/** Continuous display position -> continuous image position. */
export function displayToImage(d: number, zoom: number): number {
  return d / zoom;
}

/** Continuous image position -> continuous display position. */
export function imageToDisplay(i: number, zoom: number): number {
  return i * zoom;
}

/** Nearest image grid line (half-up) for a display position, clamped to [0, size]. */
export function snapToGrid(d: number, zoom: number, size: number): number {
  return clamp(Math.round(displayToImage(d, zoom)), 0, size);
}

/** Normalized inclusive box from a drag gesture in display coordinates.
 *
 * Corners are normalized (top-left <= bottom-right) regardless of drag
 * direction, snapped half-up to image grid lines, and clamped in-bounds.
 * Drags that collapse to zero area after snapping are discarded (null).
 */
export function dragToBox(
  drag: Drag,
  zoom: number,
  height: number,
  width: number,
): Box | null {
  const rLo = snapToGrid(Math.min(drag.y0, drag.y1), zoom, height);
  const rHi = snapToGrid(Math.max(drag.y0, drag.y1), zoom, height);
  const cLo = snapToGrid(Math.min(drag.x0, drag.x1), zoom, width);
  const cHi = snapToGrid(Math.max(drag.x0, drag.x1), zoom, width);
  if (rLo === rHi || cLo === cHi) {
    return null;
  }
  return { r1: rLo, c1: cLo, r2: rHi - 1, c2: cHi - 1 };
}

/** Display-space rectangle covering exactly the box's image pixels. */
export function boxToDisplayRect(box: Box, zoom: number): DisplayRect {
  return {
    x: imageToDisplay(box.c1, zoom),
    y: imageToDisplay(box.r1, zoom),
    width: imageToDisplay(box.c2 - box.c1 + 1, zoom),
    height: imageToDisplay(box.r2 - box.r1 + 1, zoom),
  };
}

/** The box's corners as the API's [r1, c1, r2, c2] tuple. */
export function boxToWire(box: Box): [number, number, number, number] {
  return [box.r1, box.c1, box.r2, box.c2];
}
