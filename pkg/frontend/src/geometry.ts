// Page-fraction rectangle math shared by the editors. Coordinates are
// fractions of the page, x growing right and y growing down.

export interface RectShape {
  x: number;
  y: number;
  w: number;
  h: number;
}

export const GRID = 48;
export const MIN_SIDE = 1 / GRID;

export type Handle = "move" | "left" | "right" | "top" | "bottom" | "se";

export function snap(v: number): number {
  return Math.round(v * GRID) / GRID;
}

export function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}

export function contains(r: RectShape, x: number, y: number): boolean {
  return x >= r.x && x <= r.x + r.w && y >= r.y && y <= r.y + r.h;
}

/** Classify a pointer position against one rect.
 *
 * Checks the south-east corner first (resize grip), then the four
 * edges, then the interior. `tol` is the grab distance in page
 * fractions; returns null when the pointer misses entirely.
 */
export function hitHandle(r: RectShape, x: number, y: number,
                          tol: number): Handle | null {
  const x1 = r.x + r.w;
  const y1 = r.y + r.h;
  const nearX = x >= r.x - tol && x <= x1 + tol;
  const nearY = y >= r.y - tol && y <= y1 + tol;
  if (!nearX || !nearY) return null;
  if (Math.abs(x - x1) <= tol && Math.abs(y - y1) <= tol) return "se";
  if (Math.abs(x - r.x) <= tol) return "left";
  if (Math.abs(x - x1) <= tol) return "right";
  if (Math.abs(y - r.y) <= tol) return "top";
  if (Math.abs(y - y1) <= tol) return "bottom";
  if (contains(r, x, y)) return "move";
  return null;
}

export interface DragOptions {
  grid?: boolean;     // snap dragged edges to the 1/GRID lattice
  minSide?: number;
}

/** Apply a drag delta to `start` and return the resulting rect.
 *
 * The dragged edge lands on the snap lattice when `grid` is set; the
 * rect never leaves the unit page and never collapses below
 * `minSide`. The opposite edge stays put except for "move".
 */
export function applyDrag(start: RectShape, handle: Handle,
                          dx: number, dy: number,
                          opts: DragOptions = {}): RectShape {
  const grid = opts.grid !== false;
  const minSide = opts.minSide ?? MIN_SIDE;
  const fit = (v: number) => (grid ? snap(v) : v);

  let { x, y, w, h } = start;
  const x1 = x + w;
  const y1 = y + h;

  if (handle === "move") {
    x = clamp(fit(x + dx), 0, 1 - w);
    y = clamp(fit(y + dy), 0, 1 - h);
    return { x, y, w, h };
  }
  if (handle === "left") {
    x = clamp(fit(start.x + dx), 0, x1 - minSide);
    w = x1 - x;
  } else if (handle === "right") {
    const nx1 = clamp(fit(x1 + dx), x + minSide, 1);
    w = nx1 - x;
  } else if (handle === "top") {
    y = clamp(fit(start.y + dy), 0, y1 - minSide);
    h = y1 - y;
  } else if (handle === "bottom") {
    const ny1 = clamp(fit(y1 + dy), y + minSide, 1);
    h = ny1 - y;
  } else {
    // south-east grip moves both trailing edges
    const nx1 = clamp(fit(x1 + dx), x + minSide, 1);
    const ny1 = clamp(fit(y1 + dy), y + minSide, 1);
    w = nx1 - x;
    h = ny1 - y;
  }
  return { x, y, w, h };
}

export function sameRect(a: RectShape, b: RectShape, eps = 1e-9): boolean {
  return Math.abs(a.x - b.x) <= eps && Math.abs(a.y - b.y) <= eps &&
         Math.abs(a.w - b.w) <= eps && Math.abs(a.h - b.h) <= eps;
}
