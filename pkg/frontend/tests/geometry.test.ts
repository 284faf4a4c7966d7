import { describe, expect, it } from "vitest";

import {
  GRID, MIN_SIDE, applyDrag, clamp, contains, hitHandle, sameRect, snap,
} from "../src/geometry.js";

describe("snap", () => {
  it("lands on the 1/48 lattice", () => {
    expect(snap(0.603)).toBeCloseTo(29 / 48, 15);
    expect(snap(0.5)).toBe(0.5);
    expect(snap(0)).toBe(0);
    expect(snap(1)).toBe(1);
    expect(GRID).toBe(48);
  });
});

describe("hitHandle", () => {
  const r = { x: 0.2, y: 0.2, w: 0.4, h: 0.4 };

  it("resolves edges, corner, interior and misses", () => {
    expect(hitHandle(r, 0.2, 0.4, 0.02)).toBe("left");
    expect(hitHandle(r, 0.6, 0.4, 0.02)).toBe("right");
    expect(hitHandle(r, 0.4, 0.2, 0.02)).toBe("top");
    expect(hitHandle(r, 0.4, 0.6, 0.02)).toBe("bottom");
    expect(hitHandle(r, 0.6, 0.6, 0.02)).toBe("se");
    expect(hitHandle(r, 0.4, 0.4, 0.02)).toBe("move");
    expect(hitHandle(r, 0.9, 0.9, 0.02)).toBeNull();
    expect(hitHandle(r, 0.05, 0.4, 0.02)).toBeNull();
  });

  it("the corner grip wins over its two edges", () => {
    expect(hitHandle(r, 0.595, 0.605, 0.02)).toBe("se");
  });
});

describe("applyDrag", () => {
  const r = { x: 0.25, y: 0.25, w: 0.5, h: 0.5 };

  it("snaps the dragged edge", () => {
    const out = applyDrag(r, "right", 0.1, 0);
    expect(out.x).toBe(0.25);
    expect(out.w).toBeCloseTo(snap(0.85) - 0.25, 15);
  });

  it("keeps the opposite edge fixed", () => {
    const out = applyDrag(r, "left", -0.1, 0);
    expect(out.x + out.w).toBeCloseTo(0.75, 15);
  });

  it("never collapses below the minimum side", () => {
    const out = applyDrag(r, "right", -0.9, 0);
    expect(out.w).toBeGreaterThanOrEqual(MIN_SIDE - 1e-12);
  });

  it("never leaves the unit page", () => {
    const moved = applyDrag(r, "move", 5, 5);
    expect(moved.x + moved.w).toBeLessThanOrEqual(1);
    expect(moved.y + moved.h).toBeLessThanOrEqual(1);
    const pulled = applyDrag(r, "se", 5, 5);
    expect(pulled.x + pulled.w).toBeLessThanOrEqual(1);
    expect(pulled.y + pulled.h).toBeLessThanOrEqual(1);
  });

  it("move keeps the size", () => {
    const out = applyDrag(r, "move", 0.13, -0.07);
    expect(out.w).toBe(r.w);
    expect(out.h).toBe(r.h);
    expect(out.x).toBeCloseTo(snap(0.38), 15);
  });

  it("grid off leaves fractions alone", () => {
    const out = applyDrag(r, "move", 0.003, 0, { grid: false });
    expect(out.x).toBeCloseTo(0.253, 15);
  });
});

describe("small helpers", () => {
  it("contains and clamp and sameRect", () => {
    expect(contains({ x: 0, y: 0, w: 1, h: 1 }, 0.5, 0.5)).toBe(true);
    expect(contains({ x: 0, y: 0, w: 0.2, h: 0.2 }, 0.5, 0.5)).toBe(false);
    expect(clamp(5, 0, 1)).toBe(1);
    expect(clamp(-5, 0, 1)).toBe(0);
    expect(sameRect({ x: 0, y: 0, w: 1, h: 1 },
                    { x: 1e-12, y: 0, w: 1, h: 1 })).toBe(true);
  });
});
