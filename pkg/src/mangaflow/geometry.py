"""Exact axis-aligned rectangle arithmetic for layouts and layout metrics.

Coordinates are unitless fractions of the page, top-left origin, y growing
downward.  All area computations use coordinate compression over the
rectangles' own edges, so results are exact up to float arithmetic and
identical across platforms; nothing here samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "Rect",
    "MatchResult",
    "iou",
    "union_area",
    "multi_cover_area",
    "greedy_match",
    "reading_order",
]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle with positive width and height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"degenerate rect: w={self.w}, h={self.h}")

    @property
    def x1(self) -> float:
        return self.x + self.w

    @property
    def y1(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def clamped(self) -> "Rect":
        """Intersection with the unit page; raises if fully outside."""
        x0 = max(0.0, self.x)
        y0 = max(0.0, self.y)
        x1 = min(1.0, self.x1)
        y1 = min(1.0, self.y1)
        return Rect(x0, y0, x1 - x0, y1 - y0)

    def intersection_area(self, other: "Rect") -> float:
        w = min(self.x1, other.x1) - max(self.x, other.x)
        h = min(self.y1, other.y1) - max(self.y, other.y)
        if w <= 0 or h <= 0:
            return 0.0
        return w * h

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px < self.x1 and self.y <= py < self.y1


@dataclass(frozen=True)
class MatchResult:
    """One-to-one partial matching between target and generated panels.

    ``pairs`` holds (target_index, generated_index, iou_value) in selection
    order, which is descending IoU by construction.
    """

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_targets: tuple[int, ...]
    unmatched_generated: tuple[int, ...]

    @property
    def page_score(self) -> float:
        """Mean matched IoU over all targets; unmatched targets count 0."""
        n_targets = len(self.pairs) + len(self.unmatched_targets)
        if n_targets == 0:
            return 1.0 if not self.unmatched_generated else 0.0
        return sum(p[2] for p in self.pairs) / n_targets


def iou(a: Rect, b: Rect) -> float:
    """Intersection area over union area; 0 for disjoint rects."""
    inter = a.intersection_area(b)
    if inter == 0.0:
        return 0.0
    # intersection edges are recomputed from sums, so float noise can push
    # the ratio a hair past 1 for identical rects; the true value never exceeds 1
    return min(1.0, inter / (a.area + b.area - inter))


def _cell_cover_counts(rects: list[Rect]):
    """Coordinate-compressed grid with per-cell coverage counts.

    Returns (xs, ys, counts) where counts[i][j] is the number of rects
    covering the cell [xs[i], xs[i+1]) x [ys[j], ys[j+1]).
    """
    xs = sorted({v for r in rects for v in (r.x, r.x1)})
    ys = sorted({v for r in rects for v in (r.y, r.y1)})
    counts = [[0] * (len(ys) - 1) for _ in range(len(xs) - 1)]
    for r in rects:
        for i in range(len(xs) - 1):
            if xs[i] < r.x or xs[i] >= r.x1:
                continue
            for j in range(len(ys) - 1):
                if r.y <= ys[j] < r.y1:
                    counts[i][j] += 1
    return xs, ys, counts


def union_area(rects: list[Rect]) -> float:
    """Exact area of the union of ``rects``; 0 for an empty list."""
    return _cover_area(rects, 1)


def multi_cover_area(rects: list[Rect], min_count: int = 2) -> float:
    """Exact area of points covered by at least ``min_count`` rects."""
    if min_count < 2:
        raise ValueError(f"min_count must be >= 2, got {min_count}")
    return _cover_area(rects, min_count)


def _cover_area(rects: list[Rect], min_count: int) -> float:
    if not rects:
        return 0.0
    xs, ys, counts = _cell_cover_counts(rects)
    total = 0.0
    for i in range(len(xs) - 1):
        dx = xs[i + 1] - xs[i]
        col = counts[i]
        for j in range(len(ys) - 1):
            if col[j] >= min_count:
                total += dx * (ys[j + 1] - ys[j])
    return total


def greedy_match(targets: list[Rect], generated: list[Rect]) -> MatchResult:
    """Greedy one-to-one matching in descending IoU order.

    Ties break on lower target index, then lower generated index, so the
    selection transcript is deterministic.  Only pairs with IoU > 0 match.
    """
    candidates = []
    for t, tr in enumerate(targets):
        for g, gr in enumerate(generated):
            v = iou(tr, gr)
            if v > 0.0:
                candidates.append((t, g, v))

    pairs = []
    used_t: set[int] = set()
    used_g: set[int] = set()
    remaining = candidates
    while remaining:
        best = max(remaining, key=lambda c: (c[2], -c[0], -c[1]))
        pairs.append(best)
        used_t.add(best[0])
        used_g.add(best[1])
        remaining = [c for c in remaining if c[0] not in used_t and c[1] not in used_g]

    return MatchResult(
        pairs=tuple(pairs),
        unmatched_targets=tuple(t for t in range(len(targets)) if t not in used_t),
        unmatched_generated=tuple(g for g in range(len(generated)) if g not in used_g),
    )


def _band_groups(rects: list[Rect]) -> list[list[int]]:
    """Group indices into horizontal bands via 50%-overlap transitive closure."""
    n = len(rects)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            a, b = rects[i], rects[j]
            overlap = min(a.y1, b.y1) - max(a.y, b.y)
            if overlap >= 0.5 * min(a.h, b.h):
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def reading_order(rects: list[Rect]) -> list[int]:
    """Manga reading order: bands top-to-bottom, right-to-left within a band.

    Two panels share a band when the overlap of their y-extents is at least
    half the smaller panel height.  Returns a permutation of indices.
    """
    if not rects:
        return []
    bands = _band_groups(rects)
    bands.sort(key=lambda g: (min(rects[i].y for i in g), min(g)))
    order: list[int] = []
    for g in bands:
        order.extend(sorted(g, key=lambda i: (-rects[i].x1, rects[i].x, i)))
    return order
