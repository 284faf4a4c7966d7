"""Page layout model: repair, generation, templates, and raster extraction.

A layout is an ordered list of named rectangular panels on the unit page.
``project`` is the single normalization point: every layout that enters the
pipeline (user-authored, agent-proposed, template, extracted) passes through
it and comes out as a clean, overlap-free, nearly page-filling tiling.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleLayoutError, PlanError, ValidationError
from .geometry import Rect, _band_groups, reading_order

GUTTER_LUMA = 240


@dataclass(frozen=True)
class Panel:
    """One named panel region on a page."""

    panel_id: str
    region: Rect


@dataclass(frozen=True)
class Layout:
    """Ordered panels on one page; order is reading order.

    ``source`` records how the layout came to be ("user", "agent",
    "template", "extracted", "fallback_grid"). It is bookkeeping, not
    geometry: it is excluded from equality and never serialized.
    """

    page_index: int
    panels: tuple[Panel, ...]
    source: str = field(default="user", compare=False)

    def __post_init__(self):
        if len(self.panels) < 1:
            raise ValidationError("layout needs at least one panel")
        ids = [p.panel_id for p in self.panels]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate panel ids: {ids}")

    @property
    def rects(self) -> list[Rect]:
        return [p.region for p in self.panels]

    def to_dict(self) -> dict:
        return {
            "page_index": self.page_index,
            "panels": [
                {"id": p.panel_id, "x": p.region.x, "y": p.region.y,
                 "w": p.region.w, "h": p.region.h}
                for p in self.panels
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict, source: str = "user") -> "Layout":
        try:
            panels = tuple(
                Panel(str(p["id"]), Rect(float(p["x"]), float(p["y"]),
                                         float(p["w"]), float(p["h"])))
                for p in data["panels"]
            )
            return cls(int(data["page_index"]), panels, source=source)
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad layout payload: {exc}") from exc

    @classmethod
    def from_json(cls, text: str, source: str = "user") -> "Layout":
        return cls.from_dict(json.loads(text), source=source)


@dataclass(frozen=True)
class LayoutConstraints:
    """Validity envelope a projected layout is repaired toward."""

    panel_count: int
    min_panel_area: float = 0.02
    min_aspect: float = 0.2
    max_aspect: float = 5.0
    grid_resolution: int = 48

    def __post_init__(self):
        if self.panel_count < 1:
            raise ValidationError("panel_count must be >= 1")
        if self.grid_resolution < 2:
            raise ValidationError("grid_resolution must be >= 2")
        if not 0 < self.min_aspect <= self.max_aspect:
            raise ValidationError("aspect bounds must satisfy 0 < min <= max")
        if self.panel_count * self.min_panel_area > 1.0:
            raise InfeasibleLayoutError(
                f"{self.panel_count} panels x min area {self.min_panel_area} "
                "cannot fit on one page")


@dataclass(frozen=True)
class TemplateEntry:
    tags: tuple[str, ...]
    panel_count: int
    layout: Layout


@dataclass(frozen=True)
class TemplateLibrary:
    entries: tuple[TemplateEntry, ...]

    @classmethod
    def from_json(cls, text: str) -> "TemplateLibrary":
        raw = json.loads(text)
        entries = []
        for item in raw:
            layout = Layout.from_dict(item["layout"], source="template")
            entries.append(TemplateEntry(
                tags=tuple(str(t) for t in item.get("tags", [])),
                panel_count=int(item["panel_count"]),
                layout=layout))
        return cls(tuple(entries))

    def to_json(self) -> str:
        return json.dumps([
            {"tags": list(e.tags), "panel_count": e.panel_count,
             "layout": e.layout.to_dict()}
            for e in self.entries
        ], indent=2)


# ---------------------------------------------------------------------------
# Projection
#
# All repair arithmetic runs on an integer grid (cell edges at k/G) so the
# pipeline is exactly idempotent: a projected layout re-enters the grid at
# the same integer coordinates and nothing moves.
# ---------------------------------------------------------------------------


def _snap_index(v: float, grid: int) -> int:
    # explicit half-up rounding; round() would tie-break to even
    return min(grid, max(0, int(math.floor(v * grid + 0.5))))


def _to_grid(r: Rect, grid: int) -> Optional[tuple[int, int, int, int]]:
    x0 = _snap_index(r.x, grid)
    y0 = _snap_index(r.y, grid)
    x1 = _snap_index(r.x1, grid)
    y1 = _snap_index(r.y1, grid)
    if x1 <= x0:
        if x0 >= grid:
            x0 = grid - 1
        x1 = x0 + 1
    if y1 <= y0:
        if y0 >= grid:
            y0 = grid - 1
        y1 = y0 + 1
    return x0, y0, x1, y1


def _span(a: float, b: float) -> float:
    """Width w with a + w == b under float rounding, bit-exactly.

    b - a alone can be off by one ulp, which would leave sliver overlaps
    between panels that share a grid edge. A solution always exists
    because ulp(w) <= ulp(a + w) here, so the sum cannot skip over b.
    """
    w = b - a
    while a + w < b:
        w = math.nextafter(w, math.inf)
    while a + w > b:
        w = math.nextafter(w, -math.inf)
    return w


def _grid_rect(g: tuple[int, int, int, int], grid: int) -> Rect:
    x0, y0, x1, y1 = g
    x, y = x0 / grid, y0 / grid
    return Rect(x, y, _span(x, x1 / grid), _span(y, y1 / grid))


def _grid_reading_order(grects: Sequence[tuple[int, int, int, int]],
                        grid: int) -> list[int]:
    return reading_order([_grid_rect(g, grid) for g in grects])


def _shrink_against(b, a):
    """Shrink grid rect b so it no longer overlaps a; None when b is swallowed.

    The cut removing the least depth wins; ties prefer left, right, top,
    bottom in that order.
    """
    bx0, by0, bx1, by1 = b
    ax0, ay0, ax1, ay1 = a
    ox0, oy0 = max(ax0, bx0), max(ay0, by0)
    ox1, oy1 = min(ax1, bx1), min(ay1, by1)
    if ox0 >= ox1 or oy0 >= oy1:
        return b
    cuts = []
    if ox1 < bx1:
        cuts.append((ox1 - bx0, 0, (ox1, by0, bx1, by1)))
    if ox0 > bx0:
        cuts.append((bx1 - ox0, 1, (bx0, by0, ox0, by1)))
    if oy1 < by1:
        cuts.append((oy1 - by0, 2, (bx0, oy1, bx1, by1)))
    if oy0 > by0:
        cuts.append((by1 - oy0, 3, (bx0, by0, bx1, oy0)))
    if not cuts:
        return None
    cuts.sort(key=lambda c: (c[0], c[1]))
    return cuts[0][2]


def _resolve_overlaps(panels, grid):
    """Make grid rects pairwise disjoint, favoring earlier reading order."""
    if not panels:
        return []
    order = _grid_reading_order([g for _, g in panels], grid)
    accepted = []
    for idx in order:
        pid, g = panels[idx]
        for _, kept in accepted:
            g = _shrink_against(g, kept)
            if g is None:
                break
        if g is not None:
            accepted.append((pid, g))
    return accepted


def _shared_edge_len(a, b) -> int:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    if ax1 == bx0 or bx1 == ax0:
        return max(0, min(ay1, by1) - max(ay0, by0))
    if ay1 == by0 or by1 == ay0:
        return max(0, min(ax1, bx1) - max(ax0, bx0))
    return 0


def _merge_once(panels):
    """Merge one pair into its bounding box; longest shared edge wins."""
    best = None
    for i in range(len(panels)):
        for j in range(i + 1, len(panels)):
            edge = _shared_edge_len(panels[i][1], panels[j][1])
            if edge > 0 and (best is None or edge > best[0]):
                best = (edge, i, j)
    if best is None:
        # nothing adjacent: merge the pair wasting the least bounding-box area
        waste_best = None
        for i in range(len(panels)):
            for j in range(i + 1, len(panels)):
                a, b = panels[i][1], panels[j][1]
                bx0, by0 = min(a[0], b[0]), min(a[1], b[1])
                bx1, by1 = max(a[2], b[2]), max(a[3], b[3])
                area = lambda g: (g[2] - g[0]) * (g[3] - g[1])
                waste = (bx1 - bx0) * (by1 - by0) - area(a) - area(b)
                if waste_best is None or waste < waste_best[0]:
                    waste_best = (waste, i, j)
        _, i, j = waste_best
    else:
        _, i, j = best
    a, b = panels[i][1], panels[j][1]
    box = (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))
    merged = [(panels[k][0], panels[k][1]) for k in range(len(panels))
              if k not in (i, j)]
    merged.insert(i, (panels[i][0], box))
    return merged


def _fresh_id(existing: set[str], base: str) -> str:
    cand = base + "b"
    while cand in existing:
        cand += "b"
    return cand


def _split_once(panels):
    """Split the largest panel across its longer axis."""
    areas = [(g[2] - g[0]) * (g[3] - g[1]) for _, g in panels]
    splittable = [k for k, (_, g) in enumerate(panels)
                  if g[2] - g[0] >= 2 or g[3] - g[1] >= 2]
    if not splittable:
        return panels
    k = max(splittable, key=lambda i: (areas[i], -i))
    pid, (x0, y0, x1, y1) = panels[k]
    existing = {p for p, _ in panels}
    new_id = _fresh_id(existing, pid)
    if x1 - x0 >= y1 - y0:
        cut = x0 + (x1 - x0) // 2
        # right half keeps the id: it is read first
        halves = [(pid, (cut, y0, x1, y1)), (new_id, (x0, y0, cut, y1))]
    else:
        cut = y0 + (y1 - y0) // 2
        halves = [(pid, (x0, y0, x1, cut)), (new_id, (x0, cut, x1, y1))]
    out = list(panels)
    out[k:k + 1] = halves
    return out


def _fill_blanks(panels, grid):
    """Grow panels one full side strip at a time into uncovered cells."""
    cover = np.zeros((grid, grid), dtype=bool)
    for _, (x0, y0, x1, y1) in panels:
        cover[y0:y1, x0:x1] = True
    panels = list(panels)
    changed = True
    while changed:
        changed = False
        for k, (pid, (x0, y0, x1, y1)) in enumerate(panels):
            while x0 > 0 and not cover[y0:y1, x0 - 1].any():
                x0 -= 1
                cover[y0:y1, x0] = True
                changed = True
            while y0 > 0 and not cover[y0 - 1, x0:x1].any():
                y0 -= 1
                cover[y0, x0:x1] = True
                changed = True
            while x1 < grid and not cover[y0:y1, x1].any():
                cover[y0:y1, x1] = True
                x1 += 1
                changed = True
            while y1 < grid and not cover[y1, x0:x1].any():
                cover[y1, x0:x1] = True
                y1 += 1
                changed = True
            panels[k] = (pid, (x0, y0, x1, y1))
    return panels, bool(cover.all())


def _partition(total: int, weights: Sequence[float]) -> list[int]:
    """Split `total` cells into len(weights) positive parts, proportionally."""
    cuts = [0]
    acc = 0.0
    wsum = sum(weights)
    n = len(weights)
    for k, w in enumerate(weights, start=1):
        acc += w
        c = int(math.floor(total * acc / wsum + 0.5))
        c = max(c, cuts[-1] + 1)
        c = min(c, total - (n - k))
        cuts.append(c)
    cuts[-1] = total
    return [cuts[i + 1] - cuts[i] for i in range(n)]


def _retile(panels, grid):
    """Rebuild an exact tiling from the reading-order band structure.

    Last-resort repair for layouts whose blank regions no straight side
    strip can absorb (pinwheel-style holes). Bands keep their relative
    heights, panels keep their relative widths and reading order.
    """
    rects = [_grid_rect(g, grid) for _, g in panels]
    groups = _band_groups(rects)
    groups = sorted(groups, key=lambda g: (min(rects[i].y for i in g), min(g)))
    heights = [max(g[3] - g[1] for _, g in (panels[i] for i in band))
               for band in groups]
    band_h = _partition(grid, heights)
    out = []
    y = 0
    for band, h in zip(groups, band_h):
        rtl = sorted(band, key=lambda i: (-rects[i].x1, rects[i].x, i))
        ltr = list(reversed(rtl))
        widths = [panels[i][1][2] - panels[i][1][0] for i in ltr]
        xs = _partition(grid, widths)
        x = 0
        for i, w in zip(ltr, xs):
            out.append((panels[i][0], (x, y, x + w, y + h)))
            x += w
        y += h
    return out


def project(layout: Layout, constraints: LayoutConstraints) -> Layout:
    """Repair a layout into a clean page tiling.

    Pipeline, in order: clamp to the page, snap edges to the constraint
    grid, resolve overlaps by shrinking the later panel along its axis of
    least penetration, merge or split until the panel count matches, grow
    panels into blank cells, and re-sort into reading order. Deterministic
    and idempotent; the output covers the page with zero panel overlap.
    """
    grid = constraints.grid_resolution
    panels = []
    for p in layout.panels:
        try:
            clamped = p.region.clamped()
        except ValueError:
            continue  # fully off the page
        panels.append((p.panel_id, _to_grid(clamped, grid)))
    if not panels:
        base = layout.panels[0].panel_id
        panels = [(base, (0, 0, grid, grid))]

    panels = _resolve_overlaps(panels, grid)
    while len(panels) > constraints.panel_count:
        panels = _merge_once(panels)
        panels = _resolve_overlaps(panels, grid)
    while len(panels) < constraints.panel_count:
        grown = _split_once(panels)
        if len(grown) == len(panels):
            break
        panels = grown

    panels, full = _fill_blanks(panels, grid)
    if not full:
        panels = _retile(panels, grid)

    rects = [_grid_rect(g, grid) for _, g in panels]
    order = reading_order(rects)
    ordered = tuple(Panel(panels[i][0], rects[i]) for i in order)
    return Layout(layout.page_index, ordered, source=layout.source)


# ---------------------------------------------------------------------------
# Generation and refinement
# ---------------------------------------------------------------------------

_LAYOUT_SCHEMA_HINT = (
    '{"page_index": <int>, "panels": [{"id": "p0", "x": <0..1>, '
    '"y": <0..1>, "w": <0..1>, "h": <0..1>}, ...]}'
)

_LAYOUT_SYSTEM = (
    "You are a manga page layout designer. Pages read right to left, top to "
    "bottom. Panels are axis-aligned rectangles in fractional page "
    "coordinates (origin top-left). Reply with a single JSON object and "
    "nothing else."
)


def _parse_layout_reply(text: str, page_index: int) -> Layout:
    snippet = text
    start = text.find("{")
    end = text.rfind("}")
    if start >= 0 and end > start:
        snippet = text[start:end + 1]
    try:
        data = json.loads(snippet)
    except json.JSONDecodeError as exc:
        raise PlanError(f"layout reply is not valid JSON: {exc}",
                        raw_text=text) from exc
    if not isinstance(data, dict) or not isinstance(data.get("panels"), list):
        raise PlanError("layout reply missing a panels array", raw_text=text)
    seen: set = set()
    panels = []
    for k, item in enumerate(data["panels"]):
        if not isinstance(item, dict):
            raise PlanError("panel entries must be objects", raw_text=text)
        pid = str(item.get("id", f"p{k}"))
        if pid in seen:
            pid = f"p{k}"
        seen.add(pid)
        try:
            rect = Rect(float(item["x"]), float(item["y"]),
                        float(item["w"]), float(item["h"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanError(f"panel {k} has bad geometry: {exc}",
                            raw_text=text) from exc
        panels.append(Panel(pid, rect))
    if not panels:
        raise PlanError("layout reply has zero panels", raw_text=text)
    return Layout(page_index, tuple(panels), source="agent")


def uniform_grid_layout(panel_count: int, page_index: int = 0,
                        source: str = "fallback_grid") -> Layout:
    """Near-square grid of equal panels, ids assigned in reading order."""
    rows = max(1, round(math.sqrt(panel_count)))
    base, extra = divmod(panel_count, rows)
    per_row = [base + (1 if r < extra else 0) for r in range(rows)]
    per_row = [c for c in per_row if c > 0]
    rects = []
    h = 1.0 / len(per_row)
    for r, cols in enumerate(per_row):
        w = 1.0 / cols
        for c in range(cols):
            rects.append(Rect(c * w, r * h, w, h))
    order = reading_order(rects)
    panels = tuple(Panel(f"p{k}", rects[i]) for k, i in enumerate(order))
    return Layout(page_index, panels, source=source)


def generate_layout(page_context: str, constraints: LayoutConstraints,
                    gateway=None, page_index: int = 0) -> Layout:
    """Ask the chat agent for a page layout; fall back to a uniform grid.

    The agent gets two repair attempts after a malformed reply (the parse
    error is appended to the conversation). Gateway failure or absence
    produces the grid fallback, flagged via ``layout.source``.
    """
    from .errors import GatewayError

    fallback = project(uniform_grid_layout(constraints.panel_count,
                                           page_index), constraints)
    if gateway is None:
        return fallback
    messages = [
        {"role": "system", "content": _LAYOUT_SYSTEM},
        {"role": "user", "content": (
            f"Design a manga page layout with exactly "
            f"{constraints.panel_count} panels.\n"
            f"Page context: {page_context}\n"
            f"Every panel area must be at least {constraints.min_panel_area} "
            f"of the page; width/height ratios must stay within "
            f"[{constraints.min_aspect}, {constraints.max_aspect}]. Vary "
            f"panel sizes to match the pacing of the context.\n"
            f"Reply with JSON of the form: {_LAYOUT_SCHEMA_HINT}")},
    ]
    for _ in range(3):
        try:
            reply = gateway.chat(messages)
        except GatewayError:
            return fallback
        try:
            parsed = _parse_layout_reply(reply, page_index)
        except PlanError as exc:
            messages = messages + [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": (
                    f"That reply could not be used: {exc}. "
                    f"Reply again with only JSON of the form: "
                    f"{_LAYOUT_SCHEMA_HINT}")},
            ]
            continue
        return project(parsed, constraints)
    return fallback


def _layout_issues(layout: Layout, constraints: LayoutConstraints) -> list[str]:
    issues = []
    areas = []
    for p in layout.panels:
        r = p.region
        areas.append(r.area)
        if r.area < constraints.min_panel_area:
            issues.append(f"panel {p.panel_id} area {r.area:.4f} is below "
                          f"the minimum {constraints.min_panel_area}")
        aspect = r.w / r.h
        if not constraints.min_aspect <= aspect <= constraints.max_aspect:
            issues.append(f"panel {p.panel_id} aspect {aspect:.2f} is outside "
                          f"[{constraints.min_aspect}, {constraints.max_aspect}]")
    if len(areas) > 1:
        mean = sum(areas) / len(areas)
        var = sum((a - mean) ** 2 for a in areas) / len(areas)
        if var < 1e-4:
            issues.append("panel sizes are nearly uniform; vary them for pacing")
    return issues


def _passes(layout: Layout, constraints: LayoutConstraints) -> float:
    """Fraction of panels meeting the area and aspect bounds."""
    ok = 0
    for p in layout.panels:
        r = p.region
        aspect = r.w / r.h
        if (r.area >= constraints.min_panel_area
                and constraints.min_aspect <= aspect <= constraints.max_aspect):
            ok += 1
    return ok / len(layout.panels)


def refine_layout(layout: Layout, page_context: str,
                  constraints: LayoutConstraints, gateway=None,
                  max_rounds: int = 2) -> Layout:
    """Critique-and-revise loop over an already projected layout.

    Returns the first revision in which every panel meets the area and
    aspect bounds; otherwise the best candidate by pass fraction (the
    input layout competes too, and wins ties).
    """
    from .errors import GatewayError

    if _passes(layout, constraints) == 1.0 or gateway is None:
        return layout
    best = layout
    best_score = _passes(layout, constraints)
    current = layout
    for _ in range(max_rounds):
        issues = _layout_issues(current, constraints)
        messages = [
            {"role": "system", "content": _LAYOUT_SYSTEM},
            {"role": "user", "content": (
                f"Revise this manga page layout.\n"
                f"Page context: {page_context}\n"
                f"Current layout: {json.dumps(current.to_dict())}\n"
                f"Problems found: {'; '.join(issues) if issues else 'none'}\n"
                f"Keep exactly {constraints.panel_count} panels. Reply with "
                f"JSON of the form: {_LAYOUT_SCHEMA_HINT}")},
        ]
        try:
            reply = gateway.chat(messages)
            proposal = _parse_layout_reply(reply, layout.page_index)
        except (GatewayError, PlanError):
            continue
        candidate = project(proposal, constraints)
        score = _passes(candidate, constraints)
        if score == 1.0:
            return candidate
        if score > best_score:
            best, best_score = candidate, score
        current = candidate
    return best


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


def retrieve_template(library: TemplateLibrary, panel_count: int,
                      tags: Sequence[str] = ()) -> Optional[Layout]:
    """Best tag-overlap entry with the requested panel count, else None."""
    wanted = set(tags)
    best = None
    best_overlap = -1
    for entry in library.entries:
        if entry.panel_count != panel_count:
            continue
        overlap = len(wanted & set(entry.tags))
        if overlap > best_overlap:
            best, best_overlap = entry, overlap
    if best is None:
        return None
    return dataclasses.replace(best.layout, source="template")


def _tiling(page_index, *rows):
    """Rows of (x, w) spans sharing a (y, h) band; builds a full tiling.

    The result is stored in projected form so library entries are exact
    fixpoints of ``project``.
    """
    panels = []
    for (y, h), spans in rows:
        for x, w in spans:
            panels.append(Rect(x, y, w, h))
    order = reading_order(panels)
    named = tuple(Panel(f"p{i}", panels[j]) for i, j in enumerate(order))
    layout = Layout(page_index, named, source="template")
    return project(layout, LayoutConstraints(panel_count=len(named)))


def default_library() -> TemplateLibrary:
    """Built-in page templates, all exact grid-aligned tilings."""
    H = 0.5
    T = 1 / 3
    entries = [
        TemplateEntry(("splash", "cover", "climax"), 1, _tiling(
            0, ((0.0, 1.0), [(0.0, 1.0)]))),
        TemplateEntry(("dialogue", "calm"), 2, _tiling(
            0, ((0.0, H), [(0.0, 1.0)]), ((H, H), [(0.0, 1.0)]))),
        TemplateEntry(("action", "confrontation"), 2, _tiling(
            0, ((0.0, 1.0), [(0.0, H), (H, H)]))),
        TemplateEntry(("establishing", "dialogue"), 3, _tiling(
            0, ((0.0, H), [(0.0, 1.0)]), ((H, H), [(0.0, H), (H, H)]))),
        TemplateEntry(("sequence", "calm"), 3, _tiling(
            0, ((0.0, T), [(0.0, 1.0)]), ((T, T), [(0.0, 1.0)]),
            ((2 * T, T), [(0.0, 1.0)]))),
        TemplateEntry(("grid", "dialogue"), 4, _tiling(
            0, ((0.0, H), [(0.0, H), (H, H)]),
            ((H, H), [(0.0, H), (H, H)]))),
        TemplateEntry(("action", "climax"), 4, _tiling(
            0, ((0.0, T), [(0.0, H), (H, H)]), ((T, T), [(0.0, 1.0)]),
            ((2 * T, T), [(0.0, 1.0)]))),
        TemplateEntry(("dense", "action"), 5, _tiling(
            0, ((0.0, T), [(0.0, H), (H, H)]), ((T, T), [(0.0, 1.0)]),
            ((2 * T, T), [(0.0, H), (H, H)]))),
        TemplateEntry(("grid", "montage"), 6, _tiling(
            0, ((0.0, T), [(0.0, H), (H, H)]), ((T, T), [(0.0, H), (H, H)]),
            ((2 * T, T), [(0.0, H), (H, H)]))),
    ]
    return TemplateLibrary(tuple(entries))


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


def _gutter_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, end) runs of True values."""
    runs = []
    start = None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def _xy_cut(gutter: np.ndarray, x0: int, y0: int, x1: int, y1: int,
            depth: int, max_depth: int, leaves: list):
    sub = gutter[y0:y1, x0:x1]
    rows = np.flatnonzero((~sub).any(axis=1))
    if rows.size == 0:
        return
    cols = np.flatnonzero((~sub).any(axis=0))
    y0, y1 = y0 + int(rows[0]), y0 + int(rows[-1]) + 1
    x0, x1 = x0 + int(cols[0]), x0 + int(cols[-1]) + 1
    if depth < max_depth:
        sub = gutter[y0:y1, x0:x1]
        w, h = x1 - x0, y1 - y0
        vruns = [r for r in _gutter_runs(sub.all(axis=0))
                 if r[1] - r[0] >= 0.01 * w]
        hruns = [r for r in _gutter_runs(sub.all(axis=1))
                 if r[1] - r[0] >= 0.01 * h]
        vbest = max(vruns, key=lambda r: r[1] - r[0], default=None)
        hbest = max(hruns, key=lambda r: r[1] - r[0], default=None)
        both = [(r[1] - r[0], axis, r)
                for axis, r in (("v", vbest), ("h", hbest)) if r is not None]
        if both:
            # widest band wins; on a tie the vertical cut goes first
            both.sort(key=lambda t: (-t[0], t[1]))
            _, axis, (s, e) = both[0]
            if axis == "v":
                _xy_cut(gutter, x0, y0, x0 + s, y1, depth + 1, max_depth, leaves)
                _xy_cut(gutter, x0 + e, y0, x1, y1, depth + 1, max_depth, leaves)
            else:
                _xy_cut(gutter, x0, y0, x1, y0 + s, depth + 1, max_depth, leaves)
                _xy_cut(gutter, x0, y0 + e, x1, y1, depth + 1, max_depth, leaves)
            return
    leaves.append((x0, y0, x1, y1))


def extract_layout(page_image, max_depth: int = 4) -> Layout:
    """Recover a panel layout from a rendered page via recursive gutter cuts.

    Pixels with luma >= 240 count as gutter. The region is trimmed to its
    content box, then split on the widest gutter band spanning the full
    width or height (bands thinner than 1% of the region are noise), and
    the recursion repeats on each side. Leaves become panels.
    """
    if isinstance(page_image, (str, Path)):
        from PIL import Image

        with Image.open(page_image) as im:
            arr = np.asarray(im.convert("L"))
    else:
        arr = np.asarray(page_image.convert("L")
                         if hasattr(page_image, "convert") else page_image)
    h, w = arr.shape
    gutter = arr >= GUTTER_LUMA
    leaves: list = []
    _xy_cut(gutter, 0, 0, w, h, 0, max_depth, leaves)
    if not leaves:
        panels = (Panel("p0", Rect(0.0, 0.0, 1.0, 1.0)),)
        return Layout(0, panels, source="extracted")
    rects = [Rect(x0 / w, y0 / h, (x1 - x0) / w, (y1 - y0) / h)
             for x0, y0, x1, y1 in leaves]
    order = reading_order(rects)
    panels = tuple(Panel(f"p{k}", rects[i]) for k, i in enumerate(order))
    layout = Layout(0, panels, source="extracted")
    return project(layout, LayoutConstraints(panel_count=len(panels)))
