"""Bubble placement and lettering for composed pages.

The placement procedure is greedy candidate scoring: a fixed candidate
set per panel, a documented cost with configurable weights, earliest
candidate winning ties. All geometry is page-normalized; pixel space
appears only in text metrics and rasterization.
"""

from __future__ import annotations

import json
import math
import textwrap
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from PIL import Image, ImageDraw, ImageFont

from .composing import PageArtifact
from .errors import GatewayError, LetteringError, ValidationError
from .gateway import ImageRef
from .geometry import Rect
from .planning import BUBBLE_KINDS, DialogueLine, PageSpec

WRAP_CHARS = 16
PAD_EM = 0.6
ELLIPSE_FACTOR = math.sqrt(2.0)
SHOUT_FACTOR = 1.35

# score weights: fractions of bubble area for overlaps, page-normalized
# distance for the speaker term, violation count for reading order
W_SUBJECT = 1.0
W_DISTANCE = 0.5
W_ORDER = 2.0
W_OVERFLOW = 4.0
W_BUBBLE = 3.0

ANCHOR_KINDS = ("face", "subject")


@dataclass(frozen=True)
class AnchorBox:
    """Face or subject box guiding bubble placement, page-normalized."""

    panel_id: str
    kind: str
    region: Rect
    label: Optional[str] = None
    synthetic: bool = False

    def __post_init__(self):
        if self.kind not in ANCHOR_KINDS:
            raise ValidationError(f"unknown anchor kind {self.kind!r}")


@dataclass(frozen=True)
class TextElement:
    kind: str
    text: str
    speaker: Optional[str]
    bubble: Rect
    tail_to: Optional[tuple[float, float]]
    panel_id: str
    order_index: int
    font_px: int = 28
    overflow: bool = False
    rtl_violation: bool = False

    def __post_init__(self):
        if self.kind not in BUBBLE_KINDS:
            raise ValidationError(f"unknown bubble kind {self.kind!r}")
        b = self.bubble
        if b.x < -1e-9 or b.y < -1e-9 or b.x + b.w > 1 + 1e-9 \
                or b.y + b.h > 1 + 1e-9:
            raise ValidationError(
                f"bubble for element {self.order_index} leaves the page")

    def to_dict(self, page_px: Optional[tuple[int, int]] = None) -> dict:
        doc = {
            "kind": self.kind, "text": self.text, "speaker": self.speaker,
            "bubble": {"x": self.bubble.x, "y": self.bubble.y,
                       "w": self.bubble.w, "h": self.bubble.h},
            "tail_to": list(self.tail_to) if self.tail_to else None,
            "panel_id": self.panel_id, "order_index": self.order_index,
            "font_px": self.font_px, "overflow": self.overflow,
            "rtl_violation": self.rtl_violation,
        }
        if page_px:
            W, H = page_px
            doc["bubble_px"] = [round(self.bubble.x * W),
                                round(self.bubble.y * H),
                                round(self.bubble.w * W),
                                round(self.bubble.h * H)]
            if self.tail_to:
                doc["tail_to_px"] = [round(self.tail_to[0] * W),
                                     round(self.tail_to[1] * H)]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TextElement":
        b = doc["bubble"]
        tail = doc.get("tail_to")
        return cls(kind=doc["kind"], text=doc["text"],
                   speaker=doc.get("speaker"),
                   bubble=Rect(b["x"], b["y"], b["w"], b["h"]),
                   tail_to=tuple(tail) if tail else None,
                   panel_id=doc["panel_id"],
                   order_index=doc["order_index"],
                   font_px=doc.get("font_px", 28),
                   overflow=doc.get("overflow", False),
                   rtl_violation=doc.get("rtl_violation", False))


# ---------------------------------------------------------------------------
# Fonts
# ---------------------------------------------------------------------------


def font_path() -> str:
    path = resources.files("mangaflow").joinpath(
        "assets/fonts/DejaVuSans.ttf")
    with resources.as_file(path) as p:
        if not p.exists():
            raise LetteringError(f"bundled font missing at {p}")
        return str(p)


@lru_cache(maxsize=32)
def _font(size: int) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(font_path(), size)


def ensure_font() -> None:
    """Fail fast if the bundled font is unavailable."""
    _font(16)


# ---------------------------------------------------------------------------
# Anchor detection
# ---------------------------------------------------------------------------

_ANCHOR_SYSTEM = (
    "You are a manga layout assistant. You receive one composed manga page "
    "image and a list of panels with their pixel rectangles and dialogue "
    "speakers. Return strict JSON: a list of boxes, each "
    '{"panel_id": str, "kind": "face"|"subject", '
    '"x": float, "y": float, "w": float, "h": float, "label": str|null}. '
    "Coordinates are page-normalized in [0,1]. Mark speaker head boxes as "
    "kind face with the speaker name as label; mark the main subject of "
    "each panel as kind subject. Return JSON only."
)


def _strip_fences(text: str) -> str:
    t = text.strip()
    if t.startswith("```"):
        t = t.split("\n", 1)[1] if "\n" in t else ""
        if t.rstrip().endswith("```"):
            t = t.rstrip()[:-3]
    return t.strip()


def _center_anchor(panel_id: str, norm: Rect) -> AnchorBox:
    w = norm.w / 5
    h = norm.h / 5
    return AnchorBox(panel_id=panel_id, kind="subject",
                     region=Rect(norm.x + (norm.w - w) / 2,
                                 norm.y + (norm.h - h) / 2, w, h),
                     synthetic=True)


def _norm_placements(page: PageArtifact,
                     page_px: tuple[int, int]) -> dict[str, Rect]:
    W, H = page_px
    return {pid: Rect(x / W, y / H, w / W, h / H)
            for pid, (x, y, w, h) in page.panel_placements}


def detect_anchors(page: PageArtifact, plan_page: PageSpec, gateway,
                   page_px: tuple[int, int] = (1488, 2104)) -> list[AnchorBox]:
    """One multimodal call per page; degraded centers when it fails.

    Boxes naming unknown panels or carrying bad numbers are dropped;
    surviving boxes are clipped to their panel. Panels left without any
    box get a synthetic center subject anchor.
    """
    placements = _norm_placements(page, page_px)
    speakers = sorted({d.speaker for p in plan_page.panels
                       for d in p.dialogue if d.speaker})
    panel_desc = [{"panel_id": pid,
                   "rect": [placements[pid].x, placements[pid].y,
                            placements[pid].w, placements[pid].h]}
                  for pid, _ in page.panel_placements]
    user = (f"Panels: {json.dumps(panel_desc)}\n"
            f"Dialogue speakers: {json.dumps(speakers)}")

    anchors: list[AnchorBox] = []
    degraded = False
    try:
        reply = gateway.chat(
            [{"role": "system", "content": _ANCHOR_SYSTEM},
             {"role": "user", "content": user,
              "images": [ImageRef(page.image_path)]}],
            temperature=0.0, seed=page.page_index)
        for doc in json.loads(_strip_fences(reply)):
            try:
                pid = doc["panel_id"]
                if pid not in placements:
                    continue
                kind = doc.get("kind", "subject")
                if kind not in ANCHOR_KINDS:
                    continue
                box = Rect(float(doc["x"]), float(doc["y"]),
                           float(doc["w"]), float(doc["h"]))
                clipped = _clip(box, placements[pid])
                anchors.append(AnchorBox(panel_id=pid, kind=kind,
                                         region=clipped,
                                         label=doc.get("label")))
            except (KeyError, TypeError, ValueError):
                continue
    except (GatewayError, json.JSONDecodeError, TypeError):
        anchors = []
        degraded = True

    covered = {a.panel_id for a in anchors}
    for pid, norm in placements.items():
        if pid not in covered:
            anchors.append(_center_anchor(pid, norm))
    if degraded:
        # every anchor synthetic marks the page as degraded downstream
        anchors = [replace(a, synthetic=True) for a in anchors]
    return anchors


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------


def _wrap(text: str) -> list[str]:
    lines = textwrap.wrap(text, width=WRAP_CHARS) or [""]
    return lines


def _text_block_px(lines: list[str], size: int) -> tuple[int, int]:
    f = _font(size)
    widths = [f.getbbox(line)[2] for line in lines]
    line_h = int(size * 1.3)
    return max(widths) if widths else size, line_h * len(lines)


def _bubble_dims_px(kind: str, text: str, size: int) -> tuple[int, int]:
    w, h = _text_block_px(_wrap(text), size)
    pad = 2 * int(PAD_EM * size)
    w += pad
    h += pad
    if kind in ("speech", "thought"):
        return int(w * ELLIPSE_FACTOR), int(h * ELLIPSE_FACTOR)
    if kind == "shout":
        return int(w * SHOUT_FACTOR), int(h * SHOUT_FACTOR)
    return w, h


def _clip(box: Rect, bounds: Rect) -> Rect:
    """Intersection of two rects; raises ValueError when disjoint."""
    x0 = max(box.x, bounds.x)
    y0 = max(box.y, bounds.y)
    x1 = min(box.x1, bounds.x1)
    y1 = min(box.y1, bounds.y1)
    return Rect(x0, y0, x1 - x0, y1 - y0)


def _candidates(placement: Rect, bw: float, bh: float,
                page=(1.0, 1.0)) -> list[Rect]:
    """13 candidate bubbles: 3x3 interior grid (rows top to bottom, RTL
    within a row) then the four edge midpoints (top, right, bottom,
    left). Bubbles are clamped to the page, never to the panel."""
    points = []
    for fy in (0.25, 0.5, 0.75):
        for fx in (0.75, 0.5, 0.25):
            points.append((placement.x + fx * placement.w,
                           placement.y + fy * placement.h))
    points.extend([
        (placement.x + 0.5 * placement.w, placement.y),
        (placement.x + placement.w, placement.y + 0.5 * placement.h),
        (placement.x + 0.5 * placement.w, placement.y + placement.h),
        (placement.x, placement.y + 0.5 * placement.h),
    ])
    out = []
    for cx, cy in points:
        x = min(max(cx - bw / 2, 0.0), page[0] - bw)
        y = min(max(cy - bh / 2, 0.0), page[1] - bh)
        out.append(Rect(x, y, bw, bh))
    return out


def _band_overlap(a: Rect, b: Rect) -> bool:
    inter = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return inter > 0 and inter >= 0.5 * min(a.h, b.h)


def _order_violations(candidate: Rect, placed: list[Rect]) -> int:
    """Count earlier bubbles this candidate would sit right of or above."""
    cx, cy = candidate.x + candidate.w / 2, candidate.y + candidate.h / 2
    count = 0
    for earlier in placed:
        ex, ey = earlier.x + earlier.w / 2, earlier.y + earlier.h / 2
        if _band_overlap(candidate, earlier):
            if cx > ex:
                count += 1
        elif cy < ey:
            count += 1
    return count


def _speaker_anchor(anchors: list[AnchorBox],
                    speaker: Optional[str]) -> Optional[AnchorBox]:
    if not speaker:
        return None
    low = speaker.lower()
    labeled = [a for a in anchors if a.label and a.label.lower() == low]
    for a in labeled:
        if a.kind == "face":
            return a
    return labeled[0] if labeled else None


def place_bubbles(placement: Rect, dialogue: list[DialogueLine],
                  anchors: list[AnchorBox], config,
                  panel_id: str = "", start_index: int = 0) -> list[TextElement]:
    """Greedy placement of a panel's dialogue in narrative order.

    Score terms are fractions of bubble area (anchor overlap, overflow,
    bubble-on-bubble), page-normalized distance to the speaker anchor,
    and a reading-order violation count. Face occlusion is forbidden
    outright whenever any candidate avoids every face.
    """
    if not dialogue:
        return []
    if not panel_id and anchors:
        panel_id = anchors[0].panel_id
    if panel_id:
        anchors = [a for a in anchors if a.panel_id == panel_id]
    faces = [a for a in anchors if a.kind == "face"]
    subjects = [a for a in anchors if a.kind == "subject"]
    W, H = config.page_px

    placed: list[Rect] = []
    out: list[TextElement] = []
    for k, line in enumerate(dialogue):
        size = config.font_px
        overflow = False
        while True:
            bw_px, bh_px = _bubble_dims_px(line.kind, line.text, size)
            fits = (bw_px <= placement.w * W and bh_px <= placement.h * H)
            if fits or size <= config.min_font_px:
                overflow = not fits
                break
            size = max(config.min_font_px, size - 2)
        bw, bh = min(bw_px / W, 1.0), min(bh_px / H, 1.0)

        cands = _candidates(placement, bw, bh)
        speaker = _speaker_anchor(anchors, line.speaker)

        face_areas = [sum(c.intersection_area(f.region) for f in faces)
                      for c in cands]
        face_free = any(a == 0.0 for a in face_areas)

        best = None
        for i, cand in enumerate(cands):
            if face_free and face_areas[i] > 0.0:
                continue
            area = bw * bh
            score = 0.0
            hit = sum(cand.intersection_area(s.region) for s in subjects)
            score += W_SUBJECT * (hit + face_areas[i]) / area
            if speaker:
                sx = speaker.region.x + speaker.region.w / 2
                sy = speaker.region.y + speaker.region.h / 2
                cx, cy = cand.x + bw / 2, cand.y + bh / 2
                score += W_DISTANCE * math.hypot(cx - sx, cy - sy)
            violations = _order_violations(cand, placed)
            score += W_ORDER * violations
            outside = area - cand.intersection_area(placement)
            score += W_OVERFLOW * outside / area
            covered = sum(cand.intersection_area(p) for p in placed)
            score += W_BUBBLE * covered / area
            if best is None or score < best[0] - 1e-12:
                best = (score, i, cand, violations)
        score, idx, chosen, violations = best

        tail = None
        if line.kind in ("speech", "shout") and speaker is not None:
            tail = (speaker.region.x + speaker.region.w / 2,
                    speaker.region.y + speaker.region.h / 2)
        placed.append(chosen)
        out.append(TextElement(kind=line.kind, text=line.text,
                               speaker=line.speaker, bubble=chosen,
                               tail_to=tail, panel_id=panel_id,
                               order_index=start_index + k, font_px=size,
                               overflow=overflow,
                               rtl_violation=violations > 0))
    return out


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def _starburst(draw: ImageDraw.ImageDraw, box: tuple[int, int, int, int],
               spikes: int = 14) -> None:
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    rx, ry = (x1 - x0) / 2, (y1 - y0) / 2
    points = []
    for i in range(spikes * 2):
        ang = math.pi * i / spikes
        scale = 1.0 if i % 2 == 0 else 0.72
        points.append((cx + math.cos(ang) * rx * scale,
                       cy + math.sin(ang) * ry * scale))
    draw.polygon(points, fill=(255, 255, 255), outline=(0, 0, 0), width=2)


def _tail(draw: ImageDraw.ImageDraw, bubble_px: tuple[int, int, int, int],
          target: tuple[int, int]) -> None:
    x0, y0, x1, y1 = bubble_px
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    tx, ty = target
    dx, dy = tx - cx, ty - cy
    dist = math.hypot(dx, dy)
    if dist < 1:
        return
    # base chord perpendicular to the tail direction, sized to the bubble
    base = max(6.0, min(x1 - x0, y1 - y0) * 0.18)
    px, py = -dy / dist, dx / dist
    a = (cx + px * base, cy + py * base)
    b = (cx - px * base, cy - py * base)
    draw.polygon([a, b, (tx, ty)], fill=(255, 255, 255))
    draw.line([a, (tx, ty)], fill=(0, 0, 0), width=2)
    draw.line([b, (tx, ty)], fill=(0, 0, 0), width=2)


def _thought_trail(draw: ImageDraw.ImageDraw,
                   bubble_px: tuple[int, int, int, int],
                   target: tuple[int, int]) -> None:
    x0, y0, x1, y1 = bubble_px
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    tx, ty = target
    for frac, r in ((0.25, 6), (0.5, 4), (0.75, 3)):
        px, py = cx + (tx - cx) * frac, cy + (ty - cy) * frac
        draw.ellipse([px - r, py - r, px + r, py + r],
                     fill=(255, 255, 255), outline=(0, 0, 0), width=1)


def raster_text(page: PageArtifact, elements: list[TextElement], config,
                out_path: Optional[str] = None) -> PageArtifact:
    """Draw every element onto the page raster, white fill, black stroke."""
    ensure_font()
    orders = [e.order_index for e in elements]
    if len(set(orders)) != len(orders):
        raise ValidationError(f"duplicate order_index in elements: {orders}")

    img = Image.open(page.image_path)
    img.load()
    if img.mode != "RGB":
        img = img.convert("RGB")
    draw = ImageDraw.Draw(img)
    W, H = img.size

    for el in sorted(elements, key=lambda e: e.order_index):
        bx0 = round(el.bubble.x * W)
        by0 = round(el.bubble.y * H)
        bx1 = round((el.bubble.x + el.bubble.w) * W)
        by1 = round((el.bubble.y + el.bubble.h) * H)
        box = (bx0, by0, bx1, by1)

        if el.tail_to is not None:
            target = (round(el.tail_to[0] * W), round(el.tail_to[1] * H))
            if el.kind in ("speech", "shout"):
                _tail(draw, box, target)

        if el.kind in ("speech",):
            draw.ellipse(box, fill=(255, 255, 255), outline=(0, 0, 0),
                         width=2)
        elif el.kind == "thought":
            draw.ellipse(box, fill=(255, 255, 255), outline=(0, 0, 0),
                         width=2)
            if el.tail_to is not None:
                _thought_trail(draw, box, (round(el.tail_to[0] * W),
                                           round(el.tail_to[1] * H)))
        elif el.kind == "shout":
            _starburst(draw, box)
        else:
            draw.rectangle(box, fill=(255, 255, 255), outline=(0, 0, 0),
                           width=2)

        f = _font(el.font_px)
        lines = _wrap(el.text)
        line_h = int(el.font_px * 1.3)
        total_h = line_h * len(lines)
        ty = (by0 + by1 - total_h) // 2
        for line in lines:
            lw = f.getbbox(line)[2]
            tx = (bx0 + bx1 - lw) // 2
            draw.text((tx, ty), line, fill=(0, 0, 0), font=f)
            ty += line_h

    if out_path is None:
        out_path = page.image_path
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
    return PageArtifact(page_index=page.page_index, image_path=str(path),
                        layout=page.layout,
                        panel_placements=page.panel_placements,
                        lettered=True)


# ---------------------------------------------------------------------------
# Page orchestration + sidecar
# ---------------------------------------------------------------------------


def write_letter_json(path: str, elements: list[TextElement],
                      page_px: tuple[int, int],
                      anchors_degraded: bool = False) -> None:
    doc = {
        "schema_version": 1,
        "anchors_degraded": anchors_degraded,
        "overflow_indices": [e.order_index for e in elements if e.overflow],
        "rtl_violation_indices": [e.order_index for e in elements
                                  if e.rtl_violation],
        "elements": [e.to_dict(page_px) for e in elements],
    }
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


def read_letter_json(path: str) -> list[TextElement]:
    doc = json.loads(Path(path).read_text())
    return [TextElement.from_dict(d) for d in doc["elements"]]


def letter_page(page: PageArtifact, plan_page: PageSpec, gateway, config,
                out_path: Optional[str] = None,
                json_path: Optional[str] = None) -> tuple[PageArtifact,
                                                          list[TextElement]]:
    """Detect anchors, place all dialogue, raster, write the sidecar."""
    ensure_font()
    anchors = detect_anchors(page, plan_page, gateway,
                             page_px=config.page_px)
    degraded = bool(anchors) and all(a.synthetic for a in anchors)
    placements = _norm_placements(page, config.page_px)

    elements: list[TextElement] = []
    for spec_panel in plan_page.panels:
        if spec_panel.panel_id not in placements:
            continue
        elements.extend(place_bubbles(
            placements[spec_panel.panel_id], list(spec_panel.dialogue),
            anchors, config, panel_id=spec_panel.panel_id,
            start_index=len(elements)))

    lettered = raster_text(page, elements, config, out_path=out_path)
    if json_path is None:
        json_path = str(Path(lettered.image_path).with_suffix("")) \
            + ".letter.json"
    write_letter_json(json_path, elements, config.page_px,
                      anchors_degraded=degraded)
    return lettered, elements
