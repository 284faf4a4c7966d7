"""Deterministic page composition and book assembly."""

from __future__ import annotations

import hashlib
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from PIL import Image, ImageDraw

from .errors import ComposeError, ValidationError
from .layouts import Layout
from .rendering import PanelAsset, cover_fit

# fixed ZIP timestamp so archives are byte-stable across runs
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class PageArtifact:
    page_index: int
    image_path: str
    layout: Layout
    panel_placements: tuple[tuple[str, tuple[int, int, int, int]], ...]
    lettered: bool = False

    def __post_init__(self):
        ids = {p.panel_id for p in self.layout.panels}
        placed = [pid for pid, _ in self.panel_placements]
        if set(placed) != ids or len(placed) != len(ids):
            raise ValidationError(
                f"page {self.page_index}: placements do not match layout")
        # placements are pixel (x, y, w, h)
        rects = [r for _, r in self.panel_placements]
        for x, y, w, h in rects:
            if x < 0 or y < 0 or w < 1 or h < 1:
                raise ValidationError(
                    f"page {self.page_index}: degenerate placement")
        for i in range(len(rects)):
            for j in range(i + 1, len(rects)):
                ax, ay, aw, ah = rects[i]
                bx, by, bw, bh = rects[j]
                if (ax < bx + bw and bx < ax + aw
                        and ay < by + bh and by < ay + ah):
                    raise ValidationError(
                        f"page {self.page_index}: placements overlap")

    def to_dict(self) -> dict:
        return {
            "page_index": self.page_index,
            "image_path": self.image_path,
            "layout": self.layout.to_dict(),
            "panel_placements": [
                {"panel_id": pid, "rect": list(rect)}
                for pid, rect in self.panel_placements],
            "lettered": self.lettered,
        }


@dataclass(frozen=True)
class ComicArtifact:
    pages: tuple[PageArtifact, ...]
    manifest: dict = field(compare=False)
    archive_path: str = ""

    def __post_init__(self):
        if [p.page_index for p in self.pages] != list(range(len(self.pages))):
            raise ValidationError("comic pages must be contiguous from 0")


def _px(value: float, size: int) -> int:
    # half-up so adjacent panels quantize to the same shared edge
    return int(value * size + 0.5)


def placement_rects(layout: Layout, page_px: tuple[int, int],
                    gutter_px: int) -> list[tuple[str, tuple[int, int, int, int]]]:
    """Map layout regions to pixel (x, y, w, h) with gutters inside.

    Page-boundary edges stay flush; each internal edge gives up half the
    gutter (uneven gutters split as floor on the leading side, ceil on
    the trailing side, so shared edges end up exactly g apart).
    """
    W, H = page_px
    lead = gutter_px // 2
    trail = gutter_px - lead
    out = []
    for panel in layout.panels:
        r = panel.region
        x0, y0 = _px(r.x, W), _px(r.y, H)
        x1, y1 = _px(r.x + r.w, W), _px(r.y + r.h, H)
        if x0 > 0:
            x0 += lead
        if x1 < W:
            x1 -= trail
        if y0 > 0:
            y0 += lead
        if y1 < H:
            y1 -= trail
        if x1 - x0 < 1 or y1 - y0 < 1:
            raise ComposeError(
                f"panel {panel.panel_id} collapses under gutter inset")
        out.append((panel.panel_id, (x0, y0, x1 - x0, y1 - y0)))
    return out


def compose_page(panels: list[PanelAsset], layout: Layout, config,
                 out_path: Optional[str] = None,
                 lettered: bool = False) -> PageArtifact:
    """Composite panel assets onto a white page.

    Pure integer placement arithmetic; same inputs give byte-identical
    output.
    """
    assets = {a.panel_id: a for a in panels}
    for panel in layout.panels:
        if panel.panel_id not in assets:
            raise ComposeError(f"no asset for panel {panel.panel_id}")

    W, H = config.page_px
    page = Image.new("RGB", (W, H), (255, 255, 255))
    draw = ImageDraw.Draw(page)
    placements = placement_rects(layout, config.page_px, config.gutter_px)

    for panel_id, (x, y, w, h) in placements:
        img = Image.open(assets[panel_id].image_path)
        img.load()
        if img.mode != "RGB":
            img = img.convert("RGB")
        if img.size != (w, h):
            img = cover_fit(img, w, h)
        page.paste(img, (x, y))
        if config.border_px > 0:
            draw.rectangle([x, y, x + w - 1, y + h - 1], outline=(0, 0, 0),
                           width=config.border_px)

    if out_path is None:
        out_path = f"page_{layout.page_index:03d}.png"
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    page.save(path, format="PNG")
    return PageArtifact(page_index=layout.page_index, image_path=str(path),
                        layout=layout, panel_placements=tuple(placements),
                        lettered=lettered)


def _file_digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def compose_comic(pages: list[PageArtifact], out_dir: str,
                  config_digest: str = "", plan_digest: str = "") -> ComicArtifact:
    """Write numbered page rasters, a manifest, and a CBZ archive.

    The archive uses stored entries and a fixed timestamp, so identical
    inputs produce identical bytes.
    """
    ordered = sorted(pages, key=lambda p: p.page_index)
    if [p.page_index for p in ordered] != list(range(len(ordered))):
        raise ComposeError(
            f"pages not contiguous from 0: {[p.page_index for p in ordered]}")
    if not ordered:
        raise ComposeError("no pages to assemble")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    entries = []
    for page in ordered:
        name = f"page_{page.page_index + 1:03d}.png"
        data = Path(page.image_path).read_bytes()
        (out / name).write_bytes(data)
        entries.append({
            "file": name,
            "page_index": page.page_index,
            "digest": hashlib.sha256(data).hexdigest(),
            "lettered": page.lettered,
        })

    manifest = {
        "schema_version": 1,
        "config_digest": config_digest,
        "plan_digest": plan_digest,
        "pages": entries,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n")

    archive_path = out / "comic.cbz"
    with zipfile.ZipFile(archive_path, "w",
                         compression=zipfile.ZIP_STORED) as zf:
        for entry in entries:
            info = zipfile.ZipInfo(entry["file"], date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_STORED
            zf.writestr(info, (out / entry["file"]).read_bytes())

    return ComicArtifact(pages=tuple(ordered), manifest=manifest,
                         archive_path=str(archive_path))
