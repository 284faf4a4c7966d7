"""Panel prompt construction and backend-pluggable panel rendering."""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

from PIL import Image, ImageDraw, ImageFont

from .errors import CassetteMissError, GatewayError, RenderError, ValidationError
from .gateway import ImageRef
from .layouts import Layout
from .memory import RefAsset, SectionMemory, mentioned_names
from .planning import PanelSpec

NEGATIVE_HINTS = ("speech bubbles, caption boxes, lettering, watermarks, "
                  "signatures, borders cut off")

WIDE_ASPECT = 1.5
TALL_ASPECT = 0.67

# All entries keep luma below the gutter threshold so composed pages
# stay segmentable.
STUB_PALETTE = (
    (200, 120, 120), (120, 200, 120), (120, 120, 200), (200, 200, 120),
    (200, 120, 200), (120, 200, 200), (180, 140, 100), (100, 180, 140),
    (140, 100, 180), (160, 160, 160), (220, 180, 140), (140, 180, 220),
)


@dataclass(frozen=True)
class PanelPrompt:
    """Fully resolved rendering prompt for one panel.

    section_id rides along so offline backends can key deterministic
    styling off the story section.
    """

    text: str
    negative_hints: str
    panel_id: str
    seed: int
    section_id: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError(f"panel {self.panel_id}: empty prompt")

    def digest(self) -> str:
        doc = {"text": self.text, "negative_hints": self.negative_hints,
               "panel_id": self.panel_id, "seed": self.seed,
               "section_id": self.section_id}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class PanelAsset:
    panel_id: str
    image_path: str
    width_px: int
    height_px: int
    backend_id: str
    prompt_digest: str

    def to_dict(self) -> dict:
        return {"panel_id": self.panel_id, "image_path": self.image_path,
                "width_px": self.width_px, "height_px": self.height_px,
                "backend_id": self.backend_id,
                "prompt_digest": self.prompt_digest}


def panel_seed(project_seed: int, page_index: int, panel_id: str) -> int:
    h = hashlib.sha256(f"{project_seed}|{page_index}|{panel_id}".encode())
    return int.from_bytes(h.digest()[:8], "big") % (2 ** 31)


def _shot_clause(panel: PanelSpec, aspect: float) -> Optional[str]:
    if panel.shot_hint:
        return f"{panel.shot_hint} shot"
    if aspect > WIDE_ASPECT:
        return "landscape framing, wide shot"
    if aspect < TALL_ASPECT:
        return "vertical framing, tall full-body shot"
    return None


def build_panel_prompt(panel: PanelSpec, layout: Layout,
                       memory: SectionMemory, config) -> PanelPrompt:
    """Assemble the prompt in fixed template order.

    Dialogue never enters the image prompt; text is lettered after
    composition.
    """
    region = None
    for lp in layout.panels:
        if lp.panel_id == panel.panel_id:
            region = lp.region
            break
    if region is None:
        raise ValidationError(
            f"panel {panel.panel_id} not present in layout for page "
            f"{layout.page_index}")

    parts = [config.style]
    clause = _shot_clause(panel, region.w / region.h)
    if clause:
        parts.append(clause)
    parts.append(memory.description)
    for name in mentioned_names(memory, panel):
        profile = memory.profiles.get(name)
        if profile:
            parts.append(f"{name}: {profile}")
    parts.append(panel.description)

    return PanelPrompt(
        text="; ".join(p.strip() for p in parts if p.strip()),
        negative_hints=NEGATIVE_HINTS,
        panel_id=panel.panel_id,
        seed=panel_seed(config.seed, layout.page_index, panel.panel_id),
        section_id=panel.section_id,
    )


def _nearest_multiple(value: float, multiple: int) -> int:
    return max(multiple, int(value / multiple + 0.5) * multiple)


def panel_dims(region, page_px: tuple[int, int], min_side_px: int = 256,
               multiple: int = 8) -> tuple[int, int]:
    """Pixel size for a panel region, aspect preserved within 2%."""
    w = region.w * page_px[0]
    h = region.h * page_px[1]
    aspect = w / h
    if min(w, h) < min_side_px:
        scale = min_side_px / min(w, h)
        w *= scale
        h *= scale
    w_r = _nearest_multiple(w, multiple)
    h_r = _nearest_multiple(w_r / aspect, multiple)
    return w_r, h_r


class Backend(Protocol):
    backend_id: str

    def render(self, prompt: PanelPrompt, refs: list[RefAsset],
               width: int, height: int) -> bytes: ...


def _luma(color: tuple[int, int, int]) -> float:
    r, g, b = color
    return 0.299 * r + 0.587 * g + 0.114 * b


class StubBackend:
    """Deterministic offline renderer.

    Background color is keyed on the section digest so panels of one
    section share a background, a cheap proxy for visual consistency.
    Distinct sections may collide on the 12-entry palette.
    """

    backend_id = "stub"

    def render(self, prompt: PanelPrompt, refs: list[RefAsset],
               width: int, height: int) -> bytes:
        idx = int(hashlib.sha256(prompt.section_id.encode()).hexdigest(),
                  16) % len(STUB_PALETTE)
        bg = STUB_PALETTE[idx]
        img = Image.new("RGB", (width, height), bg)
        draw = ImageDraw.Draw(img)
        ink = (0, 0, 0) if _luma(bg) > 128 else (255, 255, 255)
        draw.rectangle([2, 2, width - 3, height - 3], outline=ink, width=2)
        font = ImageFont.load_default()
        draw.text((8, 8), prompt.panel_id, fill=ink, font=font)
        # one block per conditioning ref, colored off its digest
        x = 8
        for ref in refs:
            d = hashlib.sha256(ref.digest().encode()).digest()
            color = (64 + d[0] % 128, 64 + d[1] % 128, 64 + d[2] % 128)
            y = height - 28
            if x + 20 <= width - 4:
                draw.rectangle([x, y, x + 19, y + 19], fill=color, outline=ink)
            x += 26
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()


class GatewayBackend:
    """Routes rendering through the model gateway (live/record/replay)."""

    def __init__(self, gateway, model_id: Optional[str] = None):
        self.gateway = gateway
        self.model_id = model_id
        self.backend_id = f"gateway:{model_id or gateway.image_model}"

    def render(self, prompt: PanelPrompt, refs: list[RefAsset],
               width: int, height: int) -> bytes:
        image_refs = tuple(ImageRef(a.image_path) for a in refs
                           if a.image_path)
        text = prompt.text
        if prompt.negative_hints:
            text = f"{text}. Avoid: {prompt.negative_hints}"
        return self.gateway.image(text, width, height, refs=image_refs,
                                  seed=prompt.seed, model_id=self.model_id)


def render_panel(prompt: PanelPrompt, refs: list[RefAsset],
                 dims: tuple[int, int], backend,
                 out_path: Optional[str] = None) -> PanelAsset:
    """Render one panel and normalize it to exactly ``dims``.

    Cassette misses propagate untouched so replay runs fail loudly;
    other gateway failures surface as RenderError with the prompt digest.
    """
    width, height = dims
    digest = prompt.digest()
    try:
        raw = backend.render(prompt, refs, width, height)
    except CassetteMissError:
        raise
    except GatewayError as exc:
        raise RenderError(f"panel {prompt.panel_id}: {exc}",
                          prompt_digest=digest) from exc

    img = Image.open(io.BytesIO(raw))
    img.load()
    untouched = img.mode == "RGB" and img.size == (width, height)
    if img.mode != "RGB":
        img = img.convert("RGB")
    if img.size != (width, height):
        img = cover_fit(img, width, height)

    if out_path is None:
        out_path = f"{prompt.panel_id}.png"
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if untouched:
        path.write_bytes(raw)
    else:
        img.save(path, format="PNG")
    return PanelAsset(panel_id=prompt.panel_id, image_path=str(path),
                      width_px=width, height_px=height,
                      backend_id=backend.backend_id, prompt_digest=digest)


def cover_fit(img: Image.Image, width: int, height: int) -> Image.Image:
    """Scale to cover the target box, then center-crop. Never letterboxes."""
    scale = max(width / img.width, height / img.height)
    new_w = max(width, int(img.width * scale + 0.5))
    new_h = max(height, int(img.height * scale + 0.5))
    img = img.resize((new_w, new_h), Image.LANCZOS)
    left = (new_w - width) // 2
    top = (new_h - height) // 2
    return img.crop((left, top, left + width, top + height))
