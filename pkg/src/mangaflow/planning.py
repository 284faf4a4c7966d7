"""Story planning: prompt to structured plan of pages, panels, and sections.

One planner chat call yields the whole plan; ``enforce_structure`` then
bends it to the configured page and panel counts without dropping any
dialogue, so downstream stages can rely on exact shapes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import PlanError, ValidationError

log = logging.getLogger(__name__)

BUBBLE_KINDS = ("speech", "narration", "thought", "shout")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ProjectConfig:
    """Knobs fixed before generation starts."""

    page_count: int
    panel_counts: tuple[int, ...] = ()
    default_panel_count: int = 4
    style: str = "black and white shonen manga, screentone shading"
    language: str = "en"
    seed: int = 0
    page_px: tuple[int, int] = (1488, 2104)
    gutter_px: int = 24
    border_px: int = 3
    font_px: int = 28
    min_font_px: int = 14
    max_parallel_renders: int = 4
    mode: str = "replay"
    backend: str = "stub"

    def __post_init__(self):
        if self.page_count < 1:
            raise ValidationError("page_count must be >= 1")
        if self.page_px[0] <= 0 or self.page_px[1] <= 0:
            raise ValidationError("page_px must be positive")
        if self.mode not in ("live", "record", "replay"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        counts = self.panel_counts or ()
        if len(counts) not in (0, self.page_count):
            raise ValidationError("panel_counts must be empty or one per page")
        for c in (*counts, self.default_panel_count):
            if not 1 <= c <= 12:
                raise ValidationError(f"panel count {c} outside 1..12")

    def panel_count_for(self, page_index: int) -> int:
        if self.panel_counts:
            return self.panel_counts[page_index]
        return self.default_panel_count

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "page_count": self.page_count,
            "panel_counts": list(self.panel_counts),
            "default_panel_count": self.default_panel_count,
            "style": self.style,
            "language": self.language,
            "seed": self.seed,
            "page_px": list(self.page_px),
            "gutter_px": self.gutter_px,
            "border_px": self.border_px,
            "font_px": self.font_px,
            "min_font_px": self.min_font_px,
            "max_parallel_renders": self.max_parallel_renders,
            "mode": self.mode,
            "backend": self.backend,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProjectConfig":
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in data.items() if k in known}
        if "panel_counts" in kwargs:
            kwargs["panel_counts"] = tuple(kwargs["panel_counts"])
        if "page_px" in kwargs:
            kwargs["page_px"] = tuple(kwargs["page_px"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from exc


@dataclass(frozen=True)
class DialogueLine:
    speaker: Optional[str]
    text: str
    kind: str = "speech"

    def __post_init__(self):
        if self.kind not in BUBBLE_KINDS:
            raise ValidationError(f"unknown bubble kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"speaker": self.speaker, "text": self.text, "kind": self.kind}


@dataclass(frozen=True)
class PanelSpec:
    panel_id: str
    description: str
    section_id: str
    dialogue: tuple[DialogueLine, ...] = ()
    shot_hint: Optional[str] = None

    def __post_init__(self):
        if not self.description.strip():
            raise ValidationError(f"panel {self.panel_id} has no description")

    def to_dict(self) -> dict:
        return {
            "panel_id": self.panel_id,
            "description": self.description,
            "section_id": self.section_id,
            "dialogue": [d.to_dict() for d in self.dialogue],
            "shot_hint": self.shot_hint,
        }


@dataclass(frozen=True)
class PageSpec:
    index: int
    context: str
    panels: tuple[PanelSpec, ...]

    def to_dict(self) -> dict:
        return {"index": self.index, "context": self.context,
                "panels": [p.to_dict() for p in self.panels]}


@dataclass(frozen=True)
class SectionSpec:
    section_id: str
    description: str
    scene: str
    characters: tuple[str, ...] = ()
    key_objects: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"section_id": self.section_id, "description": self.description,
                "scene": self.scene, "characters": list(self.characters),
                "key_objects": list(self.key_objects)}


@dataclass(frozen=True)
class StoryPlan:
    pages: tuple[PageSpec, ...]
    sections: tuple[SectionSpec, ...]

    def __post_init__(self):
        if [p.index for p in self.pages] != list(range(len(self.pages))):
            raise ValidationError("page indices must be contiguous from 0")
        ids = [s.section_id for s in self.sections]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate section ids: {ids}")
        for page in self.pages:
            pids = [p.panel_id for p in page.panels]
            if len(set(pids)) != len(pids):
                raise ValidationError(
                    f"page {page.index} has duplicate panel ids: {pids}")

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "pages": [p.to_dict() for p in self.pages],
                "sections": [s.to_dict() for s in self.sections]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> "StoryPlan":
        try:
            pages = []
            for p in data["pages"]:
                panels = []
                for item in p["panels"]:
                    dialogue = tuple(
                        DialogueLine(d.get("speaker"), str(d["text"]),
                                     d.get("kind", "speech"))
                        for d in item.get("dialogue", []))
                    panels.append(PanelSpec(
                        panel_id=str(item["panel_id"]),
                        description=str(item["description"]),
                        section_id=str(item["section_id"]),
                        dialogue=dialogue,
                        shot_hint=item.get("shot_hint")))
                pages.append(PageSpec(index=int(p["index"]),
                                      context=str(p.get("context", "")),
                                      panels=tuple(panels)))
            sections = tuple(
                SectionSpec(section_id=str(s["section_id"]),
                            description=str(s["description"]),
                            scene=str(s.get("scene", "")),
                            characters=tuple(str(c) for c in s.get("characters", [])),
                            key_objects=tuple(str(o) for o in s.get("key_objects", [])))
                for s in data["sections"])
            return cls(tuple(pages), sections)
        except ValidationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad plan payload: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "StoryPlan":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------

_PLAN_SCHEMA_HINT = json.dumps({
    "pages": [{
        "index": 0,
        "context": "one-line summary of what this page covers",
        "panels": [{
            "panel_id": "p0",
            "description": "what the panel depicts, no dialogue text",
            "section_id": "s0",
            "dialogue": [{"speaker": "name or null", "text": "line",
                          "kind": "speech|narration|thought|shout"}],
            "shot_hint": "wide establishing / close-up / null",
        }],
    }],
    "sections": [{
        "section_id": "s0",
        "description": "narrative segment summary",
        "scene": "where it happens, visual description",
        "characters": ["name"],
        "key_objects": ["name"],
    }],
})

_PLANNER_SYSTEM = (
    "You are a manga story planner. Break the user's story into pages, "
    "panels, and story sections. A section is a coherent narrative segment "
    "(same scene, cast, and props); consecutive panels share a section. "
    "Panel descriptions are purely visual; dialogue goes in the dialogue "
    "list, never in the description. Reply with one JSON object and "
    "nothing else, exactly in this shape:\n"
)


def _parse_plan_reply(text: str) -> StoryPlan:
    snippet = text
    start = text.find("{")
    end = text.rfind("}")
    if start >= 0 and end > start:
        snippet = text[start:end + 1]
    try:
        data = json.loads(snippet)
    except json.JSONDecodeError as exc:
        raise PlanError(f"plan reply is not valid JSON: {exc}", raw_text=text)
    try:
        plan = StoryPlan.from_dict(data)
    except ValidationError as exc:
        raise PlanError(f"plan reply violates the schema: {exc}", raw_text=text)
    try:
        extract_sections(plan)
    except ValidationError as exc:
        raise PlanError(f"plan reply has broken section references: {exc}",
                        raw_text=text)
    return plan


def plan_story(prompt: str, config: ProjectConfig, gateway) -> StoryPlan:
    """One structured planner call, schema-validated, then shape-enforced.

    Malformed replies earn up to 2 reprompts carrying the parse error; a
    third failure raises with the raw model text attached.
    """
    if not prompt.strip():
        raise ValidationError("story prompt is empty")
    if gateway is None:
        raise ValidationError("story planning needs a gateway")
    counts = [config.panel_count_for(i) for i in range(config.page_count)]
    messages = [
        {"role": "system", "content": _PLANNER_SYSTEM + _PLAN_SCHEMA_HINT},
        {"role": "user", "content": (
            f"Story: {prompt}\n"
            f"Pages: {config.page_count}\n"
            f"Panels per page: {counts}\n"
            f"Style: {config.style}\n"
            f"Language: {config.language}")},
    ]
    last_error: Optional[PlanError] = None
    for _ in range(3):
        reply = gateway.chat(messages, temperature=0.3, seed=config.seed)
        try:
            plan = _parse_plan_reply(reply)
        except PlanError as exc:
            last_error = exc
            messages = messages + [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": (
                    f"That reply was rejected: {exc}. Reply again with only "
                    f"the JSON object, exactly in the required shape.")},
            ]
            continue
        return enforce_structure(plan, config)
    raise PlanError(f"planner failed after 3 attempts: {last_error}",
                    raw_text=last_error.raw_text if last_error else None)


# ---------------------------------------------------------------------------
# Structure enforcement
# ---------------------------------------------------------------------------


def _fresh_panel_id(existing: set[str], base: str) -> str:
    cand = base + "b"
    while cand in existing:
        cand += "b"
    return cand


def _merge_tail(panels: list[PanelSpec]) -> list[PanelSpec]:
    """Fold the last panel into its predecessor, keeping all dialogue."""
    a, b = panels[-2], panels[-1]
    merged = replace(
        a,
        description=f"{a.description} {b.description}",
        dialogue=a.dialogue + b.dialogue,
    )
    return panels[:-2] + [merged]


def _split_panel(panel: PanelSpec, new_id: str) -> tuple[PanelSpec, PanelSpec]:
    words = panel.description.split()
    mid = max(1, len(words) // 2)
    first = " ".join(words[:mid]) or panel.description
    second = " ".join(words[mid:]) or panel.description
    # dialogue stays with the first half so no line is duplicated
    return (replace(panel, description=first),
            replace(panel, panel_id=new_id, description=second, dialogue=()))


def _enforce_panels(panels: tuple[PanelSpec, ...],
                    target: int) -> tuple[PanelSpec, ...]:
    out = list(panels)
    while len(out) > target:
        out = _merge_tail(out)
    while len(out) < target:
        k = max(range(len(out)), key=lambda i: (len(out[i].description), -i))
        ids = {p.panel_id for p in out}
        first, second = _split_panel(out[k], _fresh_panel_id(ids, out[k].panel_id))
        out[k:k + 1] = [first, second]
    return tuple(out)


def enforce_structure(plan: StoryPlan, config: ProjectConfig) -> StoryPlan:
    """Force the plan to the configured page and panel counts.

    Excess pages merge into the last kept page; missing pages come from
    splitting the page with the most panels at its midpoint. Panel counts
    are then fixed per page by tail-first merges and longest-description
    splits. Dialogue lines survive every merge; idempotent on conforming
    plans.
    """
    pages = [replace(p, panels=tuple(p.panels)) for p in plan.pages]

    if len(pages) > config.page_count:
        kept = pages[:config.page_count]
        extra = pages[config.page_count:]
        last = kept[-1]
        context = " ".join([last.context] + [e.context for e in extra]).strip()
        panels = list(last.panels)
        for e in extra:
            ids = {p.panel_id for p in panels}
            for panel in e.panels:
                pid = panel.panel_id
                if pid in ids:
                    pid = _fresh_panel_id(ids, pid)
                ids.add(pid)
                panels.append(replace(panel, panel_id=pid))
        kept[-1] = replace(last, context=context, panels=tuple(panels))
        pages = kept

    while len(pages) < config.page_count:
        k = max(range(len(pages)),
                key=lambda i: (len(pages[i].panels), -i))
        page = pages[k]
        panels = list(page.panels)
        if len(panels) < 2:
            ids = {p.panel_id for p in panels}
            first, second = _split_panel(
                panels[0], _fresh_panel_id(ids, panels[0].panel_id))
            panels = [first, second]
        mid = len(panels) // 2
        head = replace(page, panels=tuple(panels[:mid]))
        tail = replace(page, panels=tuple(panels[mid:]))
        pages[k:k + 1] = [head, tail]

    pages = [replace(page, index=i,
                     panels=_enforce_panels(page.panels,
                                            config.panel_count_for(i)))
             for i, page in enumerate(pages)]
    return StoryPlan(tuple(pages), plan.sections)


def extract_sections(plan: StoryPlan) -> list[SectionSpec]:
    """Sections actually used by panels; unknown references are errors."""
    known = {s.section_id for s in plan.sections}
    referenced = set()
    for page in plan.pages:
        for panel in page.panels:
            if panel.section_id not in known:
                raise ValidationError(
                    f"panel {page.index}/{panel.panel_id} references "
                    f"unknown section {panel.section_id!r}")
            referenced.add(panel.section_id)
    kept = [s for s in plan.sections if s.section_id in referenced]
    for s in plan.sections:
        if s.section_id not in referenced:
            log.warning("section %s is not referenced by any panel; dropped",
                        s.section_id)
    return kept
