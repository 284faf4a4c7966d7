"""End-to-end generation: plan, memory, layout, render, compose, letter.

The project directory is the database. Every intermediate lives in a
file a user can open and edit; ``state.json`` pins each completed
stage to a digest of its inputs, so re-running skips whatever is
still clean and rebuilds whatever is not. Hand-edited stage outputs
(say, a retouched panel raster) survive re-runs because only input
digests are pinned; downstream stages see the edit through their own
input digests and refresh accordingly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from .composing import (ComicArtifact, PageArtifact, compose_comic,
                        compose_page, placement_rects)
from .errors import (GatewayError, MangaFlowError, RenderError, StageError,
                     ValidationError)
from .layouts import (Layout, LayoutConstraints, Panel, TemplateLibrary,
                      generate_layout, project, refine_layout,
                      retrieve_template)
from .lettering import (TextElement, detect_anchors, ensure_font,
                        place_bubbles, raster_text, read_letter_json,
                        write_letter_json, _norm_placements)
from .memory import RefAsset, SectionMemory, UserRefs, compose_ref, load_or_build
from .planning import (PageSpec, ProjectConfig, StoryPlan, enforce_structure,
                       extract_sections, plan_story)
from .rendering import (GatewayBackend, PanelAsset, StubBackend,
                        build_panel_prompt, panel_dims, render_panel)

log = logging.getLogger(__name__)

STATE_VERSION = 1

STAGES = ("plan", "memory", "layout", "render", "compose", "letter", "book")


def _digest(doc) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _NullGateway:
    """Stands in when no gateway is configured; every call fails softly."""

    call_count = 0

    def chat(self, *args, **kwargs):
        raise GatewayError("no gateway configured")

    def image(self, *args, **kwargs):
        raise GatewayError("no gateway configured")


# ---------------------------------------------------------------------------
# Project state
# ---------------------------------------------------------------------------


class ProjectState:
    """Filesystem-backed project: artifacts, stage pins, event log.

    Mutations go through :meth:`mark` / :meth:`invalidate_page` /
    :meth:`append_event`; each persists immediately so a crashed run
    leaves the directory consistent with its pins.
    """

    def __init__(self, project_dir: str, config: ProjectConfig):
        self.dir = Path(project_dir)
        self.config = config
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.on_event = None  # service hook: called with each new event
        self._state = {"schema_version": STATE_VERSION, "stages": {},
                       "versions": {}, "salts": {}, "degraded": {}}
        if self.state_path.exists():
            self._state.update(json.loads(self.state_path.read_text()))
        self.config_path.write_text(
            json.dumps(config.to_dict(), indent=2) + "\n")

    @classmethod
    def open(cls, project_dir: str) -> "ProjectState":
        config_path = Path(project_dir) / "config.json"
        if not config_path.exists():
            raise ValidationError(f"no project at {project_dir} "
                                  f"(missing config.json)")
        config = ProjectConfig.from_dict(json.loads(config_path.read_text()))
        return cls(project_dir, config)

    # -- paths -------------------------------------------------------------

    @property
    def config_path(self) -> Path:
        return self.dir / "config.json"

    @property
    def state_path(self) -> Path:
        return self.dir / "state.json"

    @property
    def events_path(self) -> Path:
        return self.dir / "events.jsonl"

    @property
    def plan_path(self) -> Path:
        return self.dir / "plan.json"

    @property
    def cache_dir(self) -> Path:
        return self.dir / "cache"

    @property
    def book_dir(self) -> Path:
        return self.dir / "book"

    def layout_path(self, i: int) -> Path:
        return self.dir / "layouts" / f"page_{i:03d}.json"

    def panel_dir(self, i: int) -> Path:
        return self.dir / "panels" / f"page_{i:03d}"

    def page_path(self, i: int) -> Path:
        return self.dir / "pages" / f"page_{i:03d}.png"

    def lettered_path(self, i: int) -> Path:
        return self.dir / "pages" / f"page_{i:03d}.lettered.png"

    def letters_path(self, i: int) -> Path:
        return self.dir / "pages" / f"page_{i:03d}.letter.json"

    # -- stage pins --------------------------------------------------------

    def _save(self) -> None:
        self.state_path.write_text(
            json.dumps(self._state, indent=2, sort_keys=True) + "\n")

    def stage_clean(self, key: str, digest: str, *paths) -> bool:
        entry = self._state["stages"].get(key)
        if entry is None or entry.get("input") != digest:
            return False
        return all(Path(p).exists() for p in paths)

    def stage_record(self, key: str) -> Optional[dict]:
        return self._state["stages"].get(key)

    def has_stage_prefix(self, prefix: str) -> bool:
        return any(k.startswith(prefix) for k in self._state["stages"])

    def mark(self, key: str, digest: str, **extra) -> None:
        with self._lock:
            self._state["stages"][key] = {"input": digest, **extra}
            self._save()

    def drop_stages(self, matchers: tuple[str, ...]) -> None:
        """Remove pins; a matcher ending in ':' strips a whole prefix."""
        with self._lock:
            stages = self._state["stages"]
            for key in [k for k in stages
                        if any(k == m or (m.endswith(":")
                                          and k.startswith(m))
                               for m in matchers)]:
                del stages[key]
            self._save()

    def invalidate_page(self, i: int, from_stage: str = "render") -> None:
        """Reset a page's pipeline tail after one of its inputs changed."""
        order = ("layout", "render", "compose", "letter")
        start = order.index(from_stage)
        matchers = []
        for stage in order[start:]:
            matchers.append(f"{stage}:{i}")
            if stage == "render":
                matchers.append(f"render:{i}:")
        matchers.append("book")
        self.drop_stages(tuple(matchers))

    # -- versions / flags --------------------------------------------------

    def version(self, i: int) -> int:
        return int(self._state["versions"].get(str(i), 0))

    def bump_version(self, i: int) -> int:
        with self._lock:
            v = int(self._state["versions"].get(str(i), 0)) + 1
            self._state["versions"][str(i)] = v
            self._save()
            return v

    def salt(self, i: int, panel_id: str) -> int:
        return int(self._state["salts"].get(f"{i}:{panel_id}", 0))

    def bump_salt(self, i: int, panel_id: str) -> int:
        with self._lock:
            key = f"{i}:{panel_id}"
            v = int(self._state["salts"].get(key, 0)) + 1
            self._state["salts"][key] = v
            self._save()
            return v

    def degraded_panels(self, i: int) -> list[str]:
        return list(self._state["degraded"].get(str(i), []))

    def set_degraded(self, i: int, panel_ids: list[str]) -> None:
        with self._lock:
            if panel_ids:
                self._state["degraded"][str(i)] = sorted(panel_ids)
            else:
                self._state["degraded"].pop(str(i), None)
            self._save()

    # -- events ------------------------------------------------------------

    def append_event(self, kind: str, **data) -> dict:
        with self._lock:
            seq = self._event_count() + 1
            event = {"seq": seq, "kind": kind, **data}
            with self.events_path.open("a") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
        if self.on_event is not None:
            self.on_event(event)
        return event

    def _event_count(self) -> int:
        if not self.events_path.exists():
            return 0
        with self.events_path.open() as fh:
            return sum(1 for line in fh if line.strip())

    def event_count(self) -> int:
        with self._lock:
            return self._event_count()

    def events_after(self, seq: int) -> list[dict]:
        if not self.events_path.exists():
            return []
        out = []
        with self.events_path.open() as fh:
            for line in fh:
                if not line.strip():
                    continue
                event = json.loads(line)
                if event["seq"] > seq:
                    out.append(event)
        return out

    # -- artifact loaders --------------------------------------------------

    def load_plan(self) -> StoryPlan:
        if not self.plan_path.exists():
            raise ValidationError("project has no plan yet; run the plan "
                                  "stage first")
        return StoryPlan.from_json(self.plan_path.read_text())

    def load_layout(self, i: int) -> Layout:
        path = self.layout_path(i)
        if not path.exists():
            raise ValidationError(f"page {i} has no layout yet")
        return Layout.from_json(path.read_text())

    def load_assets(self, i: int) -> dict[str, PanelAsset]:
        assets = {}
        for key, entry in self._state["stages"].items():
            if key.startswith(f"render:{i}:") and "asset" in entry:
                doc = entry["asset"]
                assets[doc["panel_id"]] = PanelAsset(**doc)
        return assets

    def load_page(self, i: int, lettered: bool = False) -> PageArtifact:
        path = self.lettered_path(i) if lettered else self.page_path(i)
        if not path.exists():
            raise ValidationError(f"page {i} has no "
                                  f"{'lettered ' if lettered else ''}raster")
        layout = self.load_layout(i)
        return PageArtifact(page_index=i, image_path=str(path), layout=layout,
                            panel_placements=tuple(placement_rects(
                                layout, self.config.page_px,
                                self.config.gutter_px)),
                            lettered=lettered)


# ---------------------------------------------------------------------------
# User inputs
# ---------------------------------------------------------------------------


def load_user_layouts(layout_dir: Optional[str]) -> dict[int, Layout]:
    """Read ``page_###.json`` files from a directory, keyed by index."""
    if not layout_dir:
        return {}
    layouts = {}
    for path in sorted(Path(layout_dir).glob("page_*.json")):
        index = int(path.stem.split("_")[1])
        layouts[index] = Layout.from_json(path.read_text(), source="user")
    return layouts


def load_user_refs(refs_path: Optional[str]) -> UserRefs:
    """Read a reference manifest: ``{"refs": [{name, description, image?}]}``.

    Image paths resolve relative to the manifest file.
    """
    if not refs_path:
        return UserRefs()
    base = Path(refs_path).parent
    doc = json.loads(Path(refs_path).read_text())
    assets = []
    for item in doc.get("refs", []):
        try:
            image = item.get("image")
            assets.append(RefAsset(
                name=str(item["name"]),
                text_desc=str(item["description"]),
                image_path=str(base / image) if image else None,
                origin="user"))
        except KeyError as exc:
            raise ValidationError(f"ref entry missing {exc}") from exc
    return UserRefs(tuple(assets))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


class Pipeline:
    """Stage runner bound to one project, gateway, and render backend."""

    def __init__(self, state: ProjectState, gateway=None, backend=None,
                 template_library: Optional[TemplateLibrary] = None,
                 user_layouts: Optional[dict[int, Layout]] = None,
                 user_refs: Optional[UserRefs] = None):
        self.state = state
        self.config = state.config
        self.gateway = gateway
        self.backend = backend or self._default_backend()
        self.templates = template_library
        self.user_layouts = user_layouts or {}
        self.user_refs = user_refs or UserRefs()

    def _default_backend(self):
        if self.config.backend == "gateway":
            if self.gateway is None:
                raise ValidationError("gateway backend needs a gateway")
            return GatewayBackend(self.gateway)
        if self.config.backend == "stub":
            return StubBackend()
        raise ValidationError(f"unknown backend {self.config.backend!r}")

    def _anchor_gateway(self):
        return self.gateway if self.gateway is not None else _NullGateway()

    def _stage(self, name: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except MangaFlowError as exc:
            self.state.append_event("error", stage=name, message=str(exc))
            raise StageError(name, exc) from exc

    # -- plan --------------------------------------------------------------

    def run_plan(self, prompt: Optional[str] = None,
                 plan_path: Optional[str] = None) -> StoryPlan:
        if (prompt is None) == (plan_path is None):
            raise ValidationError("give exactly one of prompt or plan path")
        return self._stage("plan", self._plan, prompt, plan_path)

    def _plan(self, prompt, plan_path) -> StoryPlan:
        source = ({"prompt": prompt} if prompt
                  else {"plan_file": _file_sha(plan_path)})
        digest = _digest({"source": source,
                          "config": self.config.to_dict()})
        if self.state.stage_clean("plan", digest, self.state.plan_path):
            self.state.append_event("stage", stage="plan", status="clean")
            return self.state.load_plan()

        if plan_path:
            plan = StoryPlan.from_json(Path(plan_path).read_text())
            plan = enforce_structure(plan, self.config)
        else:
            plan = plan_story(prompt, self.config, self.gateway)
        self.state.plan_path.write_text(plan.to_json() + "\n")
        self.state.mark("plan", digest)
        self.state.append_event("stage", stage="plan", status="built",
                                pages=len(plan.pages),
                                sections=len(plan.sections))
        return plan

    # -- memory ------------------------------------------------------------

    def run_memory(self, plan: Optional[StoryPlan] = None
                   ) -> dict[str, SectionMemory]:
        plan = plan or self.state.load_plan()
        return self._stage("memory", self._memory, plan)

    def _memory(self, plan: StoryPlan) -> dict[str, SectionMemory]:
        memories = {}
        for section in extract_sections(plan):
            memory = load_or_build(section, self.user_refs,
                                   self.config.style,
                                   str(self.state.cache_dir),
                                   self.gateway)
            memories[section.section_id] = memory
            for warning in memory.warnings:
                self.state.append_event("warning", stage="memory",
                                        section=section.section_id,
                                        message=warning)
        self.state.append_event("stage", stage="memory", status="ready",
                                sections=len(memories))
        return memories

    # -- layout ------------------------------------------------------------

    def run_layout(self, plan: Optional[StoryPlan] = None,
                   page_index: Optional[int] = None) -> dict[int, Layout]:
        plan = plan or self.state.load_plan()
        pages = (plan.pages if page_index is None
                 else (plan.pages[page_index],))
        layouts = {}
        for page in pages:
            layouts[page.index] = self._stage(
                f"layout:{page.index}", self._layout_page, page)
        return layouts

    def _layout_source(self, page: PageSpec, count: int):
        """Pick the layout source per the user > template > agent rule."""
        if page.index in self.user_layouts:
            user = self.user_layouts[page.index]
            return "user", user, _digest(user.to_dict())
        if self.templates is not None:
            hit = retrieve_template(self.templates, count)
            if hit is not None:
                return "template", dataclasses.replace(
                    hit, page_index=page.index), _digest(hit.to_dict())
        return "agent", None, "agent"

    def _layout_page(self, page: PageSpec) -> Layout:
        count = self.config.panel_count_for(page.index)
        if len(page.panels) != count:
            raise ValidationError(
                f"plan page {page.index} has {len(page.panels)} panels, "
                f"config wants {count}")
        kind, proposal, source_digest = self._layout_source(page, count)
        digest = _digest({"context": page.context,
                          "panel_ids": [p.panel_id for p in page.panels],
                          "count": count, "source": [kind, source_digest]})
        key = f"layout:{page.index}"
        if self.state.stage_clean(key, digest, self.state.layout_path(page.index)):
            self.state.append_event("stage", stage=key, status="clean")
            return self.state.load_layout(page.index)

        constraints = LayoutConstraints(panel_count=count)
        if kind == "agent":
            layout = generate_layout(page.context, constraints, self.gateway,
                                     page_index=page.index)
            layout = refine_layout(layout, page.context, constraints,
                                   self.gateway)
        else:
            layout = project(proposal, constraints)
        layout = _align_panel_ids(layout, page)

        path = self.state.layout_path(page.index)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(layout.to_json() + "\n")
        self.state.mark(key, digest)
        self.state.append_event("stage", stage=key, status="built",
                                source=layout.source)
        return layout

    # -- render ------------------------------------------------------------

    def run_render(self, plan: Optional[StoryPlan] = None,
                   memories: Optional[dict[str, SectionMemory]] = None,
                   page_index: Optional[int] = None
                   ) -> dict[int, dict[str, PanelAsset]]:
        plan = plan or self.state.load_plan()
        memories = memories or self.run_memory(plan)
        pages = (plan.pages if page_index is None
                 else (plan.pages[page_index],))
        out = {}
        for page in pages:
            out[page.index] = self._stage(
                f"render:{page.index}", self._render_page, page, memories)
        return out

    def _panel_config(self, page_index: int, panel_id: str) -> ProjectConfig:
        salt = self.state.salt(page_index, panel_id)
        if not salt:
            return self.config
        return dataclasses.replace(self.config,
                                   seed=self.config.seed + salt)

    def _render_page(self, page: PageSpec,
                     memories: dict[str, SectionMemory]
                     ) -> dict[str, PanelAsset]:
        layout = self.state.load_layout(page.index)
        regions = {p.panel_id: p.region for p in layout.panels}
        jobs = []
        assets: dict[str, PanelAsset] = {}
        for spec in page.panels:
            memory = memories[spec.section_id]
            prompt = build_panel_prompt(
                spec, layout, memory,
                self._panel_config(page.index, spec.panel_id))
            refs = compose_ref(memory, spec, self.user_refs)
            dims = panel_dims(regions[spec.panel_id], self.config.page_px)
            key = f"render:{page.index}:{spec.panel_id}"
            digest = _digest({"prompt": prompt.digest(),
                              "refs": [a.digest() for a in refs],
                              "dims": list(dims),
                              "backend": self.backend.backend_id})
            out_path = self.state.panel_dir(page.index) / f"{spec.panel_id}.png"
            entry = self.state.stage_record(key)
            if (self.state.stage_clean(key, digest, out_path)
                    and entry and "asset" in entry):
                assets[spec.panel_id] = PanelAsset(**entry["asset"])
                continue
            jobs.append((key, digest, prompt, refs, dims, str(out_path)))

        degraded = []

        def render_one(job):
            key, digest, prompt, refs, dims, out_path = job
            try:
                asset = render_panel(prompt, refs, dims, self.backend,
                                     out_path=out_path)
                return key, digest, asset, None
            except RenderError as exc:
                # never lose a whole book to one panel: stub it and flag
                asset = render_panel(prompt, refs, dims, StubBackend(),
                                     out_path=out_path)
                return key, digest, asset, str(exc)

        if jobs:
            workers = max(1, min(self.config.max_parallel_renders, len(jobs)))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for key, digest, asset, error in pool.map(render_one, jobs):
                    assets[asset.panel_id] = asset
                    self.state.mark(key, digest, asset=asset.to_dict())
                    if error:
                        degraded.append(asset.panel_id)
                        self.state.append_event(
                            "warning", stage=key,
                            message=f"render degraded to stub: {error}")
            self.state.set_degraded(page.index, degraded)
        status = "built" if jobs else "clean"
        self.state.append_event("stage", stage=f"render:{page.index}",
                                status=status, panels=len(assets))
        return assets

    # -- compose -----------------------------------------------------------

    def run_compose(self, page_index: Optional[int] = None
                    ) -> dict[int, PageArtifact]:
        indices = (range(self.config.page_count) if page_index is None
                   else [page_index])
        pages = {}
        for i in indices:
            pages[i] = self._stage(f"compose:{i}", self._compose_page, i)
        return pages

    def _compose_page(self, i: int) -> PageArtifact:
        layout = self.state.load_layout(i)
        assets = self.state.load_assets(i)
        missing = [p.panel_id for p in layout.panels
                   if p.panel_id not in assets]
        if missing:
            raise ValidationError(f"page {i} lacks rendered panels "
                                  f"{missing}; run the render stage first")
        digest = _digest({
            "layout": layout.to_dict(),
            "panels": {pid: _file_sha(a.image_path)
                       for pid, a in sorted(assets.items())},
            "page_px": list(self.config.page_px),
            "gutter_px": self.config.gutter_px,
            "border_px": self.config.border_px})
        key = f"compose:{i}"
        if self.state.stage_clean(key, digest, self.state.page_path(i)):
            self.state.append_event("stage", stage=key, status="clean")
            return self.state.load_page(i)

        artifact = compose_page(list(assets.values()), layout, self.config,
                                out_path=str(self.state.page_path(i)))
        self.state.mark(key, digest)
        self.state.append_event("stage", stage=key, status="built")
        return artifact

    # -- letter ------------------------------------------------------------

    def run_letter(self, plan: Optional[StoryPlan] = None,
                   page_index: Optional[int] = None
                   ) -> dict[int, PageArtifact]:
        plan = plan or self.state.load_plan()
        pages = (plan.pages if page_index is None
                 else (plan.pages[page_index],))
        out = {}
        for page in pages:
            out[page.index] = self._stage(
                f"letter:{page.index}", self._letter_page, page)
        return out

    def _letter_page(self, page: PageSpec) -> PageArtifact:
        i = page.index
        composed = self.state.load_page(i)
        digest = _digest({
            "page": _file_sha(composed.image_path),
            "plan_page": page.to_dict(),
            "font_px": self.config.font_px,
            "min_font_px": self.config.min_font_px,
            "page_px": list(self.config.page_px)})
        key = f"letter:{i}"
        targets = (self.state.lettered_path(i), self.state.letters_path(i))
        if self.state.stage_clean(key, digest, *targets):
            self.state.append_event("stage", stage=key, status="clean")
            return self.state.load_page(i, lettered=True)

        ensure_font()
        gateway = self._anchor_gateway()
        anchors = detect_anchors(composed, page, gateway,
                                 page_px=self.config.page_px)
        degraded = bool(anchors) and all(a.synthetic for a in anchors)
        placements = _norm_placements(composed, self.config.page_px)
        elements: list[TextElement] = []
        for spec in page.panels:
            if spec.panel_id not in placements:
                continue
            elements.extend(place_bubbles(
                placements[spec.panel_id], list(spec.dialogue), anchors,
                self.config, panel_id=spec.panel_id,
                start_index=len(elements)))
        lettered = raster_text(composed, elements, self.config,
                               out_path=str(self.state.lettered_path(i)))
        write_letter_json(str(self.state.letters_path(i)), elements,
                          self.config.page_px, anchors_degraded=degraded)
        self.state.mark(key, digest)
        self.state.append_event("stage", stage=key, status="built",
                                elements=len(elements),
                                anchors_degraded=degraded)
        return lettered

    # -- book --------------------------------------------------------------

    def run_book(self, plan: Optional[StoryPlan] = None) -> ComicArtifact:
        plan = plan or self.state.load_plan()
        return self._stage("book", self._book, plan)

    def _book(self, plan: StoryPlan) -> ComicArtifact:
        pages = [self.state.load_page(i, lettered=True)
                 for i in range(self.config.page_count)]
        config_digest = _digest(self.config.to_dict())
        plan_digest = _digest(plan.to_dict())
        digest = _digest({
            "pages": [_file_sha(p.image_path) for p in pages],
            "config": config_digest, "plan": plan_digest})
        manifest_path = self.state.book_dir / "manifest.json"
        archive = self.state.book_dir / "comic.cbz"
        if self.state.stage_clean("book", digest, manifest_path, archive):
            self.state.append_event("stage", stage="book", status="clean")
            manifest = json.loads(manifest_path.read_text())
            return ComicArtifact(pages=tuple(pages), manifest=manifest,
                                 archive_path=str(archive))

        comic = compose_comic(pages, str(self.state.book_dir),
                              config_digest=config_digest,
                              plan_digest=plan_digest)
        self.state.mark("book", digest)
        self.state.append_event("stage", stage="book", status="built",
                                pages=len(pages))
        return comic

    # -- everything --------------------------------------------------------

    def run(self, prompt: Optional[str] = None,
            plan_path: Optional[str] = None) -> ComicArtifact:
        plan = self.run_plan(prompt=prompt, plan_path=plan_path)
        memories = self.run_memory(plan)
        self.run_layout(plan)
        self.run_render(plan, memories)
        self.run_compose()
        self.run_letter(plan)
        return self.run_book(plan)


def _align_panel_ids(layout: Layout, page: PageSpec) -> Layout:
    """Rename panels to the plan's ids by reading-order position."""
    if len(layout.panels) != len(page.panels):
        raise ValidationError(
            f"layout for page {page.index} has {len(layout.panels)} panels; "
            f"plan expects {len(page.panels)}")
    renamed = tuple(
        Panel(panel_id=spec.panel_id, region=panel.region)
        for panel, spec in zip(layout.panels, page.panels))
    return Layout(page_index=page.index, panels=renamed,
                  source=layout.source)


def persist_user_refs(state: ProjectState, refs: UserRefs) -> None:
    """Copy user references into the project so later sessions (and the
    service) rebuild the same memory cache keys."""
    if not refs.assets:
        return
    ref_dir = state.dir / "refs"
    entries = []
    for asset in refs.assets:
        entry = {"name": asset.name, "description": asset.text_desc}
        if asset.image_path:
            ref_dir.mkdir(parents=True, exist_ok=True)
            suffix = Path(asset.image_path).suffix or ".png"
            target = ref_dir / f"{len(entries):02d}{suffix}"
            shutil.copyfile(asset.image_path, target)
            entry["image"] = str(Path("refs") / target.name)
        entries.append(entry)
    (state.dir / "refs.json").write_text(
        json.dumps({"refs": entries}, indent=2) + "\n")


def project_user_refs(state: ProjectState) -> UserRefs:
    """Reload references persisted by an earlier run, if any."""
    manifest = state.dir / "refs.json"
    if not manifest.exists():
        return UserRefs()
    return load_user_refs(str(manifest))


def run_generate(config_path: str, project_dir: str,
                 prompt: Optional[str] = None,
                 plan_path: Optional[str] = None,
                 layout_dir: Optional[str] = None,
                 refs_path: Optional[str] = None,
                 gateway=None, backend=None,
                 template_library: Optional[TemplateLibrary] = None
                 ) -> ComicArtifact:
    """Full book generation into ``project_dir``; re-runs skip clean stages."""
    config = ProjectConfig.from_dict(json.loads(Path(config_path).read_text()))
    state = ProjectState(project_dir, config)
    refs = (load_user_refs(refs_path) if refs_path
            else project_user_refs(state))
    if refs_path:
        persist_user_refs(state, refs)
    pipe = Pipeline(state, gateway=gateway, backend=backend,
                    template_library=template_library,
                    user_layouts=load_user_layouts(layout_dir),
                    user_refs=refs)
    return pipe.run(prompt=prompt, plan_path=plan_path)
