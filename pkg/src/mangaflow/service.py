"""Local HTTP service over a project directory.

Serves project state to the studio UI and accepts edits. The server is
authoritative for geometry: layout writes pass through projection, so
clients always get back a valid layout, never their raw drag. Mutations
serialize through one lock (single-operator tool); reads are free.

Edits pin their stage with the same input digest the pipeline would
compute, so a later ``generate`` keeps the edit instead of regenerating
over it. Conflicting writers are resolved last-writer-wins; responses
carry a per-page version counter so a client can notice it lost.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse

from .composing import PageArtifact, placement_rects
from .errors import (CassetteMissError, GatewayError, MangaFlowError,
                     StageError, ValidationError)
from .layouts import Layout, LayoutConstraints, project
from .lettering import TextElement, raster_text, read_letter_json, write_letter_json
from .pipeline import (Pipeline, ProjectState, _align_panel_ids, _digest,
                       _file_sha, project_user_refs)
from .planning import PageSpec, StoryPlan

API_PREFIX = "/v1"
LONG_POLL_MAX_S = 30.0


def _invariant_422(exc: Exception) -> HTTPException:
    return HTTPException(status_code=422, detail={
        "error": "validation", "invariant": str(exc)})


def _gateway_502(exc: Exception) -> HTTPException:
    detail = {"error": "gateway", "message": str(exc)}
    if isinstance(exc, CassetteMissError):
        detail["key"] = exc.key
    return HTTPException(status_code=502, detail=detail)


class _Project:
    """Request-facing wrapper: state + locks + cached plan lookups."""

    def __init__(self, project_dir: str, gateway=None):
        self.state = ProjectState.open(project_dir)
        self.gateway = gateway
        self.write_lock = threading.Lock()
        self.events = threading.Condition()
        self.state.on_event = self._notify

    def _notify(self, event: dict) -> None:
        with self.events:
            self.events.notify_all()

    # -- plan helpers ------------------------------------------------------

    def plan(self) -> Optional[StoryPlan]:
        if not self.state.plan_path.exists():
            return None
        return StoryPlan.from_json(self.state.plan_path.read_text())

    def plan_page(self, i: int) -> Optional[PageSpec]:
        plan = self.plan()
        if plan is None or not 0 <= i < len(plan.pages):
            return None
        return plan.pages[i]

    def check_page(self, i: int) -> None:
        if not 0 <= i < self.state.config.page_count:
            raise HTTPException(status_code=404,
                                detail={"error": "no such page", "page": i})

    def pipeline(self) -> Pipeline:
        return Pipeline(self.state, gateway=self.gateway,
                        user_refs=project_user_refs(self.state))

    # -- digests matching the pipeline's stage keys ------------------------

    def pin_layout(self, i: int, layout: Layout) -> None:
        # pinned as the agent-form digest, which is what a plain re-run
        # of generate computes; the edited file then wins the skip
        page = self.plan_page(i)
        count = len(layout.panels)
        digest = _digest({
            "context": page.context if page else "",
            "panel_ids": [p.panel_id for p in (page.panels if page
                                               else layout.panels)],
            "count": count,
            "source": ["agent", "agent"]})
        self.state.mark(f"layout:{i}", digest)

    def pin_letters(self, i: int) -> None:
        page = self.plan_page(i)
        if page is None:
            return
        config = self.state.config
        digest = _digest({
            "page": _file_sha(self.state.page_path(i)),
            "plan_page": page.to_dict(),
            "font_px": config.font_px,
            "min_font_px": config.min_font_px,
            "page_px": list(config.page_px)})
        self.state.mark(f"letter:{i}", digest)


def _page_summary(proj: _Project, i: int) -> dict:
    state = proj.state
    stages = {
        "layout": state.stage_record(f"layout:{i}") is not None,
        "render": state.has_stage_prefix(f"render:{i}:"),
        "compose": state.stage_record(f"compose:{i}") is not None,
        "letter": state.stage_record(f"letter:{i}") is not None,
    }
    return {
        "index": i,
        "version": state.version(i),
        "flags": stages,
        "has_image": state.page_path(i).exists(),
        "has_lettered": state.lettered_path(i).exists(),
        "degraded_panels": state.degraded_panels(i),
    }


def create_app(project_dir: str, gateway=None) -> FastAPI:
    """Build the service app bound to one project directory."""
    proj = _Project(project_dir, gateway=gateway)
    app = FastAPI(title="mangaflow studio service", docs_url=None,
                  redoc_url=None)
    app.state.project = proj

    @app.exception_handler(MangaFlowError)
    def _domain_error(_request: Request, exc: MangaFlowError):
        cause = exc.cause if isinstance(exc, StageError) else exc
        if isinstance(cause, GatewayError):
            raised = _gateway_502(cause)
        else:
            raised = _invariant_422(cause)
        return JSONResponse(status_code=raised.status_code,
                            content={"detail": raised.detail})

    # -- project -----------------------------------------------------------

    @app.get(f"{API_PREFIX}/project")
    def get_project():
        state = proj.state
        plan = proj.plan()
        book = state.book_dir / "comic.cbz"
        return {
            "config": state.config.to_dict(),
            "page_count": state.config.page_count,
            "plan_available": plan is not None,
            "book": {"available": book.exists(),
                     "pinned": state.stage_record("book") is not None},
            "pages": [_page_summary(proj, i)
                      for i in range(state.config.page_count)],
            "event_seq": state.event_count(),
        }

    # -- page image --------------------------------------------------------

    @app.get(f"{API_PREFIX}/pages/{{i}}/image")
    def get_image(i: int, kind: str = "auto"):
        proj.check_page(i)
        if kind not in ("auto", "raw", "lettered"):
            raise _invariant_422(ValueError(f"unknown image kind {kind!r}"))
        lettered = proj.state.lettered_path(i)
        raw = proj.state.page_path(i)
        if kind == "lettered" or (kind == "auto" and lettered.exists()):
            path = lettered
        else:
            path = raw
        if not path.exists():
            raise HTTPException(status_code=404, detail={
                "error": "page not composed yet", "page": i})
        return FileResponse(str(path), media_type="image/png")

    # -- layout ------------------------------------------------------------

    @app.get(f"{API_PREFIX}/pages/{{i}}/layout")
    def get_layout(i: int):
        proj.check_page(i)
        try:
            layout = proj.state.load_layout(i)
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail={
                "error": str(exc), "page": i})
        return {"layout": layout.to_dict(), "version": proj.state.version(i)}

    @app.put(f"{API_PREFIX}/pages/{{i}}/layout")
    def put_layout(i: int, body: dict):
        proj.check_page(i)
        if "layout" not in body:
            raise _invariant_422(ValueError("body needs a 'layout' object"))
        with proj.write_lock:
            try:
                proposal = Layout.from_dict(body["layout"], source="user")
            except ValidationError as exc:
                raise _invariant_422(exc)
            page = proj.plan_page(i)
            count = (len(page.panels) if page
                     else proj.state.config.panel_count_for(i))
            try:
                projected = project(
                    proposal, LayoutConstraints(panel_count=count))
                if page is not None:
                    projected = _align_panel_ids(projected, page)
                else:
                    projected = Layout(page_index=i, panels=projected.panels,
                                       source="user")
            except MangaFlowError as exc:
                raise _invariant_422(exc)

            path = proj.state.layout_path(i)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(projected.to_json() + "\n")
            proj.pin_layout(i, projected)
            proj.state.drop_stages((f"compose:{i}", f"letter:{i}", "book"))
            version = proj.state.bump_version(i)
            proj.state.append_event("layout_edit", page=i, version=version)
        return {"layout": projected.to_dict(), "version": version}

    # -- letters -----------------------------------------------------------

    @app.get(f"{API_PREFIX}/pages/{{i}}/letters")
    def get_letters(i: int):
        proj.check_page(i)
        path = proj.state.letters_path(i)
        if not path.exists():
            raise HTTPException(status_code=404, detail={
                "error": "page not lettered yet", "page": i})
        doc = json.loads(path.read_text())
        doc["version"] = proj.state.version(i)
        return doc

    @app.put(f"{API_PREFIX}/pages/{{i}}/letters")
    def put_letters(i: int, body: dict):
        proj.check_page(i)
        if "elements" not in body:
            raise _invariant_422(ValueError("body needs an 'elements' list"))
        with proj.write_lock:
            try:
                elements = [TextElement.from_dict(d)
                            for d in body["elements"]]
            except (ValidationError, KeyError, TypeError, ValueError) as exc:
                raise _invariant_422(exc)
            try:
                composed = proj.state.load_page(i)
            except ValidationError as exc:
                raise _invariant_422(exc)

            config = proj.state.config
            sidecar = proj.state.letters_path(i)
            degraded = False
            if sidecar.exists():
                degraded = json.loads(sidecar.read_text()).get(
                    "anchors_degraded", False)
            try:
                raster_text(composed, elements, config,
                            out_path=str(proj.state.lettered_path(i)))
            except MangaFlowError as exc:
                raise _invariant_422(exc)
            write_letter_json(str(sidecar), elements, config.page_px,
                              anchors_degraded=degraded)
            proj.pin_letters(i)
            proj.state.drop_stages(("book",))
            version = proj.state.bump_version(i)
            proj.state.append_event("letters_edit", page=i, version=version,
                                    elements=len(elements))
        return {
            "elements": len(elements),
            "overflow_indices": [e.order_index for e in elements
                                 if e.overflow],
            "version": version,
        }

    # -- rerender / recompose ----------------------------------------------

    @app.post(f"{API_PREFIX}/pages/{{i}}/panels/{{panel_id}}/rerender")
    def rerender(i: int, panel_id: str):
        proj.check_page(i)
        with proj.write_lock:
            try:
                layout = proj.state.load_layout(i)
            except ValidationError as exc:
                raise _invariant_422(exc)
            if panel_id not in {p.panel_id for p in layout.panels}:
                raise HTTPException(status_code=404, detail={
                    "error": "no such panel", "panel_id": panel_id})
            proj.state.bump_salt(i, panel_id)
            pipe = proj.pipeline()
            pipe.run_render(page_index=i)
            pipe.run_compose(page_index=i)
            pipe.run_letter(page_index=i)
            proj.state.drop_stages(("book",))
            asset = proj.state.load_assets(i)[panel_id]
            version = proj.state.bump_version(i)
            proj.state.append_event("rerender", page=i, panel_id=panel_id,
                                    version=version,
                                    prompt_digest=asset.prompt_digest)
        return {"panel_id": panel_id, "prompt_digest": asset.prompt_digest,
                "version": version}

    @app.post(f"{API_PREFIX}/pages/{{i}}/recompose")
    def recompose(i: int):
        proj.check_page(i)
        with proj.write_lock:
            pipe = proj.pipeline()
            pipe.run_compose(page_index=i)
            pipe.run_letter(page_index=i)
            proj.state.drop_stages(("book",))
            version = proj.state.bump_version(i)
            proj.state.append_event("recompose", page=i, version=version)
        return {"page_index": i, "version": version,
                "image": f"{API_PREFIX}/pages/{i}/image"}

    # -- events ------------------------------------------------------------

    @app.get(f"{API_PREFIX}/events")
    def get_events(after: int = 0, timeout: float = 25.0):
        timeout = max(0.0, min(timeout, LONG_POLL_MAX_S))
        pending = proj.state.events_after(after)
        if not pending and timeout > 0:
            with proj.events:
                proj.events.wait(timeout)
            pending = proj.state.events_after(after)
        next_seq = pending[-1]["seq"] if pending else after
        return {"events": pending, "next": next_seq}

    return app


def serve(project_dir: str, port: int = 8765, host: str = "127.0.0.1",
          gateway=None) -> None:
    """Run the service until interrupted."""
    import uvicorn

    app = create_app(project_dir, gateway=gateway)
    uvicorn.run(app, host=host, port=port, log_level="warning")
