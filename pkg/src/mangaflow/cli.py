"""Command-line entry points for every pipeline stage.

Exit codes: 0 on success, 2 on validation errors, 3 on gateway
failures. Stage subcommands operate on an existing project directory;
``generate`` runs the whole pipeline end to end.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from .errors import GatewayError, MangaFlowError, StageError, ValidationError
from .gateway import ENV_CASSETTE, ENV_MODE, Gateway
from .layouts import default_library, extract_layout
from .pipeline import (Pipeline, ProjectState, load_user_layouts,
                       load_user_refs, persist_user_refs, project_user_refs,
                       run_generate)
from .planning import ProjectConfig
from .rendering import GatewayBackend, StubBackend

log = logging.getLogger(__name__)


def _build_gateway(args) -> Optional[Gateway]:
    """Gateway from flags and env; None when fully offline."""
    mode = getattr(args, "mode", None) or os.environ.get(ENV_MODE, "replay")
    cassette = (getattr(args, "cassette", None)
                or os.environ.get(ENV_CASSETTE))
    if mode in ("record", "replay") and not cassette:
        return None
    return Gateway.from_env(mode=mode, cassette=cassette)


def _open_state(args) -> ProjectState:
    config_path = getattr(args, "config", None)
    if config_path:
        config = ProjectConfig.from_dict(
            json.loads(Path(config_path).read_text()))
        return ProjectState(args.project, config)
    return ProjectState.open(args.project)


def _pipeline(args, state: ProjectState) -> Pipeline:
    # without --refs, fall back to whatever the project has persisted
    if getattr(args, "refs", None):
        refs = load_user_refs(args.refs)
    else:
        refs = project_user_refs(state)
    return Pipeline(
        state,
        gateway=_build_gateway(args),
        template_library=(default_library()
                          if getattr(args, "templates", False) else None),
        user_layouts=load_user_layouts(getattr(args, "layouts", None)),
        user_refs=refs)


def _add_project_flags(sub, config_required=False):
    sub.add_argument("--project", required=True,
                     help="project directory (created if needed)")
    sub.add_argument("--config", required=config_required,
                     help="config JSON; defaults to the project's copy")
    sub.add_argument("--mode", choices=("live", "record", "replay"),
                     help="gateway mode (default: env or replay)")
    sub.add_argument("--cassette", help="cassette path for record/replay")


def _cmd_plan(args) -> int:
    state = _open_state(args)
    pipe = _pipeline(args, state)
    plan = pipe.run_plan(prompt=args.prompt, plan_path=args.plan)
    print(f"planned {len(plan.pages)} pages, "
          f"{len(plan.sections)} sections -> {state.plan_path}")
    return 0


def _cmd_memory(args) -> int:
    state = _open_state(args)
    pipe = _pipeline(args, state)
    if args.refs:
        persist_user_refs(state, pipe.user_refs)
    memories = pipe.run_memory()
    for sid, memory in memories.items():
        refs = 1 + len(memory.char_refs) + len(memory.obj_refs)
        note = f" ({len(memory.warnings)} warnings)" if memory.warnings else ""
        print(f"section {sid}: {refs} refs{note}")
    return 0


def _cmd_layout(args) -> int:
    state = _open_state(args)
    pipe = _pipeline(args, state)
    layouts = pipe.run_layout(page_index=args.page)
    for i in sorted(layouts):
        print(f"page {i}: {len(layouts[i].panels)} panels "
              f"-> {state.layout_path(i)}")
    return 0


def _backend_override(args, gateway):
    choice = getattr(args, "backend", None)
    if not choice:
        return None
    if choice == "stub":
        return StubBackend()
    if gateway is None:
        raise ValidationError("gateway backend needs --mode/--cassette "
                              "or live credentials")
    return GatewayBackend(gateway)


def _cmd_render(args) -> int:
    state = _open_state(args)
    if args.backend:
        state.config = dataclasses.replace(state.config,
                                           backend=args.backend)
    pipe = _pipeline(args, state)
    rendered = pipe.run_render(page_index=args.page)
    total = sum(len(v) for v in rendered.values())
    print(f"rendered {total} panels over {len(rendered)} pages")
    return 0


def _cmd_compose(args) -> int:
    state = _open_state(args)
    pipe = _pipeline(args, state)
    pages = pipe.run_compose(page_index=args.page)
    for i in sorted(pages):
        print(f"page {i} -> {pages[i].image_path}")
    return 0


def _cmd_letter(args) -> int:
    state = _open_state(args)
    pipe = _pipeline(args, state)
    pages = pipe.run_letter(page_index=args.page)
    for i in sorted(pages):
        print(f"page {i} -> {pages[i].image_path}")
    return 0


def _cmd_generate(args) -> int:
    gateway = _build_gateway(args)
    comic = run_generate(
        args.config, args.project,
        prompt=args.prompt, plan_path=args.plan,
        layout_dir=args.layouts, refs_path=args.refs,
        gateway=gateway, backend=_backend_override(args, gateway),
        template_library=default_library() if args.templates else None)
    print(f"{len(comic.pages)} pages -> {comic.archive_path}")
    return 0


def _cmd_extract_layout(args) -> int:
    layout = extract_layout(args.image)
    text = layout.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"{len(layout.panels)} panels -> {args.out}")
    else:
        print(text)
    return 0


def _cmd_eval(args) -> int:
    from .reporting import run_eval

    path = run_eval(args.tasks, args.outputs, args.out,
                    ingest=tuple(args.ingest or ()),
                    gateway=_build_gateway(args))
    print(Path(path).with_suffix(".txt").read_text(), end="")
    print(f"report -> {path}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.project, port=args.port, host=args.host,
          gateway=_build_gateway(args))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mangaflow",
        description="Controllable manga production and evaluation.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("plan", help="write the story plan")
    _add_project_flags(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--prompt", help="story prompt text")
    src.add_argument("--plan", help="existing plan JSON to adopt")
    p.set_defaults(fn=_cmd_plan)

    p = subs.add_parser("memory", help="build section reference memory")
    _add_project_flags(p)
    p.add_argument("--refs", help="user reference manifest JSON")
    p.set_defaults(fn=_cmd_memory)

    p = subs.add_parser("layout", help="produce projected page layouts")
    _add_project_flags(p)
    p.add_argument("--page", type=int, help="only this page index")
    p.add_argument("--layouts", help="directory of user layout JSON files")
    p.add_argument("--templates", action="store_true",
                   help="retrieve from the built-in template library")
    p.set_defaults(fn=_cmd_layout)

    p = subs.add_parser("render", help="render panel assets")
    _add_project_flags(p)
    p.add_argument("--page", type=int, help="only this page index")
    p.add_argument("--backend", choices=("stub", "gateway"),
                   help="override the configured render backend")
    p.set_defaults(fn=_cmd_render)

    p = subs.add_parser("compose", help="composite pages from panels")
    _add_project_flags(p)
    p.add_argument("--page", type=int, help="only this page index")
    p.set_defaults(fn=_cmd_compose)

    p = subs.add_parser("letter", help="place and raster dialogue")
    _add_project_flags(p)
    p.add_argument("--page", type=int, help="only this page index")
    p.set_defaults(fn=_cmd_letter)

    p = subs.add_parser("generate", help="run the whole pipeline")
    _add_project_flags(p, config_required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--prompt", help="story prompt text")
    src.add_argument("--plan", help="existing plan JSON to adopt")
    p.add_argument("--layouts", help="directory of user layout JSON files")
    p.add_argument("--refs", help="user reference manifest JSON")
    p.add_argument("--templates", action="store_true",
                   help="retrieve from the built-in template library")
    p.add_argument("--backend", choices=("stub", "gateway"),
                   help="override the configured render backend")
    p.set_defaults(fn=_cmd_generate)

    p = subs.add_parser("extract-layout",
                        help="recover a layout from a page raster")
    p.add_argument("--image", required=True, help="composed page PNG")
    p.add_argument("--out", help="layout JSON output path (default stdout)")
    p.set_defaults(fn=_cmd_extract_layout)

    p = subs.add_parser("eval", help="score outputs against bench tasks")
    p.add_argument("--tasks", required=True, help="bench task JSON")
    p.add_argument("--outputs", required=True,
                   help="directory of per-story outputs")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--ingest", action="append",
                   help="external score JSON to merge (repeatable)")
    p.add_argument("--mode", choices=("live", "record", "replay"))
    p.add_argument("--cassette", help="cassette for the readability judge")
    p.set_defaults(fn=_cmd_eval)

    p = subs.add_parser("serve", help="serve the project over HTTP")
    _add_project_flags(p)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(fn=_cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MangaFlowError as exc:
        cause = exc.cause if isinstance(exc, StageError) else exc
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(cause, GatewayError) else 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
