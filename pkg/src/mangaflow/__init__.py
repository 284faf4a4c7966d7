"""Controllable manga-production pipeline and evaluation harness."""

__version__ = "0.1.0"

from .composing import ComicArtifact, PageArtifact, compose_comic, compose_page
from .errors import (CassetteMissError, GatewayError, InfeasibleLayoutError,
                     LetteringError, MangaFlowError, PlanError, RenderError,
                     StageError, ValidationError)
from .gateway import Gateway, ImageRef
from .geometry import (MatchResult, Rect, greedy_match, iou, multi_cover_area,
                       reading_order, union_area)
from .layouts import (Layout, LayoutConstraints, Panel, extract_layout,
                      generate_layout, project, refine_layout)
from .lettering import AnchorBox, TextElement, detect_anchors, place_bubbles
from .memory import SectionMemory, UserRefs, build_section_memory
from .metabench import (BenchTask, EvalReport, aggregate, bps,
                        layout_metrics, occm, readability_judge)
from .pipeline import Pipeline, ProjectState, run_generate
from .planning import ProjectConfig, StoryPlan, plan_story
from .rendering import GatewayBackend, PanelAsset, StubBackend, render_panel
from .reporting import run_eval

__all__ = [
    "AnchorBox",
    "BenchTask",
    "CassetteMissError",
    "ComicArtifact",
    "EvalReport",
    "Gateway",
    "GatewayBackend",
    "GatewayError",
    "ImageRef",
    "InfeasibleLayoutError",
    "Layout",
    "LayoutConstraints",
    "LetteringError",
    "MangaFlowError",
    "MatchResult",
    "PageArtifact",
    "Panel",
    "PanelAsset",
    "Pipeline",
    "PlanError",
    "ProjectConfig",
    "ProjectState",
    "Rect",
    "RenderError",
    "SectionMemory",
    "StageError",
    "StoryPlan",
    "StubBackend",
    "TextElement",
    "UserRefs",
    "ValidationError",
    "aggregate",
    "bps",
    "build_section_memory",
    "compose_comic",
    "compose_page",
    "detect_anchors",
    "extract_layout",
    "generate_layout",
    "greedy_match",
    "iou",
    "layout_metrics",
    "multi_cover_area",
    "occm",
    "place_bubbles",
    "plan_story",
    "project",
    "readability_judge",
    "reading_order",
    "refine_layout",
    "render_panel",
    "run_eval",
    "run_generate",
    "union_area",
]
