"""Benchmark harness: tasks, layout metrics, OCCM, BPS, judges, reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

from .errors import GatewayError, ValidationError
from .gateway import ImageRef
from .geometry import greedy_match, multi_cover_area, union_area
from .layouts import (Layout, LayoutConstraints, generate_layout, project,
                      refine_layout)

# small enough that the guard only matters when expected == 0
OCCM_EPSILON = 1e-12

# The judge instructions below are part of the evaluation protocol and
# must stay byte-stable: cassettes key on the exact prompt text.
READABILITY_PROMPT = """You are evaluating the readability of a generated manga.

First, carefully read the provided manga pages and summarize the story conveyed by the manga.
Then compare your summary with the ground-truth story.
Assign a score from 1 to 5 according to how faithfully the manga communicates the ground-truth story.

Use a strict story-overlap criterion, not a generous impression score.
Estimate how much of the ground-truth story is communicated by the manga as an overlap percentage from 0 to 100.
Base this overlap on the ground-truth story elements that a reader can actually infer from the pages:
- main characters and their identities/roles;
- key settings and setting transitions;
- important events and actions;
- causal relations between events;
- temporal/order relations;
- ending state or resolution.

Important judging rules:
- Ambiguous, unreadable, or visually unclear content counts as missing.
- Incorrectly depicted events count as missing, even if the image is visually plausible.
- Extra unrelated events do not compensate for missing ground-truth events.
- Do not reward image quality, style, or aesthetics unless they directly improve story communication.
- If you are uncertain between two scores, choose the lower score.
- The score must exactly follow the overlap thresholds below.

Scoring rubric:
1: overlap < 40
2: 40
3: 60
4: 80
5: overlap >= 90

Ground-truth story:
{ground_truth_story}

Return your answer as strict JSON with this schema:
{
  "summary": "...",
  "overlap_percent": integer from 0 to 100,
  "matched_elements": ["..."],
  "missing_or_wrong_elements": ["..."],
  "score": 1,
  "reason": "..."
}"""

# 0-4 alignment rubrics; ids match the report columns they feed
RUBRIC_TEMPLATES = {
    "scene": ("Rate how well the image's setting and environment match "
              "this description on a 0-4 scale (0 = unrelated, 4 = fully "
              "aligned). Reply with the integer only.\nDescription: {prompt}"),
    "shot": ("Rate how well the image's camera framing and shot type match "
             "this description on a 0-4 scale (0 = unrelated, 4 = fully "
             "aligned). Reply with the integer only.\nDescription: {prompt}"),
    "character_interaction": (
        "Rate how well the characters' joint actions in the image match "
        "this description on a 0-4 scale (0 = unrelated, 4 = fully "
        "aligned). Reply with the integer only.\nDescription: {prompt}"),
    "individual_action": (
        "Rate how well each character's own action in the image matches "
        "this description on a 0-4 scale (0 = unrelated, 4 = fully "
        "aligned). Reply with the integer only.\nDescription: {prompt}"),
}

BPS_CSV_HEADER = ["story_id", "page", "panel_id", "has_text",
                  "face_occluded", "annotator_id"]


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchTask:
    story_id: str
    story_prompt: str
    page_count: int
    panel_counts: tuple[int, ...]
    target_layouts: tuple[Layout, ...]
    character_specs: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.target_layouts) != self.page_count:
            raise ValidationError("one target layout per page required")
        if len(self.panel_counts) != self.page_count:
            raise ValidationError("one panel count per page required")
        for count, layout in zip(self.panel_counts, self.target_layouts):
            if len(layout.panels) != count:
                raise ValidationError(
                    f"target layout for page {layout.page_index} has "
                    f"{len(layout.panels)} panels, expected {count}")
            cons = LayoutConstraints(panel_count=count)
            if project(layout, cons) != layout:
                raise ValidationError(
                    f"target layout for page {layout.page_index} is not a "
                    f"projection fixpoint")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "story_id": self.story_id,
            "story_prompt": self.story_prompt,
            "page_count": self.page_count,
            "panel_counts": list(self.panel_counts),
            "character_specs": list(self.character_specs),
            "target_layouts": [lay.to_dict() for lay in self.target_layouts],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchTask":
        return cls(story_id=doc["story_id"],
                   story_prompt=doc["story_prompt"],
                   page_count=doc["page_count"],
                   panel_counts=tuple(doc["panel_counts"]),
                   character_specs=tuple(doc.get("character_specs", ())),
                   target_layouts=tuple(Layout.from_dict(d)
                                        for d in doc["target_layouts"]))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class BpsRecord:
    page: int
    panel_id: str
    has_text: bool
    face_occluded: bool
    annotator_id: str


@dataclass(frozen=True)
class BpsAnnotation:
    story_id: str
    records: tuple[BpsRecord, ...]


class LayoutMetrics(NamedTuple):
    count_accuracy: float
    layout_iou: float
    coverage: float
    overlap: float


@dataclass
class EvalReport:
    """Per-story scores; ``story_id == "aggregate"`` marks the roll-up.

    ``readability`` holds the judge record; a record whose score is None
    preserves the raw reply of an unparseable judging attempt.
    """

    story_id: str
    count_accuracy: Optional[float] = None
    layout_iou: Optional[float] = None
    coverage: Optional[float] = None
    overlap: Optional[float] = None
    occm: Optional[float] = None
    bps: Optional[float] = None
    readability: Optional[dict] = None
    external: dict = field(default_factory=dict)
    stories: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "story_id": self.story_id,
            "count_accuracy": self.count_accuracy,
            "layout_iou": self.layout_iou,
            "coverage": self.coverage,
            "overlap": self.overlap,
            "occm": self.occm,
            "bps": self.bps,
            "readability": self.readability,
            "external": self.external,
            "stories": list(self.stories),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(story_id=doc["story_id"],
                   count_accuracy=doc.get("count_accuracy"),
                   layout_iou=doc.get("layout_iou"),
                   coverage=doc.get("coverage"),
                   overlap=doc.get("overlap"),
                   occm=doc.get("occm"),
                   bps=doc.get("bps"),
                   readability=doc.get("readability"),
                   external=doc.get("external", {}),
                   stories=tuple(doc.get("stories", ())))


# ---------------------------------------------------------------------------
# Task construction
# ---------------------------------------------------------------------------


def build_bench_task(story: dict, config, gateway=None) -> BenchTask:
    """Target layouts come from the layout agent, refined and projected."""
    story_id = story.get("id") or story.get("story_id")
    prompt = story.get("prompt") or story.get("story_prompt")
    if not story_id or not prompt:
        raise ValidationError("story needs an id and a prompt")

    layouts = []
    counts = []
    for page_index in range(config.page_count):
        count = config.panel_count_for(page_index)
        cons = LayoutConstraints(panel_count=count)
        context = f"{prompt} (page {page_index + 1} of {config.page_count})"
        layout = generate_layout(context, cons, gateway=gateway,
                                 page_index=page_index)
        layout = refine_layout(layout, context, cons, gateway=gateway)
        layouts.append(project(layout, cons))
        counts.append(count)

    return BenchTask(story_id=story_id, story_prompt=prompt,
                     page_count=config.page_count,
                     panel_counts=tuple(counts),
                     character_specs=tuple(story.get("characters", ())),
                     target_layouts=tuple(layouts))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def layout_metrics(targets: list[Layout],
                   generated: list[Layout]) -> LayoutMetrics:
    if len(targets) != len(generated):
        raise ValidationError(
            f"page lists differ: {len(targets)} targets vs "
            f"{len(generated)} generated")
    if not targets:
        raise ValidationError("no pages to score")

    count_hits = []
    ious = []
    coverages = []
    overlaps = []
    for tgt, gen in zip(targets, generated):
        count_hits.append(1.0 if len(tgt.panels) == len(gen.panels) else 0.0)
        match = greedy_match(list(tgt.rects), list(gen.rects))
        ious.append(match.page_score)
        coverages.append(union_area(list(gen.rects)))
        overlaps.append(multi_cover_area(list(gen.rects), 2))

    n = len(targets)
    return LayoutMetrics(sum(count_hits) / n, sum(ious) / n,
                         sum(coverages) / n, sum(overlaps) / n)


def occm(detected: int, expected: int,
         epsilon: float = OCCM_EPSILON) -> float:
    if detected < 0 or expected < 0:
        raise ValidationError("character counts must be non-negative")
    return math.exp(-abs(detected - expected) / (epsilon + expected)) * 100.0


def bps(annotation: BpsAnnotation) -> Optional[float]:
    """Per-panel mean over annotators, then mean over text panels."""
    votes: dict[tuple[int, str], list[float]] = {}
    for rec in annotation.records:
        if not rec.has_text:
            continue
        votes.setdefault((rec.page, rec.panel_id), []).append(
            0.0 if rec.face_occluded else 1.0)
    if not votes:
        return None
    panel_means = [sum(v) / len(v) for v in votes.values()]
    return sum(panel_means) / len(panel_means)


def write_bps_csv(path: str, annotations: list[BpsAnnotation]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BPS_CSV_HEADER)
        for ann in annotations:
            for r in ann.records:
                writer.writerow([ann.story_id, r.page, r.panel_id,
                                 int(r.has_text), int(r.face_occluded),
                                 r.annotator_id])


def _parse_bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no", ""):
        return False
    raise ValidationError(f"bad boolean {raw!r} in BPS CSV")


def read_bps_csv(path: str) -> list[BpsAnnotation]:
    grouped: dict[str, list[BpsRecord]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != BPS_CSV_HEADER:
            raise ValidationError(
                f"BPS CSV header must be {','.join(BPS_CSV_HEADER)}")
        for row in reader:
            grouped.setdefault(row["story_id"], []).append(BpsRecord(
                page=int(row["page"]), panel_id=row["panel_id"],
                has_text=_parse_bool(row["has_text"]),
                face_occluded=_parse_bool(row["face_occluded"]),
                annotator_id=row["annotator_id"]))
    return [BpsAnnotation(story_id=sid, records=tuple(recs))
            for sid, recs in grouped.items()]


# ---------------------------------------------------------------------------
# Judges
# ---------------------------------------------------------------------------


def score_from_overlap(percent: float) -> int:
    if percent < 40:
        return 1
    if percent < 60:
        return 2
    if percent < 80:
        return 3
    if percent < 90:
        return 4
    return 5


def _strip_fences(text: str) -> str:
    t = text.strip()
    if t.startswith("```"):
        t = t.split("\n", 1)[1] if "\n" in t else ""
        if t.rstrip().endswith("```"):
            t = t.rstrip()[:-3]
    return t.strip()


def _parse_readability(raw: str) -> dict:
    doc = json.loads(_strip_fences(raw))
    if not isinstance(doc, dict):
        raise ValueError("reply is not a JSON object")
    overlap = doc["overlap_percent"]
    if not isinstance(overlap, (int, float)) or isinstance(overlap, bool):
        raise ValueError("overlap_percent is not a number")
    overlap = int(overlap)
    if not 0 <= overlap <= 100:
        raise ValueError(f"overlap_percent {overlap} outside 0..100")
    return {
        "summary": str(doc.get("summary", "")),
        "overlap_percent": overlap,
        "matched_elements": list(doc.get("matched_elements", ())),
        "missing_or_wrong_elements": list(
            doc.get("missing_or_wrong_elements", ())),
        "model_score": doc.get("score"),
        "reason": str(doc.get("reason", "")),
    }


def readability_judge(pages: list[str], ground_truth: str, gateway) -> dict:
    """Whole-story readability via the fixed judge prompt.

    The stored score is always recomputed from overlap_percent; a model
    score that disagrees is overridden and the correction recorded. An
    unparseable reply (after one reprompt) yields score None with the
    raw reply preserved.
    """
    prompt = READABILITY_PROMPT.replace("{ground_truth_story}", ground_truth)
    messages = [{"role": "user", "content": prompt,
                 "images": [ImageRef(p) for p in pages]}]

    raw = ""
    for attempt in range(2):
        try:
            raw = gateway.chat(messages, temperature=0.0, seed=0)
            record = _parse_readability(raw)
        except GatewayError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            if attempt == 0:
                messages = messages + [
                    {"role": "assistant", "content": raw},
                    {"role": "user", "content":
                        f"Your reply could not be parsed ({exc}). Return "
                        f"only the strict JSON object described above."}]
                continue
            return {"score": None, "raw": raw, "error": str(exc)}
        rubric = score_from_overlap(record["overlap_percent"])
        record["score"] = rubric
        record["corrected"] = record["model_score"] != rubric
        return record
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class RubricResult:
    score: Optional[int]
    clamped: bool = False
    raw: str = ""


def rubric_judge(image: str, prompt: str, rubric_id: str,
                 gateway) -> RubricResult:
    if rubric_id not in RUBRIC_TEMPLATES:
        raise ValidationError(
            f"unknown rubric {rubric_id!r}; known: "
            f"{sorted(RUBRIC_TEMPLATES)}")
    text = RUBRIC_TEMPLATES[rubric_id].replace("{prompt}", prompt)
    try:
        raw = gateway.chat([{"role": "user", "content": text,
                             "images": [ImageRef(image)]}],
                           temperature=0.0, seed=0)
    except GatewayError:
        return RubricResult(score=None, raw="gateway unavailable")
    m = re.search(r"-?\d+", raw)
    if not m:
        return RubricResult(score=None, raw=raw)
    value = int(m.group())
    clamped = not 0 <= value <= 4
    return RubricResult(score=min(4, max(0, value)), clamped=clamped,
                        raw=raw)


# ---------------------------------------------------------------------------
# Aggregation and ingestion
# ---------------------------------------------------------------------------


def ingest_scores(path: str) -> dict[str, dict]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: ingestion file must map metric to "
                              f"value")
    out = {}
    for key, value in doc.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValidationError(f"{path}: metric {key!r} is not numeric")
        out[key] = {"value": float(value), "source": Path(path).name}
    return out


def aggregate(reports: list[EvalReport],
              ingested_paths: list[str] = ()) -> EvalReport:
    """Arithmetic means over stories where each metric is present."""
    if not reports:
        raise ValidationError("nothing to aggregate")

    def mean_of(values):
        present = [v for v in values if v is not None]
        return sum(present) / len(present) if present else None

    read_scores = [r.readability.get("score") for r in reports
                   if r.readability]
    readability = None
    score_mean = mean_of(read_scores)
    if score_mean is not None:
        readability = {"score": score_mean}

    external: dict[str, dict] = {}
    duplicates = []
    for path in ingested_paths:
        for key, entry in ingest_scores(path).items():
            if key in external:
                duplicates.append(key)
            else:
                external[key] = entry
    if duplicates:
        raise ValidationError(
            f"conflicting ingested metrics: {sorted(set(duplicates))}")

    return EvalReport(
        story_id="aggregate",
        count_accuracy=mean_of([r.count_accuracy for r in reports]),
        layout_iou=mean_of([r.layout_iou for r in reports]),
        coverage=mean_of([r.coverage for r in reports]),
        overlap=mean_of([r.overlap for r in reports]),
        occm=mean_of([r.occm for r in reports]),
        bps=mean_of([r.bps for r in reports]),
        readability=readability,
        external=external,
        stories=tuple(r.story_id for r in reports),
    )
