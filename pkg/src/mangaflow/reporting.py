"""Benchmark runs over story output directories, with report files.

Each story's outputs live in ``<outputs>/<story_id>`` shaped like a
project directory (``layouts/``, ``pages/``, ``book/``, optionally
``bps.csv``). Missing stories are recorded as absent rather than
failing the whole run: a benchmark sweep should survive one broken
entry.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

from .errors import ValidationError
from .layouts import Layout, extract_layout
from .metabench import (BenchTask, EvalReport, aggregate, bps, layout_metrics,
                        read_bps_csv, readability_judge)

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("Count", "IoU", "Cov.", "Ovl.", "OCCM", "Bubble", "Read.")


def load_tasks(path: str) -> list[BenchTask]:
    doc = json.loads(Path(path).read_text())
    items = doc["tasks"] if isinstance(doc, dict) else doc
    if not items:
        raise ValidationError(f"no tasks in {path}")
    return [BenchTask.from_dict(item) for item in items]


def _story_layouts(story_dir: Path) -> list[Layout]:
    saved = sorted((story_dir / "layouts").glob("page_*.json"))
    if saved:
        return [Layout.from_json(p.read_text()) for p in saved]
    composed = sorted(p for p in (story_dir / "pages").glob("page_*.png")
                      if ".lettered" not in p.name)
    return [extract_layout(str(p)) for p in composed]


def _story_pages(story_dir: Path) -> list[str]:
    book = sorted((story_dir / "book").glob("page_*.png"))
    if book:
        return [str(p) for p in book]
    return [str(p) for p in
            sorted((story_dir / "pages").glob("page_*.lettered.png"))]


def eval_story(task: BenchTask, story_dir: str,
               gateway=None) -> EvalReport:
    """Score one story's outputs against its task; absent parts stay None."""
    root = Path(story_dir)
    if not root.exists():
        log.warning("story %s: no outputs at %s", task.story_id, story_dir)
        return EvalReport(story_id=task.story_id)

    kwargs: dict = {}
    layouts = _story_layouts(root)
    if layouts:
        if len(layouts) == task.page_count:
            m = layout_metrics(task.target_layouts, layouts)
            kwargs.update(count_accuracy=m.count_accuracy,
                          layout_iou=m.layout_iou, coverage=m.coverage,
                          overlap=m.overlap)
        else:
            log.warning("story %s: %d layouts vs %d target pages; layout "
                        "metrics skipped", task.story_id, len(layouts),
                        task.page_count)

    bps_path = root / "bps.csv"
    if bps_path.exists():
        for annotation in read_bps_csv(str(bps_path)):
            if annotation.story_id == task.story_id:
                kwargs["bps"] = bps(annotation)
                break

    if gateway is not None:
        pages = _story_pages(root)
        if pages:
            kwargs["readability"] = readability_judge(
                pages, task.story_prompt, gateway)

    return EvalReport(story_id=task.story_id, **kwargs)


def _cell(value, percent: bool) -> str:
    if value is None:
        return "n/a"
    if percent:
        return f"{value * 100:.2f}%"
    return f"{value:.2f}"


def _row(label: str, report: EvalReport) -> list[str]:
    read_score = None
    if report.readability and report.readability.get("score") is not None:
        read_score = float(report.readability["score"])
    occm_value = report.occm
    return [label,
            _cell(report.count_accuracy, percent=True),
            _cell(report.layout_iou, percent=True),
            _cell(report.coverage, percent=True),
            _cell(report.overlap, percent=True),
            f"{occm_value:.2f}" if occm_value is not None else "n/a",
            _cell(report.bps, percent=True),
            f"{read_score:.2f}" if read_score is not None else "n/a"]


def format_table(reports: Sequence[EvalReport],
                 agg: EvalReport) -> str:
    rows = [["Story", *TABLE_COLUMNS]]
    rows.extend(_row(r.story_id, r) for r in reports)
    rows.append(_row("aggregate", agg))
    widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
    lines = []
    for n, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[c])
                               for c, cell in enumerate(row)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * widths[c]
                                   for c in range(len(widths))))
    if agg.external:
        lines.append("")
        lines.append("ingested:")
        for name in sorted(agg.external):
            entry = agg.external[name]
            lines.append(f"  {name} = {entry['value']} "
                         f"(from {entry['source']})")
    return "\n".join(lines) + "\n"


def run_eval(tasks_path: str, outputs_dir: str, report_path: str,
             ingest: Sequence[str] = (), gateway=None) -> str:
    """Score every task, aggregate, and write JSON + text reports.

    Returns the JSON report path; the text table lands beside it with a
    ``.txt`` suffix.
    """
    tasks = load_tasks(tasks_path)
    reports = [eval_story(task, str(Path(outputs_dir) / task.story_id),
                          gateway=gateway)
               for task in tasks]
    agg = aggregate(reports, ingested_paths=ingest)

    out = Path(report_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": 1,
           "aggregate": agg.to_dict(),
           "stories": [r.to_dict() for r in reports]}
    out.write_text(json.dumps(doc, indent=2) + "\n")
    table = format_table(reports, agg)
    out.with_suffix(".txt").write_text(table)
    return str(out)
