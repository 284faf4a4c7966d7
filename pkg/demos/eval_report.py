"""Score a generated project against bench tasks and print the table.

Builds the same offline project as demos/offline_book.py, treats its own
layouts as the targets, and merges one externally computed style score
from an ingestion file. Count and IoU come out at 100% because the
generator is deterministic given the layouts.

    python3 demos/eval_report.py [out_dir]
"""

import json
import shutil
import sys
from pathlib import Path

from mangaflow import BenchTask, Layout, run_eval, run_generate
from mangaflow.reporting import load_tasks

sys.path.insert(0, str(Path(__file__).resolve().parent))
from offline_book import write_inputs  # noqa: E402  (sibling script)


def main() -> int:
    root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
    root.mkdir(parents=True, exist_ok=True)
    config, plan, refs = write_inputs(root)
    run_generate(config, str(root / "project"), plan_path=plan,
                 refs_path=refs)

    project = root / "project"
    layouts = tuple(
        Layout.from_json((project / "layouts" / f"page_{i:03d}.json")
                         .read_text())
        for i in range(2))
    task = BenchTask(story_id="balcony", story_prompt="an evening on the "
                     "balcony", page_count=2, panel_counts=(2, 2),
                     target_layouts=layouts)
    tasks_path = root / "tasks.json"
    tasks_path.write_text(json.dumps({"tasks": [task.to_dict()]}))

    outputs = root / "outputs"
    if (outputs / "balcony").exists():
        shutil.rmtree(outputs / "balcony")
    shutil.copytree(project, outputs / "balcony")

    external = root / "external.json"
    external.write_text(json.dumps({"Self-CSD": 0.668}))

    report = run_eval(str(tasks_path), str(outputs),
                      str(root / "report.json"), ingest=(str(external),))
    print(Path(report).with_suffix(".txt").read_text())
    print(f"tasks loaded: {len(load_tasks(str(tasks_path)))}")
    print(f"report: {report}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
