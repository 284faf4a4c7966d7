"""Build a two-page book with no network and no credentials.

The plan comes from a file, references cover every named entity, layouts
fall back to the deterministic grid, and panels come from the stub
backend. Run it twice: the second pass reuses every stage and the
archive bytes do not change.

    python3 demos/offline_book.py [out_dir]
"""

import json
import sys
from pathlib import Path

from PIL import Image

from mangaflow import ProjectConfig, extract_layout, run_generate
from mangaflow.planning import (DialogueLine, PageSpec, PanelSpec,
                                SectionSpec, StoryPlan)


def write_inputs(root: Path) -> tuple[str, str, str]:
    pages = []
    for i in range(2):
        panels = tuple(
            PanelSpec(f"pg{i}_{j}", f"Mio waters the balcony plants, beat {j}",
                      "s0",
                      dialogue=(DialogueLine("Mio", f"Almost done, {i}.{j}"),))
            for j in range(2))
        pages.append(PageSpec(i, f"balcony garden, page {i}", panels))
    plan = StoryPlan(tuple(pages),
                     (SectionSpec("s0", "an evening on the balcony",
                                  "a narrow balcony", ("Mio",),
                                  ("watering can",)),))
    plan_path = root / "plan.json"
    plan_path.write_text(plan.to_json())

    config = ProjectConfig(page_count=2, panel_counts=(2, 2),
                           page_px=(744, 1052), seed=3)
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config.to_dict()))

    # one reference per named entity keeps the build fully offline
    portrait = root / "mio.png"
    Image.new("RGB", (96, 96), (90, 140, 220)).save(portrait)
    refs_path = root / "refs.json"
    refs_path.write_text(json.dumps({"refs": [
        {"name": "a narrow balcony", "description": "plants on a rail"},
        {"name": "Mio", "description": "round glasses, braid",
         "image": "mio.png"},
        {"name": "watering can", "description": "green tin can"},
    ]}))
    return str(config_path), str(plan_path), str(refs_path)


def main() -> int:
    root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
    root.mkdir(parents=True, exist_ok=True)
    config, plan, refs = write_inputs(root)

    comic = run_generate(config, str(root / "project"), plan_path=plan,
                         refs_path=refs)
    print(f"book: {comic.archive_path}")
    for page in comic.pages:
        print(f"  page {page.page_index}: {page.image_path}")

    recovered = extract_layout(str(root / "project" / "pages"
                                   / "page_000.png"))
    print(f"recovered layout of page 0: {len(recovered.panels)} panels")
    for p in recovered.panels:
        r = p.region
        print(f"  {p.panel_id}: x={r.x:.3f} y={r.y:.3f} "
              f"w={r.w:.3f} h={r.h:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
