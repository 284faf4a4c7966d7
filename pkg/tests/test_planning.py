import json
import random

import pytest

from mangaflow.errors import PlanError, ValidationError
from mangaflow.planning import (
    DialogueLine,
    PageSpec,
    PanelSpec,
    ProjectConfig,
    SectionSpec,
    StoryPlan,
    enforce_structure,
    extract_sections,
    plan_story,
)
from tests.fakes import FakeGateway


def mk_panel(pid, sid="s0", desc=None, lines=1):
    dialogue = tuple(DialogueLine("Aya", f"line {pid}.{i}")
                     for i in range(lines))
    return PanelSpec(pid, desc or f"panel {pid} in a quiet room", sid, dialogue)


def mk_plan(counts, sections=("s0",)):
    pages = tuple(
        PageSpec(i, f"page {i} context",
                 tuple(mk_panel(f"p{i}_{j}") for j in range(n)))
        for i, n in enumerate(counts))
    secs = tuple(SectionSpec(s, f"segment {s}", "a small flat",
                             ("Aya",), ("kettle",)) for s in sections)
    return StoryPlan(pages, secs)


def total_dialogue(plan):
    return sum(len(p.dialogue) for page in plan.pages for p in page.panels)


def config(pages, counts=None, **kw):
    return ProjectConfig(page_count=pages,
                         panel_counts=tuple(counts) if counts else (), **kw)


class TestProjectConfig:
    def test_defaults_round_trip(self):
        c = config(4, [4, 3, 4, 3])
        assert ProjectConfig.from_dict(c.to_dict()) == c

    def test_panel_count_fallback(self):
        c = config(3, None, default_panel_count=5)
        assert [c.panel_count_for(i) for i in range(3)] == [5, 5, 5]
        d = config(2, [2, 7])
        assert [d.panel_count_for(i) for i in range(2)] == [2, 7]

    def test_invalid_values_rejected(self):
        with pytest.raises(ValidationError):
            config(0)
        with pytest.raises(ValidationError):
            config(1, [13])
        with pytest.raises(ValidationError):
            config(2, [3])  # wrong length
        with pytest.raises(ValidationError):
            ProjectConfig(page_count=1, page_px=(0, 100))
        with pytest.raises(ValidationError):
            ProjectConfig(page_count=1, mode="offline")


class TestPlanTypes:
    def test_json_round_trip(self):
        plan = mk_plan([4, 3])
        assert StoryPlan.from_json(plan.to_json()) == plan

    def test_noncontiguous_pages_rejected(self):
        with pytest.raises(ValidationError):
            StoryPlan((PageSpec(1, "x", (mk_panel("a"),)),),
                      (SectionSpec("s0", "d", "sc"),))

    def test_duplicate_sections_rejected(self):
        with pytest.raises(ValidationError):
            mk_plan([1], sections=("s0", "s0"))

    def test_empty_description_rejected(self):
        with pytest.raises(ValidationError):
            PanelSpec("p", "   ", "s0")

    def test_unknown_bubble_kind_rejected(self):
        with pytest.raises(ValidationError):
            DialogueLine("A", "hi", kind="whisper")


class TestPlanStory:
    def test_empty_prompt_rejected(self):
        with pytest.raises(ValidationError):
            plan_story("   ", config(1), FakeGateway())

    def test_well_formed_reply(self):
        want = mk_plan([4, 3, 4, 3])
        gw = FakeGateway(chat_replies=[json.dumps(want.to_dict())])
        got = plan_story("a courier finds a hidden door", config(4, [4, 3, 4, 3]), gw)
        assert got == want
        assert len(gw.chat_calls) == 1

    def test_excess_pages_enforced_down(self):
        gw = FakeGateway(chat_replies=[json.dumps(mk_plan([4, 3, 4, 3, 2]).to_dict())])
        got = plan_story("story", config(4, [4, 3, 4, 3]), gw)
        assert len(got.pages) == 4
        assert [len(p.panels) for p in got.pages] == [4, 3, 4, 3]

    def test_retry_then_success(self):
        want = mk_plan([2])
        gw = FakeGateway(chat_replies=[
            "no json here", '{"pages": [], "sections": "broken"}',
            json.dumps(want.to_dict())])
        got = plan_story("story", config(1, [2]), gw)
        assert got == want
        assert len(gw.chat_calls) == 3
        assert "rejected" in gw.chat_calls[1][-1]["content"]

    def test_three_failures_raise_with_raw_text(self):
        gw = FakeGateway(chat_replies=["junk one", "junk two", "junk three"])
        with pytest.raises(PlanError) as err:
            plan_story("story", config(1), gw)
        assert err.value.raw_text == "junk three"

    def test_broken_section_ref_is_retried(self):
        bad = mk_plan([2]).to_dict()
        bad["pages"][0]["panels"][0]["section_id"] = "ghost"
        want = mk_plan([2])
        gw = FakeGateway(chat_replies=[json.dumps(bad),
                                       json.dumps(want.to_dict())])
        assert plan_story("story", config(1, [2]), gw) == want
        assert len(gw.chat_calls) == 2


class TestEnforceStructure:
    def test_conforming_plan_unchanged(self):
        plan = mk_plan([4, 3])
        assert enforce_structure(plan, config(2, [4, 3])) == plan

    def test_six_panels_merged_to_four(self):
        plan = mk_plan([6])
        out = enforce_structure(plan, config(1, [4]))
        page = out.pages[0]
        assert len(page.panels) == 4
        # tail-first: merges land on the last surviving panel
        assert len(page.panels[3].dialogue) == 3
        assert [len(p.dialogue) for p in page.panels[:3]] == [1, 1, 1]
        assert total_dialogue(out) == total_dialogue(plan)

    def test_three_panels_split_to_four(self):
        plan = mk_plan([3])
        long = plan.pages[0].panels[1]
        long = PanelSpec(long.panel_id,
                         "a very long description of the busy market street "
                         "with vendors and lanterns and rain",
                         long.section_id, long.dialogue)
        plan = StoryPlan((PageSpec(0, "ctx", (plan.pages[0].panels[0], long,
                                              plan.pages[0].panels[2])),),
                         plan.sections)
        out = enforce_structure(plan, config(1, [4]))
        assert len(out.pages[0].panels) == 4
        # the long panel was the one split
        split_ids = [p.panel_id for p in out.pages[0].panels]
        assert split_ids.count("p0_1") == 1 and "p0_1b" in split_ids
        assert total_dialogue(out) == total_dialogue(plan)

    def test_excess_pages_merge_into_last(self):
        plan = mk_plan([2, 2, 2])
        out = enforce_structure(plan, config(2, [2, 2]))
        assert len(out.pages) == 2
        assert total_dialogue(out) == total_dialogue(plan)
        assert "page 2 context" in out.pages[1].context

    def test_missing_page_synthesized_by_split(self):
        plan = mk_plan([2, 6])
        out = enforce_structure(plan, config(3, [2, 3, 3]))
        assert [len(p.panels) for p in out.pages] == [2, 3, 3]
        assert [p.index for p in out.pages] == [0, 1, 2]
        assert total_dialogue(out) == total_dialogue(plan)

    def test_single_panel_page_can_still_split(self):
        plan = mk_plan([1])
        out = enforce_structure(plan, config(2, [1, 1]))
        assert [len(p.panels) for p in out.pages] == [1, 1]

    def test_random_shapes_always_conform(self):
        rng = random.Random(7)
        for _ in range(60):
            src_pages = rng.randint(1, 6)
            plan = mk_plan([rng.randint(1, 8) for _ in range(src_pages)])
            want_pages = rng.randint(1, 6)
            counts = [rng.randint(1, 6) for _ in range(want_pages)]
            cfg = config(want_pages, counts)
            out = enforce_structure(plan, cfg)
            assert [p.index for p in out.pages] == list(range(want_pages))
            assert [len(p.panels) for p in out.pages] == counts
            assert total_dialogue(out) == total_dialogue(plan)
            # idempotent once conforming
            assert enforce_structure(out, cfg) == out


class TestExtractSections:
    def test_all_referenced(self):
        plan = mk_plan([2])
        assert extract_sections(plan) == list(plan.sections)

    def test_orphan_dropped_with_warning(self, caplog):
        plan = mk_plan([2], sections=("s0", "s9"))
        with caplog.at_level("WARNING"):
            got = extract_sections(plan)
        assert [s.section_id for s in got] == ["s0"]
        assert any("s9" in r.message for r in caplog.records)

    def test_unknown_reference_raises_naming_panel(self):
        pages = (PageSpec(0, "c", (mk_panel("p0", sid="missing"),)),)
        plan = StoryPlan(pages, (SectionSpec("s0", "d", "sc"),))
        with pytest.raises(ValidationError) as err:
            extract_sections(plan)
        assert "p0" in str(err.value) and "missing" in str(err.value)
