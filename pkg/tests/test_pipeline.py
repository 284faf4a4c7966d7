"""Project-directory orchestration: stage pinning, skipping, degradation."""

import json
from pathlib import Path

import pytest
from PIL import Image

from mangaflow.errors import (CassetteMissError, GatewayError, StageError,
                              ValidationError)
from mangaflow.layouts import Layout
from mangaflow.pipeline import (Pipeline, ProjectState, load_user_layouts,
                                load_user_refs, run_generate)
from mangaflow.planning import (DialogueLine, PageSpec, PanelSpec,
                                ProjectConfig, SectionSpec, StoryPlan)
from mangaflow.rendering import GatewayBackend

from .fakes import FakeGateway


def make_plan(counts=(2, 2)):
    pages = []
    for i, n in enumerate(counts):
        panels = tuple(
            PanelSpec(f"pg{i}_{j}", f"Aya lifts the kettle, beat {j}", "s0",
                      dialogue=(DialogueLine("Aya", f"Line {i}.{j}"),))
            for j in range(n))
        pages.append(PageSpec(i, f"morning routine, page {i}", panels))
    sections = (SectionSpec("s0", "a slow morning at home", "a small flat",
                            ("Aya",), ("kettle",)),)
    return StoryPlan(tuple(pages), sections)


def write_inputs(tmp_path, counts=(2, 2), **config_kw):
    """Plan file, config file, and a refs manifest covering every name."""
    plan = make_plan(counts)
    plan_path = tmp_path / "plan_in.json"
    plan_path.write_text(plan.to_json())

    kw = dict(page_count=len(counts), panel_counts=tuple(counts),
              page_px=(372, 526), gutter_px=8, border_px=2, seed=7,
              font_px=13, min_font_px=9)
    kw.update(config_kw)
    config = ProjectConfig(**kw)
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config.to_dict()))

    img = tmp_path / "aya.png"
    Image.new("RGB", (64, 64), (10, 200, 30)).save(img)
    refs = {"refs": [
        {"name": "a small flat", "description": "cramped kitchen, morning"},
        {"name": "Aya", "description": "short hair, apron", "image": "aya.png"},
        {"name": "kettle", "description": "dented copper kettle"},
    ]}
    refs_path = tmp_path / "refs.json"
    refs_path.write_text(json.dumps(refs))
    return str(config_path), str(plan_path), str(refs_path)


def generate(tmp_path, project="proj", gateway=None, **kw):
    config_path, plan_path, refs_path = write_inputs(tmp_path)
    return run_generate(config_path, str(tmp_path / project),
                        plan_path=plan_path, refs_path=refs_path,
                        gateway=gateway, **kw)


class TestOfflineGenerate:
    def test_end_to_end_artifacts(self, tmp_path):
        comic = generate(tmp_path)
        project = tmp_path / "proj"
        assert len(comic.pages) == 2
        assert Path(comic.archive_path).exists()
        for i in range(2):
            assert (project / "layouts" / f"page_{i:03d}.json").exists()
            assert (project / "pages" / f"page_{i:03d}.png").exists()
            assert (project / "pages" / f"page_{i:03d}.lettered.png").exists()
            assert (project / "pages" / f"page_{i:03d}.letter.json").exists()
        assert all(p.lettered for p in comic.pages)
        panel_files = list((project / "panels").rglob("*.png"))
        assert len(panel_files) == 4

    def test_letter_sidecar_reports_degraded_anchors(self, tmp_path):
        generate(tmp_path)
        doc = json.loads((tmp_path / "proj" / "pages"
                          / "page_000.letter.json").read_text())
        assert doc["anchors_degraded"] is True
        assert len(doc["elements"]) == 2

    def test_rerun_skips_and_matches_bytes(self, tmp_path):
        first = generate(tmp_path)
        before = Path(first.archive_path).read_bytes()

        counter = FakeGateway()
        second = generate(tmp_path, gateway=counter)
        assert counter.chat_calls == []
        assert counter.image_calls == []
        assert Path(second.archive_path).read_bytes() == before

        events = ProjectState.open(str(tmp_path / "proj")).events_after(0)
        second_run = [e for e in events if e.get("kind") == "stage"]
        tail = second_run[-8:]
        assert all(e["status"] in ("clean", "ready") for e in tail)

    def test_fresh_projects_byte_identical(self, tmp_path):
        a = generate(tmp_path, project="proj_a")
        b = generate(tmp_path, project="proj_b")
        assert Path(a.archive_path).read_bytes() == \
            Path(b.archive_path).read_bytes()


def layout_reply(n):
    if n == 2:
        panels = [{"id": "p0", "x": 0.5, "y": 0, "w": 0.5, "h": 1},
                  {"id": "p1", "x": 0, "y": 0, "w": 0.5, "h": 1}]
    else:
        raise AssertionError("fixture only scripts 2-panel pages")
    return json.dumps({"page_index": 0, "panels": panels})


def layout_calls(gw):
    return [m for m in gw.chat_calls
            if "Design a manga page layout" in m[-1]["content"]]


class TestLayoutSources:
    def test_agent_called_once_per_page(self, tmp_path):
        gw = FakeGateway(chat_replies=[layout_reply(2), layout_reply(2)])
        generate(tmp_path, gateway=gw)
        assert len(layout_calls(gw)) == 2

    def test_user_layout_drops_one_agent_call(self, tmp_path):
        layout_dir = tmp_path / "user_layouts"
        layout_dir.mkdir()
        user = Layout.from_json(layout_reply(2))
        (layout_dir / "page_000.json").write_text(user.to_json())

        gw = FakeGateway(chat_replies=[layout_reply(2), layout_reply(2)])
        generate(tmp_path, gateway=gw, layout_dir=str(layout_dir))
        assert len(layout_calls(gw)) == 1

    def test_user_layout_ids_renamed_to_plan(self, tmp_path):
        layout_dir = tmp_path / "user_layouts"
        layout_dir.mkdir()
        (layout_dir / "page_000.json").write_text(layout_reply(2))
        generate(tmp_path, layout_dir=str(layout_dir))
        saved = Layout.from_json(
            (tmp_path / "proj" / "layouts" / "page_000.json").read_text())
        assert [p.panel_id for p in saved.panels] == ["pg0_0", "pg0_1"]

    def test_template_library_skips_agent(self, tmp_path):
        from mangaflow.layouts import default_library
        gw = FakeGateway()
        generate(tmp_path, gateway=gw, template_library=default_library())
        assert layout_calls(gw) == []


class TestEditPropagation:
    def test_hand_edited_panel_survives_and_propagates(self, tmp_path):
        generate(tmp_path)
        project = tmp_path / "proj"
        panel = project / "panels" / "page_000" / "pg0_0.png"
        img = Image.open(panel)
        for dx in range(12):
            for dy in range(12):
                img.putpixel((60 + dx, 60 + dy), (255, 0, 0))
        img.save(panel)
        edited = panel.read_bytes()
        page_before = (project / "pages" / "page_000.png").read_bytes()

        generate(tmp_path)
        assert panel.read_bytes() == edited
        assert (project / "pages" / "page_000.png").read_bytes() != page_before

    def test_hand_edited_layout_is_adopted(self, tmp_path):
        generate(tmp_path)
        project = tmp_path / "proj"
        path = project / "layouts" / "page_000.json"
        rows = Layout.from_dict({
            "page_index": 0,
            "panels": [{"id": "pg0_0", "x": 0, "y": 0, "w": 1, "h": 0.5},
                       {"id": "pg0_1", "x": 0, "y": 0.5, "w": 1, "h": 0.5}]})
        path.write_text(rows.to_json())

        comic = generate(tmp_path)
        placements = dict(comic.pages[0].panel_placements)
        x, y, w, h = placements["pg0_1"]
        assert y > 0 and w > h  # bottom row, wide

    def test_rerender_salt_changes_one_panel_only(self, tmp_path):
        generate(tmp_path)
        state = ProjectState.open(str(tmp_path / "proj"))
        before = {pid: a.prompt_digest
                  for pid, a in state.load_assets(0).items()}
        state.bump_salt(0, "pg0_0")

        generate(tmp_path)
        state = ProjectState.open(str(tmp_path / "proj"))
        after = {pid: a.prompt_digest
                 for pid, a in state.load_assets(0).items()}
        assert after["pg0_0"] != before["pg0_0"]
        assert after["pg0_1"] == before["pg0_1"]


class TestDegradation:
    def test_render_failure_substitutes_stub(self, tmp_path):
        gw = FakeGateway()  # every image call raises GatewayError
        comic = generate(tmp_path, gateway=gw,
                         backend=GatewayBackend(gw, model_id="m"))
        assert len(comic.pages) == 2
        state = ProjectState.open(str(tmp_path / "proj"))
        assert state.degraded_panels(0) == ["pg0_0", "pg0_1"]
        warnings = [e for e in state.events_after(0)
                    if e["kind"] == "warning" and "stub" in e["message"]]
        assert warnings

    def test_cassette_miss_halts_render_stage(self, tmp_path):
        gw = FakeGateway(image_replies=[CassetteMissError("k1")])
        with pytest.raises(StageError) as err:
            generate(tmp_path, gateway=gw,
                     backend=GatewayBackend(gw, model_id="m"))
        assert err.value.stage == "render:0"
        assert isinstance(err.value.cause, CassetteMissError)

    def test_partial_state_survives_halt(self, tmp_path):
        gw = FakeGateway(image_replies=[CassetteMissError("k1")])
        try:
            generate(tmp_path, gateway=gw,
                     backend=GatewayBackend(gw, model_id="m"))
        except StageError:
            pass
        project = tmp_path / "proj"
        assert (project / "plan.json").exists()
        assert (project / "layouts" / "page_000.json").exists()

    def test_memory_chat_failure_propagates_as_stage_error(self, tmp_path):
        config_path, plan_path, _ = write_inputs(tmp_path)
        gw = FakeGateway()  # no refs supplied, so memory must generate
        with pytest.raises(StageError) as err:
            run_generate(config_path, str(tmp_path / "proj"),
                         plan_path=plan_path, gateway=gw)
        assert err.value.stage == "memory"
        assert isinstance(err.value.cause, GatewayError)


class TestStagePreconditions:
    def test_compose_before_render_names_stage(self, tmp_path):
        config_path, plan_path, refs_path = write_inputs(tmp_path)
        state = ProjectState(
            str(tmp_path / "proj"),
            ProjectConfig.from_dict(
                json.loads(Path(config_path).read_text())))
        pipe = Pipeline(state, user_refs=load_user_refs(refs_path))
        plan = pipe.run_plan(plan_path=plan_path)
        pipe.run_layout(plan)
        with pytest.raises(StageError) as err:
            pipe.run_compose(page_index=0)
        assert err.value.stage == "compose:0"
        assert "render" in str(err.value)

    def test_plan_needs_exactly_one_source(self, tmp_path):
        config_path, plan_path, refs_path = write_inputs(tmp_path)
        state = ProjectState(
            str(tmp_path / "proj"),
            ProjectConfig.from_dict(
                json.loads(Path(config_path).read_text())))
        pipe = Pipeline(state)
        with pytest.raises(ValidationError):
            pipe.run_plan()
        with pytest.raises(ValidationError):
            pipe.run_plan(prompt="x", plan_path=plan_path)

    def test_open_missing_project_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            ProjectState.open(str(tmp_path / "nope"))


class TestEvents:
    def test_sequence_strictly_increasing_across_runs(self, tmp_path):
        generate(tmp_path)
        generate(tmp_path)
        events = ProjectState.open(str(tmp_path / "proj")).events_after(0)
        seqs = [e["seq"] for e in events]
        assert seqs == sorted(seqs)
        assert len(set(seqs)) == len(seqs)

    def test_events_after_cursor(self, tmp_path):
        generate(tmp_path)
        state = ProjectState.open(str(tmp_path / "proj"))
        all_events = state.events_after(0)
        later = state.events_after(all_events[2]["seq"])
        assert later == all_events[3:]


class TestUserInputs:
    def test_missing_refs_path_empty(self):
        assert load_user_refs(None).assets == ()

    def test_ref_entry_missing_field_rejected(self, tmp_path):
        path = tmp_path / "refs.json"
        path.write_text(json.dumps({"refs": [{"name": "Aya"}]}))
        with pytest.raises(ValidationError):
            load_user_refs(str(path))

    def test_ref_image_resolved_relative_to_manifest(self, tmp_path):
        sub = tmp_path / "deep"
        sub.mkdir()
        Image.new("RGB", (8, 8)).save(sub / "a.png")
        path = sub / "refs.json"
        path.write_text(json.dumps(
            {"refs": [{"name": "Aya", "description": "d", "image": "a.png"}]}))
        refs = load_user_refs(str(path))
        assert refs.get("Aya").image_path == str(sub / "a.png")

    def test_layout_dir_indexed_by_filename(self, tmp_path):
        d = tmp_path / "layouts"
        d.mkdir()
        (d / "page_003.json").write_text(layout_reply(2))
        loaded = load_user_layouts(str(d))
        assert list(loaded) == [3]
        assert loaded[3].source == "user"
