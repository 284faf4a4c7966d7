import { beforeEach, describe, expect, it } from "vitest";

import type { ProjectView } from "../src/api.js";
import { StudioApi } from "../src/api.js";
import { ProjectStore } from "../src/state.js";
import { makeFake, twoPanelLayout } from "./fakeService.js";

let store: ProjectStore;
let view: ProjectView;

beforeEach(async () => {
  const api = new StudioApi("", makeFake().fetch);
  view = await api.getProject();
  store = new ProjectStore();
  store.adoptProject(view);
});

describe("version counters", () => {
  it("start from the project snapshot", () => {
    expect(store.version(0)).toBe(1);
    expect(store.version(1)).toBe(1);
    expect(store.version(99)).toBe(0);
  });

  it("a stale layout response is dropped", () => {
    const layout = twoPanelLayout(0);
    expect(store.adoptLayout(0, layout, 3)).toBe(true);
    expect(store.version(0)).toBe(3);

    const older = {
      ...layout,
      panels: layout.panels.map(p => ({ ...p, w: 0.25 })),
    };
    expect(store.adoptLayout(0, older, 2)).toBe(false);
    expect(store.layout(0)!.panels[0]!.w).toBe(0.5);
    expect(store.version(0)).toBe(3);
  });

  it("never run backwards when a project poll races a write", () => {
    store.bumpPage(0, 7);
    const rePolled: ProjectView = {
      ...view,
      pages: view.pages.map(p => ({ ...p })),
    };
    store.adoptProject(rePolled);
    expect(store.version(0)).toBe(7);
    // the other page takes the fresh row
    expect(store.version(1)).toBe(1);
  });
});

describe("staleness badges", () => {
  it("a layout edit marks compose and letter stale", () => {
    expect(store.stale(0)).toEqual([]);
    store.noteLayoutEdited(0, 2);
    expect(store.stale(0)).toEqual(["compose", "letter"]);
    expect(store.version(0)).toBe(2);
  });

  it("a letters save clears the letter badge", () => {
    store.noteLayoutEdited(0, 2);
    store.noteLettersSaved(0, 3);
    expect(store.stale(0)).toEqual(["compose"]);
    expect(store.version(0)).toBe(3);
  });

  it("an unlettered page never shows a letter badge", () => {
    store.noteLayoutEdited(1, 2);
    expect(store.stale(1)).toEqual(["compose"]);
  });
});

describe("change notification", () => {
  it("fires on adoption and supports unsubscribe", () => {
    let calls = 0;
    const off = store.onChange(() => {
      calls += 1;
    });
    store.adoptLayout(0, twoPanelLayout(0), 2);
    const seen = calls;
    expect(seen).toBeGreaterThan(0);
    off();
    store.bumpPage(0, 5);
    expect(calls).toBe(seen);
  });
});
