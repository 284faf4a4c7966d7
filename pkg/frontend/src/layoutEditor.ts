// Panel-rectangle editing for one page.
//
// The drag is optimistic only on screen: the ghost rect follows the
// pointer, but the layout of record changes exclusively through
// PUT /layout. The server projects every proposal, so what gets drawn
// after the drop is the projected layout it returned, never the raw
// drag. A rejected proposal leaves the last adopted layout in place
// and surfaces the violated invariant.

import type { LayoutDoc, StudioApi } from "./api.js";
import { ApiError } from "./api.js";
import type { Handle, RectShape } from "./geometry.js";
import { applyDrag, hitHandle } from "./geometry.js";
import type { ProjectStore } from "./state.js";

export interface LayoutEditorHooks {
  /** Redraw. `ghost` is the in-flight drag rect, null outside drags. */
  render(layout: LayoutDoc, ghost: RectShape | null): void;
  /** Violated-invariant banner; null clears it. */
  invariant(message: string | null): void;
}

interface DragState {
  panel: number;
  handle: Handle;
  start: RectShape;
  fromX: number;
  fromY: number;
  ghost: RectShape;
}

export const GRAB_TOL = 0.02;

export class LayoutEditor {
  readonly page: number;
  private readonly api: StudioApi;
  private readonly store: ProjectStore;
  private readonly hooks: LayoutEditorHooks;
  private drag: DragState | null = null;
  private history: LayoutDoc[] = [];

  constructor(api: StudioApi, store: ProjectStore, page: number,
              hooks: LayoutEditorHooks) {
    this.api = api;
    this.store = store;
    this.page = page;
    this.hooks = hooks;
  }

  get layout(): LayoutDoc | null {
    return this.store.layout(this.page);
  }

  get canUndo(): boolean {
    return this.history.length > 0;
  }

  async load(): Promise<void> {
    const got = await this.api.getLayout(this.page);
    this.store.adoptLayout(this.page, got.layout, got.version);
    this.hooks.render(got.layout, null);
  }

  /** Pointer down in page fractions. True when a drag began. */
  beginDrag(x: number, y: number, tol = GRAB_TOL): boolean {
    const layout = this.layout;
    if (!layout || this.drag) return false;
    // walk topmost-first so "move" on a small panel wins over a big one
    for (let i = layout.panels.length - 1; i >= 0; i--) {
      const p = layout.panels[i]!;
      const rect: RectShape = { x: p.x, y: p.y, w: p.w, h: p.h };
      const handle = hitHandle(rect, x, y, tol);
      if (handle) {
        this.drag = { panel: i, handle, start: rect,
                      fromX: x, fromY: y, ghost: rect };
        return true;
      }
    }
    return false;
  }

  dragTo(x: number, y: number): void {
    const d = this.drag;
    const layout = this.layout;
    if (!d || !layout) return;
    d.ghost = applyDrag(d.start, d.handle, x - d.fromX, y - d.fromY);
    this.hooks.render(layout, d.ghost);
  }

  cancelDrag(): void {
    const layout = this.layout;
    this.drag = null;
    if (layout) this.hooks.render(layout, null);
  }

  /** Pointer up: propose the dragged layout to the server. */
  async commitDrag(): Promise<boolean> {
    const d = this.drag;
    const layout = this.layout;
    this.drag = null;
    if (!d || !layout) return false;
    const panels = layout.panels.map((p, i) =>
      i === d.panel ? { ...p, ...d.ghost } : p);
    return this.propose({ page_index: this.page, panels }, layout);
  }

  /** Re-PUT the previous adopted layout. */
  async undo(): Promise<boolean> {
    const previous = this.history.pop();
    const layout = this.layout;
    if (!previous || !layout) return false;
    return this.propose(previous, layout, { remember: false });
  }

  private async propose(proposal: LayoutDoc, current: LayoutDoc,
                        opts: { remember?: boolean } = {}): Promise<boolean> {
    try {
      const got = await this.api.putLayout(this.page, proposal);
      if (opts.remember !== false) this.history.push(current);
      this.store.adoptLayout(this.page, got.layout, got.version);
      this.store.noteLayoutEdited(this.page, got.version);
      this.hooks.invariant(null);
      this.hooks.render(got.layout, null);
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.hooks.invariant(err.invariant() ?? `rejected: ${err.message}`);
        this.hooks.render(current, null);
        return false;
      }
      throw err;
    }
  }
}
