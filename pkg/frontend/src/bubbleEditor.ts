// Bubble editing for one lettered page. Geometry, text, and kind are
// edited on a local draft; save PUTs the whole element list, the
// server re-rasterizes, and the editor re-reads the sidecar plus the
// refreshed page image. Overflow is estimated locally with the same
// shrink-to-minimum rule the letterer uses, so the badge appears while
// typing, before any round trip.

import type { BubbleKind, LetterElement, StudioApi } from "./api.js";
import { ApiError } from "./api.js";
import type { Handle, RectShape } from "./geometry.js";
import { applyDrag, clamp, hitHandle } from "./geometry.js";
import type { ProjectStore } from "./state.js";

export interface LetterConfig {
  page_px: [number, number];
  font_px: number;
  min_font_px: number;
}

export interface BubbleEditorHooks {
  render(elements: LetterElement[], dirty: boolean): void;
  /** Called with a cache-busted URL after the server re-rasterized. */
  refreshImage(url: string): void;
  warnings(overflowIndices: number[]): void;
  invariant(message: string | null): void;
}

const WRAP_CHARS = 16;
const LINE_FACTOR = 1.3;
const PAD_EM = 0.6;
// mean advance of the shipped face is just under 0.6 em
const ADVANCE_EM = 0.6;
const ELLIPSE_FACTOR = Math.SQRT2;
const SHOUT_FACTOR = 1.35;

export function wrapText(text: string, width = WRAP_CHARS): string[] {
  const words = text.split(/\s+/).filter(Boolean);
  const lines: string[] = [];
  let line = "";
  for (let word of words) {
    while (word.length > width) {
      if (line) {
        lines.push(line);
        line = "";
      }
      lines.push(word.slice(0, width));
      word = word.slice(width);
    }
    if (!line) line = word;
    else if (line.length + 1 + word.length <= width) line += " " + word;
    else {
      lines.push(line);
      line = word;
    }
  }
  if (line) lines.push(line);
  return lines.length ? lines : [""];
}

function bubbleDimsPx(kind: BubbleKind, text: string,
                      size: number): [number, number] {
  const lines = wrapText(text);
  const longest = Math.max(...lines.map(l => l.length));
  let w = Math.max(longest * ADVANCE_EM * size, size);
  let h = Math.floor(size * LINE_FACTOR) * lines.length;
  const pad = 2 * Math.floor(PAD_EM * size);
  w += pad;
  h += pad;
  if (kind === "speech" || kind === "thought") {
    return [w * ELLIPSE_FACTOR, h * ELLIPSE_FACTOR];
  }
  if (kind === "shout") return [w * SHOUT_FACTOR, h * SHOUT_FACTOR];
  return [w, h];
}

// the sidecar carries derived px fields; edits must not echo them back
function canonicalElement(e: LetterElement): LetterElement {
  return {
    kind: e.kind, text: e.text, speaker: e.speaker,
    bubble: { ...e.bubble },
    tail_to: e.tail_to ? [e.tail_to[0], e.tail_to[1]] : null,
    panel_id: e.panel_id, order_index: e.order_index,
    font_px: e.font_px, overflow: e.overflow,
    rtl_violation: e.rtl_violation,
  };
}

/** Shrink from font_px toward min_font_px; true when it still spills. */
export function estimateOverflow(el: LetterElement,
                                 config: LetterConfig): boolean {
  const [W, H] = config.page_px;
  let size = Math.min(el.font_px, config.font_px);
  for (;;) {
    const [bw, bh] = bubbleDimsPx(el.kind, el.text, size);
    const fits = bw <= el.bubble.w * W && bh <= el.bubble.h * H;
    if (fits || size <= config.min_font_px) return !fits;
    size = Math.max(config.min_font_px, size - 2);
  }
}

export class BubbleEditor {
  readonly page: number;
  elements: LetterElement[] = [];
  dirty = false;
  private readonly api: StudioApi;
  private readonly store: ProjectStore;
  private readonly hooks: BubbleEditorHooks;
  private readonly config: LetterConfig;
  private drag: { index: number; handle: Handle; start: RectShape;
                  fromX: number; fromY: number } | null = null;

  constructor(api: StudioApi, store: ProjectStore, page: number,
              config: LetterConfig, hooks: BubbleEditorHooks) {
    this.api = api;
    this.store = store;
    this.page = page;
    this.config = config;
    this.hooks = hooks;
  }

  async load(): Promise<void> {
    const doc = await this.api.getLetters(this.page);
    this.store.adoptLetters(this.page, doc);
    this.elements = doc.elements.map(canonicalElement);
    this.dirty = false;
    this.hooks.render(this.elements, false);
    this.hooks.warnings(doc.overflow_indices);
  }

  bubbleAt(x: number, y: number, tol = 0.015): number {
    for (let i = this.elements.length - 1; i >= 0; i--) {
      if (hitHandle(this.elements[i]!.bubble, x, y, tol)) return i;
    }
    return -1;
  }

  beginDrag(index: number, x: number, y: number, tol = 0.015): boolean {
    const el = this.elements[index];
    if (!el || this.drag) return false;
    const handle = hitHandle(el.bubble, x, y, tol);
    if (!handle) return false;
    // bubbles move freely, only edges and the corner grip resize
    this.drag = { index, handle, start: { ...el.bubble },
                  fromX: x, fromY: y };
    return true;
  }

  dragTo(x: number, y: number): void {
    const d = this.drag;
    if (!d) return;
    const next = applyDrag(d.start, d.handle, x - d.fromX, y - d.fromY,
                           { grid: false, minSide: 0.01 });
    this.setBubble(d.index, next);
  }

  endDrag(): void {
    this.drag = null;
  }

  setBubble(index: number, bubble: RectShape): void {
    this.mutate(index, el => {
      el.bubble = {
        x: clamp(bubble.x, 0, 1 - bubble.w),
        y: clamp(bubble.y, 0, 1 - bubble.h),
        w: Math.min(bubble.w, 1),
        h: Math.min(bubble.h, 1),
      };
    });
  }

  setText(index: number, text: string): void {
    this.mutate(index, el => {
      el.text = text;
    });
  }

  setKind(index: number, kind: BubbleKind): void {
    this.mutate(index, el => {
      el.kind = kind;
      // only speech and shout carry a tail
      if (kind === "narration" || kind === "thought") el.tail_to = null;
    });
  }

  overflowIndices(): number[] {
    return this.elements.filter(e => e.overflow).map(e => e.order_index);
  }

  /** PUT the draft, then re-read sidecar and image from the server. */
  async save(): Promise<boolean> {
    try {
      const saved = await this.api.putLetters(this.page, this.elements);
      this.store.noteLettersSaved(this.page, saved.version);
      const doc = await this.api.getLetters(this.page);
      this.store.adoptLetters(this.page, doc);
      this.elements = doc.elements.map(canonicalElement);
      this.dirty = false;
      this.hooks.invariant(null);
      this.hooks.render(this.elements, false);
      this.hooks.warnings(saved.overflow_indices);
      this.hooks.refreshImage(
        this.api.imageUrl(this.page, saved.version, "lettered"));
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.hooks.invariant(err.invariant() ?? `rejected: ${err.message}`);
        return false;
      }
      throw err;
    }
  }

  private mutate(index: number,
                 fn: (el: LetterElement) => void): void {
    const el = this.elements[index];
    if (!el) return;
    fn(el);
    el.overflow = estimateOverflow(el, this.config);
    this.dirty = true;
    this.hooks.render(this.elements, true);
    this.hooks.warnings(this.overflowIndices());
  }
}
