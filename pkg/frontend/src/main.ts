// Browser wiring. Everything stateful lives in the store and the two
// editors; this file just moves pointer events in and pixels out.

import { StudioApi } from "./api.js";
import type { BubbleKind, EventRecord, LetterElement } from "./api.js";
import { BUBBLE_KINDS } from "./api.js";
import { BubbleEditor } from "./bubbleEditor.js";
import { EventFeed } from "./events.js";
import { GRID } from "./geometry.js";
import type { LayoutDoc, PanelDoc } from "./api.js";
import type { RectShape } from "./geometry.js";
import { LayoutEditor } from "./layoutEditor.js";
import { ProjectStore } from "./state.js";

type Mode = "layout" | "bubbles";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

const api = new StudioApi("");
const store = new ProjectStore();

let page = 0;
let mode: Mode = "layout";
let layoutEditor: LayoutEditor | null = null;
let bubbleEditor: BubbleEditor | null = null;
let pageImage: HTMLImageElement | null = null;
let selectedBubble = -1;

const canvas = $("page-canvas") as unknown as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;

function banner(message: string | null): void {
  const el = $("invariant");
  el.textContent = message ?? "";
  el.style.display = message ? "block" : "none";
}

function toast(message: string): void {
  const el = $("toast");
  el.textContent = message;
  el.style.display = "block";
  setTimeout(() => {
    el.style.display = "none";
  }, 4000);
}

function pointFromEvent(ev: PointerEvent): [number, number] {
  const box = canvas.getBoundingClientRect();
  return [(ev.clientX - box.left) / box.width,
          (ev.clientY - box.top) / box.height];
}

// -- drawing ----------------------------------------------------------------

function drawGrid(): void {
  ctx.save();
  ctx.strokeStyle = "rgba(120,160,255,0.15)";
  ctx.lineWidth = 1;
  for (let k = 1; k < GRID; k++) {
    const x = (k / GRID) * canvas.width;
    const y = (k / GRID) * canvas.height;
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, canvas.height);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(0, y);
    ctx.lineTo(canvas.width, y);
    ctx.stroke();
  }
  ctx.restore();
}

function strokeRect(r: RectShape, style: string, width: number): void {
  ctx.save();
  ctx.strokeStyle = style;
  ctx.lineWidth = width;
  ctx.strokeRect(r.x * canvas.width, r.y * canvas.height,
                 r.w * canvas.width, r.h * canvas.height);
  ctx.restore();
}

function drawBase(): void {
  ctx.fillStyle = "#1b1b1f";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (pageImage && pageImage.complete && pageImage.naturalWidth > 0) {
    ctx.drawImage(pageImage, 0, 0, canvas.width, canvas.height);
  }
}

function drawLayout(layout: LayoutDoc, ghost: RectShape | null): void {
  drawBase();
  if (ghost) drawGrid();
  layout.panels.forEach((p: PanelDoc) => {
    strokeRect(p, "#3d7bfd", 2);
    ctx.fillStyle = "#3d7bfd";
    ctx.font = "12px sans-serif";
    ctx.fillText(p.id, p.x * canvas.width + 4, p.y * canvas.height + 14);
  });
  if (ghost) strokeRect(ghost, "#ffb347", 2);
}

function drawBubbles(elements: LetterElement[]): void {
  drawBase();
  elements.forEach((el, i) => {
    const color = i === selectedBubble ? "#ffb347"
      : el.overflow ? "#ff5566" : "#44cc88";
    strokeRect(el.bubble, color, 2);
  });
}

// -- side panel -------------------------------------------------------------

function renderPageList(): void {
  const holder = $("pages");
  holder.innerHTML = "";
  const view = store.project;
  if (!view) return;
  view.pages.forEach(p => {
    const b = document.createElement("button");
    const stale = store.stale(p.index);
    b.textContent = `page ${p.index + 1}` +
      (stale.length ? ` (stale: ${stale.join(", ")})` : "");
    b.className = p.index === page ? "page current" : "page";
    b.onclick = () => void selectPage(p.index);
    holder.appendChild(b);
  });
}

function renderBubbleList(): void {
  const holder = $("bubbles");
  holder.innerHTML = "";
  if (!bubbleEditor) return;
  bubbleEditor.elements.forEach((el, i) => {
    const row = document.createElement("div");
    row.className = i === selectedBubble ? "bubble current" : "bubble";

    const kind = document.createElement("select");
    BUBBLE_KINDS.forEach(k => {
      const opt = document.createElement("option");
      opt.value = k;
      opt.textContent = k;
      opt.selected = k === el.kind;
      kind.appendChild(opt);
    });
    kind.onchange = () =>
      bubbleEditor?.setKind(i, kind.value as BubbleKind);

    const text = document.createElement("textarea");
    text.value = el.text;
    text.rows = 2;
    text.oninput = () => bubbleEditor?.setText(i, text.value);

    const tag = document.createElement("span");
    tag.className = "tag";
    tag.textContent = (el.speaker ?? "caption") +
      (el.overflow ? " OVERFLOW" : "");

    row.onclick = () => {
      selectedBubble = i;
      redraw();
    };
    row.append(tag, kind, text);
    holder.appendChild(row);
  });
}

function renderPanelControls(): void {
  const holder = $("panels");
  holder.innerHTML = "";
  const layout = store.layout(page);
  if (!layout) return;
  layout.panels.forEach(p => {
    const b = document.createElement("button");
    b.textContent = `rerender ${p.id}`;
    b.onclick = () => {
      b.disabled = true;
      api.rerenderPanel(page, p.id)
        .then(got => toast(`rerendered ${p.id} (${got.prompt_digest.slice(0, 10)})`))
        .catch(err => toast(String(err)))
        .finally(() => {
          b.disabled = false;
        });
    };
    holder.appendChild(b);
  });
}

function redraw(): void {
  if (mode === "layout") {
    const layout = store.layout(page);
    if (layout) drawLayout(layout, null);
  } else if (bubbleEditor) {
    drawBubbles(bubbleEditor.elements);
  }
  renderPageList();
  renderBubbleList();
}

// -- image loading ----------------------------------------------------------

function refreshImage(url: string): void {
  const img = new Image();
  img.onload = () => {
    pageImage = img;
    redraw();
  };
  img.src = url;
}

function currentImageUrl(): string {
  const summary = store.page(page);
  const kind = summary?.has_lettered ? "lettered" : "auto";
  return api.imageUrl(page, store.version(page), kind);
}

// -- page selection ---------------------------------------------------------

async function selectPage(i: number): Promise<void> {
  page = i;
  selectedBubble = -1;
  const view = store.project;
  const config = view?.config;
  layoutEditor = new LayoutEditor(api, store, i, {
    render: (layout, ghost) => {
      if (mode === "layout") drawLayout(layout, ghost);
      renderPageList();
      renderPanelControls();
    },
    invariant: banner,
  });
  bubbleEditor = config ? new BubbleEditor(api, store, i, {
    page_px: config.page_px,
    font_px: config.font_px,
    min_font_px: config.min_font_px,
  }, {
    render: () => {
      if (mode === "bubbles") drawBubbles(bubbleEditor?.elements ?? []);
      renderBubbleList();
    },
    refreshImage,
    warnings: indices => {
      $("warnings").textContent = indices.length
        ? `overflow: bubbles ${indices.join(", ")}` : "";
    },
    invariant: banner,
  }) : null;

  await layoutEditor.load().catch(() => banner(`page ${i} has no layout yet`));
  if (bubbleEditor) {
    await bubbleEditor.load().catch(() => {
      // not lettered yet; bubble mode stays empty
    });
  }
  refreshImage(currentImageUrl());
  redraw();
}

// -- pointer plumbing -------------------------------------------------------

function wirePointer(): void {
  canvas.addEventListener("pointerdown", ev => {
    const [x, y] = pointFromEvent(ev);
    if (mode === "layout") {
      if (layoutEditor?.beginDrag(x, y)) canvas.setPointerCapture(ev.pointerId);
    } else if (bubbleEditor) {
      const idx = bubbleEditor.bubbleAt(x, y);
      selectedBubble = idx;
      if (idx >= 0 && bubbleEditor.beginDrag(idx, x, y)) {
        canvas.setPointerCapture(ev.pointerId);
      }
      redraw();
    }
  });
  canvas.addEventListener("pointermove", ev => {
    const [x, y] = pointFromEvent(ev);
    if (mode === "layout") layoutEditor?.dragTo(x, y);
    else bubbleEditor?.dragTo(x, y);
  });
  canvas.addEventListener("pointerup", () => {
    if (mode === "layout") {
      void layoutEditor?.commitDrag();
    } else {
      bubbleEditor?.endDrag();
    }
  });
}

// -- events from the service ------------------------------------------------

function onServiceEvent(event: EventRecord): void {
  if (typeof event.page === "number" && event.page === page) {
    if (event.kind === "rerender" || event.kind === "recompose") {
      refreshImage(currentImageUrl());
      void bubbleEditor?.load().catch(() => undefined);
    }
  }
  void api.getProject().then(view => {
    store.adoptProject(view);
    renderPageList();
  });
}

// -- boot -------------------------------------------------------------------

async function init(): Promise<void> {
  const view = await api.getProject();
  store.adoptProject(view);
  canvas.width = view.config.page_px[0];
  canvas.height = view.config.page_px[1];

  $("mode-layout").onclick = () => {
    mode = "layout";
    redraw();
  };
  $("mode-bubbles").onclick = () => {
    mode = "bubbles";
    redraw();
  };
  $("save-bubbles").onclick = () => void bubbleEditor?.save();
  $("undo").onclick = () => void layoutEditor?.undo();
  $("recompose").onclick = () =>
    void api.recompose(page).then(() => refreshImage(currentImageUrl()));

  wirePointer();
  const feed = new EventFeed(api, onServiceEvent);
  feed.start(view.event_seq);
  await selectPage(0);
}

document.addEventListener("DOMContentLoaded", () => {
  void init().catch(err => banner(String(err)));
});
