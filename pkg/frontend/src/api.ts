// Typed client for the project service. Every mutation the UI makes
// goes through this module; nothing touches project files directly.

export interface PanelDoc {
  id: string;
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface LayoutDoc {
  page_index: number;
  panels: PanelDoc[];
}

export interface PageFlags {
  layout: boolean;
  render: boolean;
  compose: boolean;
  letter: boolean;
}

export interface PageSummary {
  index: number;
  version: number;
  flags: PageFlags;
  has_image: boolean;
  has_lettered: boolean;
  degraded_panels: string[];
}

export interface ProjectConfigView {
  page_count: number;
  page_px: [number, number];
  font_px: number;
  min_font_px: number;
  [key: string]: unknown;
}

export interface ProjectView {
  config: ProjectConfigView;
  page_count: number;
  plan_available: boolean;
  book: { available: boolean; pinned: boolean };
  pages: PageSummary[];
  event_seq: number;
}

export type BubbleKind = "speech" | "narration" | "thought" | "shout";
export const BUBBLE_KINDS: BubbleKind[] =
  ["speech", "narration", "thought", "shout"];

export interface LetterElement {
  kind: BubbleKind;
  text: string;
  speaker: string | null;
  bubble: { x: number; y: number; w: number; h: number };
  tail_to: [number, number] | null;
  panel_id: string;
  order_index: number;
  font_px: number;
  overflow: boolean;
  rtl_violation: boolean;
}

export interface LettersDoc {
  schema_version: number;
  anchors_degraded: boolean;
  overflow_indices: number[];
  rtl_violation_indices: number[];
  elements: LetterElement[];
  version: number;
}

export interface LettersSaved {
  elements: number;
  overflow_indices: number[];
  version: number;
}

export interface EventRecord {
  seq: number;
  kind: string;
  [key: string]: unknown;
}

export interface EventBatch {
  events: EventRecord[];
  next: number;
}

/** Non-2xx response, with the server's detail payload attached. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: unknown;

  constructor(status: number, detail: unknown) {
    super(`service returned ${status}`);
    this.status = status;
    this.detail = detail;
  }

  /** Violated-invariant text from a 422, if the shape matches. */
  invariant(): string | null {
    const d = this.detail;
    if (d && typeof d === "object" && "invariant" in d) {
      return String((d as { invariant: unknown }).invariant);
    }
    return null;
  }
}

export type FetchLike =
  (input: string, init?: RequestInit) => Promise<Response>;

export class StudioApi {
  readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(base = "", fetchFn?: FetchLike) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async req<T>(method: string, path: string,
                       body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(`${this.base}/v1${path}`, init);
    const text = await resp.text();
    let parsed: unknown = null;
    if (text) {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = text;
      }
    }
    if (!resp.ok) {
      const detail = parsed && typeof parsed === "object" &&
        "detail" in parsed ? (parsed as { detail: unknown }).detail : parsed;
      throw new ApiError(resp.status, detail);
    }
    return parsed as T;
  }

  getProject(): Promise<ProjectView> {
    return this.req("GET", "/project");
  }

  getLayout(page: number): Promise<{ layout: LayoutDoc; version: number }> {
    return this.req("GET", `/pages/${page}/layout`);
  }

  putLayout(page: number,
            layout: LayoutDoc): Promise<{ layout: LayoutDoc;
                                          version: number }> {
    return this.req("PUT", `/pages/${page}/layout`, { layout });
  }

  getLetters(page: number): Promise<LettersDoc> {
    return this.req("GET", `/pages/${page}/letters`);
  }

  putLetters(page: number,
             elements: LetterElement[]): Promise<LettersSaved> {
    return this.req("PUT", `/pages/${page}/letters`, { elements });
  }

  rerenderPanel(page: number, panelId: string):
      Promise<{ panel_id: string; prompt_digest: string; version: number }> {
    return this.req(
      "POST", `/pages/${page}/panels/${encodeURIComponent(panelId)}/rerender`);
  }

  recompose(page: number):
      Promise<{ page_index: number; version: number; image: string }> {
    return this.req("POST", `/pages/${page}/recompose`);
  }

  pollEvents(after: number, timeout = 25): Promise<EventBatch> {
    return this.req("GET", `/events?after=${after}&timeout=${timeout}`);
  }

  /** Image URL with the page version folded in as a cache buster. */
  imageUrl(page: number, version: number,
           kind: "auto" | "raw" | "lettered" = "auto"): string {
    return `${this.base}/v1/pages/${page}/image?kind=${kind}&v=${version}`;
  }
}
