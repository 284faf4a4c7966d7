// Mirrored project state. The store only ever adopts what the service
// said, keyed by its per-page version counter; local edits live in the
// editors until a round trip confirms them. Version counters are
// monotone, so a response that lost the write race is dropped instead
// of rolling the view back.

import type { LayoutDoc, LettersDoc, PageSummary, ProjectView } from "./api.js";

export type StoreListener = () => void;

export class ProjectStore {
  project: ProjectView | null = null;
  private layouts = new Map<number, LayoutDoc>();
  private letters = new Map<number, LettersDoc>();
  private listeners: StoreListener[] = [];

  onChange(fn: StoreListener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter(l => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  page(i: number): PageSummary | null {
    return this.project?.pages.find(p => p.index === i) ?? null;
  }

  version(i: number): number {
    return this.page(i)?.version ?? 0;
  }

  layout(i: number): LayoutDoc | null {
    return this.layouts.get(i) ?? null;
  }

  lettersFor(i: number): LettersDoc | null {
    return this.letters.get(i) ?? null;
  }

  adoptProject(view: ProjectView): void {
    if (this.project) {
      // a poll can race a fresh write; keep the newer page rows
      const known = new Map(this.project.pages.map(p => [p.index, p]));
      view = {
        ...view,
        pages: view.pages.map(p => {
          const old = known.get(p.index);
          return old && old.version > p.version ? old : p;
        }),
      };
    }
    this.project = view;
    this.emit();
  }

  /** Take a layout response. Returns false when it arrived stale. */
  adoptLayout(i: number, layout: LayoutDoc, version: number): boolean {
    if (version < this.version(i)) return false;
    this.layouts.set(i, layout);
    this.bumpPage(i, version);
    return true;
  }

  adoptLetters(i: number, doc: LettersDoc): boolean {
    if (doc.version < this.version(i)) return false;
    this.letters.set(i, doc);
    this.bumpPage(i, doc.version);
    return true;
  }

  /** A layout write invalidates compose and letter until a re-run. */
  noteLayoutEdited(i: number, version: number): void {
    this.patchPage(i, p => ({
      ...p,
      version: Math.max(p.version, version),
      flags: { ...p.flags, compose: false, letter: false },
    }));
  }

  noteLettersSaved(i: number, version: number): void {
    this.patchPage(i, p => ({
      ...p,
      version: Math.max(p.version, version),
      flags: { ...p.flags, letter: true },
      has_lettered: true,
    }));
  }

  bumpPage(i: number, version: number): void {
    this.patchPage(i, p => ({
      ...p, version: Math.max(p.version, version),
    }));
  }

  /** Stage names whose artifacts lag behind the last edit. */
  stale(i: number): string[] {
    const p = this.page(i);
    if (!p) return [];
    const out: string[] = [];
    if (!p.flags.compose && p.has_image) out.push("compose");
    if (!p.flags.letter && p.has_lettered) out.push("letter");
    return out;
  }

  private patchPage(i: number,
                    fn: (p: PageSummary) => PageSummary): void {
    if (!this.project) return;
    this.project = {
      ...this.project,
      pages: this.project.pages.map(p => (p.index === i ? fn(p) : p)),
    };
    this.emit();
  }
}
