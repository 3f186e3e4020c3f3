/** Append-only edit history with cursor-based undo.
 *
 * Entry 0 is the loaded map; every successful edit appends one entry.
 * Undo moves the cursor back and returns the stored entry untouched, so the
 * restored map is bit-identical to what was displayed at that step. Entries
 * themselves are never mutated or removed; editing after an undo appends on
 * top of the current cursor position.
 */

import type { Box } from "./coords.js";

export interface HistoryEntry {
  /** base64 PNG of the color rendering shown for this step */
  colorPng: string;
  /**
   * base64 PNG of the grayscale label ids backing this step; null when the
   * step is a server-side sample whose ids never left the service (an edit
   * from such a step is requested by sample id instead of by map)
   */
  labelsPng: string | null;
  /** the edit that produced this step; null for the loaded map */
  edit: { box: Box; targetLabel: number } | null;
}

export class EditHistory {
  private entries: HistoryEntry[] = [];
  private cursor = -1;

  get length(): number {
    return this.entries.length;
  }

  /** The entry currently displayed, or null before anything loads. */
  current(): HistoryEntry | null {
    return this.cursor >= 0 ? this.entries[this.cursor] : null;
  }

  /** The entry one step behind the cursor, or null at the root. */
  previous(): HistoryEntry | null {
    return this.cursor > 0 ? this.entries[this.cursor - 1] : null;
  }

  /** All stored entries, oldest first. */
  all(): readonly HistoryEntry[] {
    return this.entries;
  }

  /** Index of the displayed entry within all(), -1 before anything loads. */
  position(): number {
    return this.cursor;
  }

  canUndo(): boolean {
    return this.cursor > 0;
  }

  /** Append an entry after the cursor and move the cursor onto it. */
  push(entry: HistoryEntry): void {
    this.entries.push(entry);
    this.cursor = this.entries.length - 1;
  }

  /** Step the cursor back one entry and return it; null at the root. */
  undo(): HistoryEntry | null {
    if (!this.canUndo()) {
      return null;
    }
    this.cursor -= 1;
    return this.entries[this.cursor];
  }

  /** Drop everything (a new sample was loaded). */
  reset(): void {
    this.entries = [];
    this.cursor = -1;
  }
}
