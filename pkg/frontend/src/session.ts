// Client session state: which image is loaded, the dialogue so far, and the
// most recent attention map and token string.  Serializes to JSON so a page
// refresh restores the session from localStorage (or any Storage-shaped
// object in tests).

import type { AttentionResult, DialogueTurn } from "./api";
import type { Point } from "./encode";

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export const STORAGE_KEY = "scribblecap-session-v1";

export interface SessionSnapshot {
  imageId: string | null;
  turns: DialogueTurn[];
  lastAttention: AttentionResult | null;
  lastTokens: string | null;
}

export class SessionState {
  imageId: string | null = null;
  turns: DialogueTurn[] = [];
  lastAttention: AttentionResult | null = null;
  lastTokens: string | null = null;

  setImage(imageId: string): void {
    if (imageId === this.imageId) return;
    this.imageId = imageId;
    // New image, new conversation and new panels.
    this.turns = [];
    this.lastAttention = null;
    this.lastTokens = null;
  }

  // One exchange appends exactly two turns: what the user sent and what the
  // model said.  The service's echoed history already ends with those two;
  // adopting it keeps the opaque per-turn state (z) the service needs next
  // round.  Rejects histories that don't extend ours by one exchange — except
  // when the service reports truncation, where old turns legitimately fall off
  // the front and its transcript is authoritative.
  applyExchange(history: DialogueTurn[], truncated = false): void {
    if (!truncated && history.length !== this.turns.length + 2) {
      throw new Error(
        `exchange must add exactly two turns: had ${this.turns.length}, got ${history.length}`,
      );
    }
    if (history.length < 2) {
      throw new Error(`exchange needs at least two turns, got ${history.length}`);
    }
    const last = history[history.length - 1];
    const prev = history[history.length - 2];
    if (prev.role !== "user" || last.role !== "model") {
      throw new Error(`exchange must end user,model; got ${prev.role},${last.role}`);
    }
    this.turns = history;
  }

  recordAttention(att: AttentionResult): void {
    this.lastAttention = att;
  }

  recordTokens(tokens: string): void {
    this.lastTokens = tokens;
  }

  snapshot(): SessionSnapshot {
    return {
      imageId: this.imageId,
      turns: this.turns,
      lastAttention: this.lastAttention,
      lastTokens: this.lastTokens,
    };
  }

  save(storage: StorageLike): void {
    storage.setItem(STORAGE_KEY, JSON.stringify(this.snapshot()));
  }

  static load(storage: StorageLike): SessionState {
    const state = new SessionState();
    const raw = storage.getItem(STORAGE_KEY);
    if (raw === null) return state;
    let snap: SessionSnapshot;
    try {
      snap = JSON.parse(raw) as SessionSnapshot;
    } catch {
      storage.removeItem(STORAGE_KEY); // corrupt snapshot: start fresh
      return state;
    }
    state.imageId = snap.imageId ?? null;
    state.turns = Array.isArray(snap.turns) ? snap.turns : [];
    state.lastAttention = snap.lastAttention ?? null;
    state.lastTokens = snap.lastTokens ?? null;
    return state;
  }
}

// Points attached to the next user turn, if any, for display in the log.
export function turnPointsLabel(turn: DialogueTurn): string {
  const pts: Point[] | undefined = turn.points;
  if (!pts || pts.length === 0) return "";
  return ` (${pts.length} point${pts.length === 1 ? "" : "s"})`;
}
