// DOM wiring.  All logic lives in the pure modules (scribble, overlay,
// session, api); this file only translates events and paints results.  No
// numbers are computed here beyond pixel geometry — captions, token strings,
// and attention all come from the service verbatim.

import { ApiError, Client } from "./api";
import type { AttentionResult, DialogueTurn } from "./api";
import { ScribbleCapture } from "./scribble";
import { overlayCells, legendStops, MAX_ALPHA } from "./overlay";
import { STORAGE_KEY, SessionState, turnPointsLabel } from "./session";

const CANVAS_PX = 288; // 6x6 grid at 48px/cell; redrawn from health if different

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

function showError(err: unknown): void {
  const banner = el<HTMLDivElement>("error-banner");
  if (err instanceof ApiError) {
    banner.textContent = `${err.code}: ${err.message}`;
  } else {
    banner.textContent = String(err);
  }
  banner.style.display = "block";
}

function clearError(): void {
  el<HTMLDivElement>("error-banner").style.display = "none";
}

function drawStar(ctx: CanvasRenderingContext2D, cx: number, cy: number, r: number): void {
  ctx.beginPath();
  for (let i = 0; i < 10; i++) {
    const radius = i % 2 === 0 ? r : r / 2.4;
    const angle = -Math.PI / 2 + (i * Math.PI) / 5;
    const x = cx + radius * Math.cos(angle);
    const y = cy + radius * Math.sin(angle);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  }
  ctx.closePath();
  ctx.fill();
}

function drawStrokes(ctx: CanvasRenderingContext2D, capture: ScribbleCapture): void {
  ctx.strokeStyle = "#d6336c";
  ctx.fillStyle = "#d6336c";
  ctx.lineWidth = 2.5;
  ctx.lineCap = "round";
  ctx.lineJoin = "round";
  for (const stroke of capture.allStrokes()) {
    const pts = stroke.samples;
    if (pts.length === 1) {
      ctx.beginPath();
      ctx.arc(pts[0].x, pts[0].y, 3, 0, Math.PI * 2);
      ctx.fill();
    } else {
      ctx.beginPath();
      ctx.moveTo(pts[0].x, pts[0].y);
      for (let i = 1; i < pts.length; i++) ctx.lineTo(pts[i].x, pts[i].y);
      ctx.stroke();
    }
    // Star marker at the stroke's start, alongside the full trace.
    ctx.fillStyle = "#f5c518";
    drawStar(ctx, pts[0].x, pts[0].y, 7);
    ctx.fillStyle = "#d6336c";
  }
}

// At most one in-flight request per panel: the button stays disabled until
// the previous response (or error) lands.
function guarded(btn: HTMLButtonElement, handler: () => Promise<void>): () => void {
  return () => {
    if (btn.disabled) return;
    btn.disabled = true;
    handler().finally(() => {
      btn.disabled = false;
    });
  };
}

function drawOverlay(ctx: CanvasRenderingContext2D, att: AttentionResult, w: number, h: number): void {
  ctx.clearRect(0, 0, w, h);
  for (const cell of overlayCells(att.mean, att.grid, w, h)) {
    ctx.fillStyle = `rgba(214, 51, 108, ${cell.alpha.toFixed(4)})`;
    ctx.fillRect(cell.x, cell.y, cell.w, cell.h);
  }
}

function renderLegend(): void {
  const legend = el<HTMLDivElement>("legend");
  legend.replaceChildren();
  for (const stop of legendStops()) {
    const chip = document.createElement("span");
    chip.className = "legend-chip";
    chip.style.backgroundColor = `rgba(214, 51, 108, ${stop.alpha.toFixed(4)})`;
    chip.title = `${Math.round(stop.fraction * 100)}% of peak`;
    legend.appendChild(chip);
  }
  const note = document.createElement("span");
  note.className = "legend-note";
  note.textContent = ` attention (scaled to peak, max alpha ${MAX_ALPHA})`;
  legend.appendChild(note);
}

function renderDialogue(session: SessionState): void {
  const log = el<HTMLDivElement>("dialogue-log");
  log.replaceChildren();
  for (const turn of session.turns) {
    const row = document.createElement("div");
    row.className = `turn turn-${turn.role}`;
    row.textContent = `${turn.role === "user" ? "you" : "model"}: ${turn.text}${turnPointsLabel(turn)}`;
    log.appendChild(row);
  }
  log.scrollTop = log.scrollHeight;
}

function renderTokens(session: SessionState): void {
  el<HTMLElement>("token-string").textContent =
    session.lastTokens === null ? "(draw on the image, then encode)" : session.lastTokens || "(global: no points)";
}

export async function boot(): Promise<void> {
  // Same origin by default; `?api=http://127.0.0.1:8765` points the UI at a
  // service running elsewhere (it sends CORS headers).
  const apiBase = new URLSearchParams(window.location.search).get("api") ?? "";
  const client = new Client(apiBase, (url, init) => fetch(url, init));
  const session = SessionState.load(window.localStorage);
  const persist = () => session.save(window.localStorage);

  const imageCanvas = el<HTMLCanvasElement>("image-canvas");
  const inkCanvas = el<HTMLCanvasElement>("ink-canvas");
  const heatCanvas = el<HTMLCanvasElement>("heat-canvas");
  for (const c of [imageCanvas, inkCanvas, heatCanvas]) {
    c.width = CANVAS_PX;
    c.height = CANVAS_PX;
  }
  const inkCtx = inkCanvas.getContext("2d")!;
  const heatCtx = heatCanvas.getContext("2d")!;
  const capture = new ScribbleCapture(CANVAS_PX, CANVAS_PX);

  const select = el<HTMLSelectElement>("image-select");
  const health = await client.health();
  el<HTMLElement>("health-line").textContent =
    `service ok: ${health.n_images} images, grid ${health.grid}x${health.grid}, ${health.n_queries} queries`;
  const { images: imageIds } = await client.images(200);
  for (const id of imageIds) {
    const opt = document.createElement("option");
    opt.value = id;
    opt.textContent = id;
    select.appendChild(opt);
  }

  const loadImage = (id: string) => {
    const img = new Image();
    img.onload = () => {
      imageCanvas.getContext("2d")!.drawImage(img, 0, 0, CANVAS_PX, CANVAS_PX);
    };
    img.src = client.imagePngUrl(id, Math.floor(CANVAS_PX / health.grid));
  };

  const refreshPanels = () => {
    renderTokens(session);
    renderDialogue(session);
    if (session.lastAttention !== null) {
      drawOverlay(heatCtx, session.lastAttention, CANVAS_PX, CANVAS_PX);
    } else {
      heatCtx.clearRect(0, 0, CANVAS_PX, CANVAS_PX);
    }
  };

  // Restore a previous session if its image still exists, else start clean.
  if (session.imageId !== null && imageIds.includes(session.imageId)) {
    select.value = session.imageId;
  } else if (imageIds.length > 0) {
    session.setImage(imageIds[0]);
    persist();
  }
  if (session.imageId !== null) loadImage(session.imageId);
  renderLegend();
  refreshPanels();

  select.addEventListener("change", () => {
    session.setImage(select.value);
    persist();
    capture.clear();
    inkCtx.clearRect(0, 0, CANVAS_PX, CANVAS_PX);
    loadImage(select.value);
    refreshPanels();
  });

  // Pointer -> capture.  The canvas is not scaled, so offsetX/Y are canvas px.
  let drawing = false;
  inkCanvas.addEventListener("pointerdown", (ev) => {
    drawing = true;
    inkCanvas.setPointerCapture(ev.pointerId);
    capture.beginStroke(ev.offsetX, ev.offsetY);
    drawStrokes(inkCtx, capture);
  });
  inkCanvas.addEventListener("pointermove", (ev) => {
    if (!drawing) return;
    capture.extendStroke(ev.offsetX, ev.offsetY);
    drawStrokes(inkCtx, capture);
  });
  const finish = () => {
    drawing = false;
    capture.endStroke();
  };
  inkCanvas.addEventListener("pointerup", finish);
  inkCanvas.addEventListener("pointercancel", finish);

  el<HTMLButtonElement>("clear-btn").addEventListener("click", () => {
    capture.clear();
    inkCtx.clearRect(0, 0, CANVAS_PX, CANVAS_PX);
  });

  const encodeBtn = el<HTMLButtonElement>("encode-btn");
  encodeBtn.addEventListener("click", guarded(encodeBtn, async () => {
    clearError();
    try {
      const { tokens } = await client.encode(capture.normalizedPoints());
      session.recordTokens(tokens);
      persist();
      renderTokens(session);
    } catch (err) {
      showError(err);
    }
  }));

  const captionBtn = el<HTMLButtonElement>("caption-btn");
  captionBtn.addEventListener("click", guarded(captionBtn, async () => {
    clearError();
    if (session.imageId === null) return;
    try {
      const res = await client.caption(session.imageId, capture.normalizedPoints());
      el<HTMLElement>("caption-text").textContent = res.caption;
      session.recordTokens(res.tokens);
      persist();
      renderTokens(session);
    } catch (err) {
      showError(err);
    }
  }));

  const attentionBtn = el<HTMLButtonElement>("attention-btn");
  attentionBtn.addEventListener("click", guarded(attentionBtn, async () => {
    clearError();
    if (session.imageId === null) return;
    try {
      const res = await client.attention(session.imageId, capture.normalizedPoints());
      session.recordAttention(res);
      session.recordTokens(res.tokens);
      persist();
      refreshPanels();
    } catch (err) {
      showError(err);
    }
  }));

  const input = el<HTMLInputElement>("dialogue-input");
  const sendBtn = el<HTMLButtonElement>("send-btn");
  const send = guarded(sendBtn, async () => {
    clearError();
    if (session.imageId === null) return;
    const text = input.value.trim();
    if (text === "") return;
    try {
      const res = await client.dialogue(
        session.imageId,
        text,
        capture.normalizedPoints(),
        session.turns as DialogueTurn[],
      );
      session.applyExchange(res.history, res.truncated);
      persist();
      input.value = "";
      renderDialogue(session);
      if (res.truncated) {
        el<HTMLDivElement>("dialogue-note").textContent = "older turns dropped to fit the context window";
      }
    } catch (err) {
      showError(err); // state untouched on failure
    }
  });
  sendBtn.addEventListener("click", send);
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") send();
  });

  el<HTMLButtonElement>("reset-btn").addEventListener("click", () => {
    window.localStorage.removeItem(STORAGE_KEY);
    window.location.reload();
  });
}

if (typeof document !== "undefined" && document.getElementById("image-canvas") !== null) {
  boot().catch(showError);
}
