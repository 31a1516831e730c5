/** Annotator tool wiring: one click per object, run, inspect masklets. */

import { ApiError, Client, type MaskRLE } from "./api.js";
import { cssColor } from "./colors.js";
import { renderOverlayRGBA } from "./overlay.js";
import { decodeRLE } from "./rle.js";
import {
  fromServer,
  initialState,
  pendingClicks,
  setFrame,
  setOpacity,
  setZoom,
  type ViewState,
} from "./state.js";
import { displayToImage, imagePixelCenter } from "./transform.js";

const client = new Client("");
let state: ViewState = initialState();
let sessionId: string | null = null;
let frameBitmaps: (ImageBitmap | null)[] = [];

const els = {
  sessionList: document.getElementById("session-list") as HTMLSelectElement,
  loadBtn: document.getElementById("load-session") as HTMLButtonElement,
  demoBtn: document.getElementById("new-demo") as HTMLButtonElement,
  framesPath: document.getElementById("frames-path") as HTMLInputElement,
  newFromPath: document.getElementById("new-from-path") as HTMLButtonElement,
  canvas: document.getElementById("view") as HTMLCanvasElement,
  scrubber: document.getElementById("scrubber") as HTMLInputElement,
  frameLabel: document.getElementById("frame-label") as HTMLSpanElement,
  zoom: document.getElementById("zoom") as HTMLSelectElement,
  opacity: document.getElementById("opacity") as HTMLInputElement,
  runBtn: document.getElementById("run") as HTMLButtonElement,
  undoBtn: document.getElementById("undo") as HTMLButtonElement,
  status: document.getElementById("status") as HTMLSpanElement,
  clicksPanel: document.getElementById("clicks") as HTMLDivElement,
  metricsPanel: document.getElementById("metrics") as HTMLDivElement,
};

function setStatus(text: string, isError = false): void {
  els.status.textContent = text;
  els.status.className = isError ? "error" : "";
}

async function refreshSessionList(): Promise<void> {
  const { sessions } = await client.listSessions();
  els.sessionList.innerHTML = "";
  for (const s of sessions) {
    const opt = document.createElement("option");
    opt.value = s.id;
    opt.textContent = `${s.id} (${s.frames} frames${s.has_gt ? ", GT" : ""})`;
    els.sessionList.appendChild(opt);
  }
}

async function loadSession(id: string): Promise<void> {
  sessionId = id;
  const manifest = await client.getSession(id);
  let masks: MaskRLE[] | null = null;
  if (manifest.has_result) {
    masks = await Promise.all(
      Array.from({ length: manifest.frames }, (_, t) => client.getMask(id, t)),
    );
  }
  let metrics = null;
  if (manifest.has_gt && masks) {
    metrics = await client.getMetrics(id).catch(() => null);
  }
  state = fromServer(state, manifest, masks, metrics);
  frameBitmaps = new Array(manifest.frames).fill(null);
  els.scrubber.max = String(manifest.frames - 1);
  els.scrubber.value = String(state.frame);
  setStatus(`session ${id} loaded`);
  await draw();
  renderPanels();
}

async function frameBitmap(t: number): Promise<ImageBitmap> {
  if (!frameBitmaps[t]) {
    const resp = await fetch(client.frameUrl(sessionId!, t));
    frameBitmaps[t] = await createImageBitmap(await resp.blob());
  }
  return frameBitmaps[t]!;
}

async function draw(): Promise<void> {
  const m = state.manifest;
  if (!m || sessionId === null) return;
  const zoom = state.zoom;
  els.canvas.width = m.width * zoom;
  els.canvas.height = m.height * zoom;
  const ctx = els.canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  const bitmap = await frameBitmap(state.frame);
  ctx.drawImage(bitmap, 0, 0, m.width * zoom, m.height * zoom);

  if (state.masks) {
    const rle = state.masks[state.frame];
    const labels = decodeRLE(rle);
    const scale = m.stride * zoom;
    const rgba = renderOverlayRGBA(labels, rle.width, rle.height, {
      scale,
      opacity: state.opacity,
    });
    const overlay = new ImageData(
      rgba.slice(0, m.width * zoom * m.height * zoom * 4),
      rle.width * scale,
      rle.height * scale,
    );
    const off = new OffscreenCanvas(overlay.width, overlay.height);
    const octx = off.getContext("2d")!;
    octx.putImageData(overlay, 0, 0);
    ctx.drawImage(off, 0, 0);
  }

  // click markers for the current frame (red dots, as in the workflow)
  for (const c of pendingClicks(state, state.frame)) {
    const p = imagePixelCenter({ x: c.x, y: c.y }, { zoom });
    ctx.beginPath();
    ctx.arc(p.x, p.y, Math.max(3, zoom), 0, 2 * Math.PI);
    ctx.fillStyle = "red";
    ctx.fill();
    ctx.strokeStyle = "white";
    ctx.stroke();
    ctx.fillStyle = "white";
    ctx.font = "11px sans-serif";
    ctx.fillText(String(c.instance), p.x + zoom + 2, p.y - 2);
  }
  els.frameLabel.textContent = `frame ${state.frame + 1}/${m.frames}`;
}

function renderPanels(): void {
  const m = state.manifest;
  els.clicksPanel.innerHTML = "";
  if (m) {
    for (const c of m.clicks) {
      const row = document.createElement("div");
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = cssColor(c.instance);
      row.appendChild(swatch);
      row.appendChild(
        document.createTextNode(` #${c.instance} at (${c.x}, ${c.y}) on frame ${c.frame + 1}`),
      );
      els.clicksPanel.appendChild(row);
    }
  }
  els.metricsPanel.innerHTML = "";
  els.metricsPanel.hidden = state.metrics === null;
  if (state.metrics) {
    const head = document.createElement("div");
    head.textContent = `mIOU ${state.metrics.miou.toFixed(4)}`;
    head.className = "miou";
    els.metricsPanel.appendChild(head);
    for (const row of state.metrics.per_instance) {
      const div = document.createElement("div");
      div.textContent = `instance ${row.id}${row.class ? ` (${row.class})` : ""}: ${row.iou.toFixed(4)}`;
      els.metricsPanel.appendChild(div);
    }
  }
}

async function handleCanvasClick(ev: MouseEvent): Promise<void> {
  if (!state.manifest || sessionId === null) return;
  const rect = els.canvas.getBoundingClientRect();
  const display = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  const image = displayToImage(display, { zoom: state.zoom });
  try {
    const { instance_id } = await client.addClick(sessionId, state.frame, image.x, image.y);
    setStatus(`click #${instance_id} at (${image.x}, ${image.y})`);
    await loadSession(sessionId);
  } catch (err) {
    if (err instanceof ApiError) {
      const detail =
        err.payload && typeof err.payload === "object" && "error" in (err.payload as object)
          ? (err.payload as { error: string }).error
          : `rejected (${err.status})`;
      setStatus(detail, true);
    } else {
      setStatus(String(err), true);
    }
  }
}

async function handleRun(): Promise<void> {
  if (sessionId === null) return;
  els.runBtn.disabled = true;
  state = { ...state, runStatus: "running" };
  setStatus("running...");
  try {
    await client.run(sessionId);
    await loadSession(sessionId);
    setStatus("run complete");
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      setStatus("run in progress", true);
    } else {
      setStatus(String(err), true);
    }
    state = { ...state, runStatus: "error" };
  } finally {
    els.runBtn.disabled = false;
  }
}

async function handleUndo(): Promise<void> {
  if (!state.manifest || sessionId === null || state.manifest.clicks.length === 0) return;
  const last = state.manifest.clicks[state.manifest.clicks.length - 1];
  await client.deleteClick(sessionId, last.instance);
  setStatus(`removed click #${last.instance}`);
  await loadSession(sessionId);
}

function wire(): void {
  els.canvas.addEventListener("click", handleCanvasClick);
  els.runBtn.addEventListener("click", handleRun);
  els.undoBtn.addEventListener("click", handleUndo);
  els.scrubber.addEventListener("input", async () => {
    state = setFrame(state, Number(els.scrubber.value));
    await draw();
  });
  els.zoom.addEventListener("change", async () => {
    state = setZoom(state, Number(els.zoom.value));
    await draw();
  });
  els.opacity.addEventListener("input", async () => {
    state = setOpacity(state, Number(els.opacity.value) / 100);
    await draw();
  });
  els.loadBtn.addEventListener("click", async () => {
    if (els.sessionList.value) await loadSession(els.sessionList.value);
  });
  els.demoBtn.addEventListener("click", async () => {
    const { id } = await client.createSession({
      kind: "synthetic",
      config: { seed: 0, scene_index: 0 },
    });
    await refreshSessionList();
    await loadSession(id);
  });
  els.newFromPath.addEventListener("click", async () => {
    const path = els.framesPath.value.trim();
    if (!path) return;
    try {
      const { id } = await client.createSession({ kind: "frames", path });
      await refreshSessionList();
      await loadSession(id);
    } catch (err) {
      setStatus(err instanceof ApiError ? `rejected (${err.status})` : String(err), true);
    }
  });
}

wire();
refreshSessionList().catch((err) => setStatus(String(err), true));
