/** View state, reconstructable purely from server responses.
 *
 * The client holds no truth of its own: everything here is derived from the
 * session manifest, mask fetches, and the metrics endpoint, so reloading
 * the page mid-session reproduces the exact same view.
 */

import type { MaskRLE, Metrics, SessionManifest } from "./api.js";

export type RunStatus = "idle" | "running" | "done" | "error";

export interface ViewState {
  manifest: SessionManifest | null;
  frame: number;
  zoom: number;
  opacity: number;
  masks: MaskRLE[] | null;
  metrics: Metrics | null;
  runStatus: RunStatus;
  message: string | null;
}

export function initialState(): ViewState {
  return {
    manifest: null,
    frame: 0,
    zoom: 4,
    opacity: 0.55,
    masks: null,
    metrics: null,
    runStatus: "idle",
    message: null,
  };
}

/** Rebuild the session-dependent part of the state from server responses. */
export function fromServer(
  state: ViewState,
  manifest: SessionManifest,
  masks: MaskRLE[] | null,
  metrics: Metrics | null,
): ViewState {
  const frame = Math.min(state.frame, manifest.frames - 1);
  return {
    ...state,
    manifest,
    frame: Math.max(0, frame),
    masks,
    metrics,
    runStatus: masks ? "done" : "idle",
    message: null,
  };
}

export function setFrame(state: ViewState, frame: number): ViewState {
  const upper = state.manifest ? state.manifest.frames - 1 : 0;
  return { ...state, frame: Math.max(0, Math.min(frame, upper)) };
}

export function setZoom(state: ViewState, zoom: number): ViewState {
  if (![1, 2, 4, 8].includes(zoom)) return state;
  return { ...state, zoom };
}

export function setOpacity(state: ViewState, opacity: number): ViewState {
  return { ...state, opacity: Math.max(0, Math.min(1, opacity)) };
}

export function pendingClicks(state: ViewState, frame: number) {
  if (!state.manifest) return [];
  return state.manifest.clicks.filter((c) => c.frame === frame);
}
