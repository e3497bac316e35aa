/**
 * Entry point. Configuration comes from URL query parameters:
 *
 *   ?service=http://host:port   render service base (default: page origin)
 *   &t=0.5                      initial scene time
 */

import { StreamClient } from "./client.js";
import { clampTime } from "./state.js";
import { Viewer, ViewerElements } from "./viewer.js";

function requireElement<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing #${id} in the page`);
  return el as T;
}

const params = new URLSearchParams(window.location.search);
const service = params.get("service") ?? window.location.origin;
const initialTime = clampTime(Number(params.get("t") ?? "0") || 0);

const elements: ViewerElements = {
  canvas: requireElement<HTMLCanvasElement>("view"),
  scrubber: requireElement<HTMLInputElement>("time"),
  playButton: requireElement<HTMLButtonElement>("play"),
  statusLine: requireElement<HTMLElement>("status"),
  fpsLine: requireElement<HTMLElement>("fps"),
};

let viewer: Viewer;
const client = new StreamClient({
  url: service,
  onStatus: (status) => viewer?.setConnection(status),
});
viewer = new Viewer(client, elements, initialTime);

viewer.start().catch((err: unknown) => {
  elements.statusLine.textContent = `cannot reach ${service}/meta: ${String(err)}`;
  // keep retrying; the service may simply not be up yet
  setTimeout(() => window.location.reload(), 5000);
});
