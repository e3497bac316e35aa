/**
 * DOM layer: wires pointer gestures, the time scrubber, and the transport
 * buttons to the viewer state, and runs the animation loop that ships pose
 * updates and paints received frames. All decisions live in state.ts /
 * client.ts; this file only translates events and draws.
 */

import { StreamClient } from "./client.js";
import { orbitPose } from "./math.js";
import { frameMimeType, initialOrbitRadius, sceneCenter } from "./protocol.js";
import {
  FpsMeter,
  ViewerState,
  advancePlayback,
  applyDrag,
  applyScrub,
  applyZoom,
  initialState,
} from "./state.js";

const DRAG_RADIANS_PER_PIXEL = 0.008;
const ZOOM_PER_WHEEL_NOTCH = 1.1;
// Pick a request size the service can turn around at interactive rates.
const TARGET_FRAME_SECONDS = 0.15;

export interface ViewerElements {
  canvas: HTMLCanvasElement;
  scrubber: HTMLInputElement;
  playButton: HTMLButtonElement;
  statusLine: HTMLElement;
  fpsLine: HTMLElement;
}

/** Resolution that keeps per-frame latency near the target, from metadata. */
export function pickRenderSize(latency512s: number, maxResolution: number): number {
  if (!(latency512s > 0)) return Math.min(256, maxResolution);
  const side = 512 * Math.sqrt(TARGET_FRAME_SECONDS / latency512s);
  const snapped = Math.round(side / 8) * 8;
  return Math.max(64, Math.min(Math.min(512, maxResolution), snapped));
}

export class Viewer {
  readonly state: ViewerState = initialState();
  private readonly fpsMeter = new FpsMeter();
  private renderSize = 256;
  private lastTickMs: number | null = null;
  private lastSent = "";
  private lastDrawnSeq = 0;
  private decodeSeq = 0;
  private rafHandle = 0;

  constructor(
    private readonly client: StreamClient,
    private readonly el: ViewerElements,
    initialTime = 0,
  ) {
    this.state.time = initialTime;
    this.bindInputs();
  }

  async start(): Promise<void> {
    const meta = await this.client.connect();
    this.state.orbit.radius = initialOrbitRadius(meta);
    this.state.center = sceneCenter(meta);
    this.renderSize = pickRenderSize(meta.render_latency_512_s, meta.max_resolution);
    this.el.canvas.width = this.renderSize;
    this.el.canvas.height = this.renderSize;
    if (!meta.dynamic) {
      this.el.scrubber.disabled = true;
      this.el.playButton.disabled = true;
    }
    this.pushUpdate();
    this.rafHandle = requestAnimationFrame((ms) => this.loop(ms));
  }

  stop(): void {
    cancelAnimationFrame(this.rafHandle);
    this.client.close();
  }

  private bindInputs(): void {
    const canvas = this.el.canvas;
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    canvas.addEventListener("pointerdown", (e) => {
      dragging = true;
      lastX = e.clientX;
      lastY = e.clientY;
      canvas.setPointerCapture(e.pointerId);
    });
    canvas.addEventListener("pointermove", (e) => {
      if (!dragging) return;
      // dragging right swings the camera to the right around the scene
      applyDrag(
        this.state,
        -(e.clientX - lastX) * DRAG_RADIANS_PER_PIXEL,
        (e.clientY - lastY) * DRAG_RADIANS_PER_PIXEL,
      );
      lastX = e.clientX;
      lastY = e.clientY;
      this.pushUpdate();
    });
    canvas.addEventListener("pointerup", () => (dragging = false));
    canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      applyZoom(this.state, e.deltaY > 0 ? ZOOM_PER_WHEEL_NOTCH : 1 / ZOOM_PER_WHEEL_NOTCH);
      this.pushUpdate();
    });
    this.el.scrubber.addEventListener("input", () => {
      this.state.playing = false;
      applyScrub(this.state, Number(this.el.scrubber.value));
      this.pushUpdate();
    });
    this.el.playButton.addEventListener("click", () => {
      this.state.playing = !this.state.playing;
      this.el.playButton.textContent = this.state.playing ? "pause" : "play";
    });
  }

  /** Park the current pose/time in the client's outbound slot. */
  private pushUpdate(): void {
    this.client.requestRender({
      pose: orbitPose(this.state.orbit, this.state.center),
      time: this.state.time,
      width: this.renderSize,
      height: this.renderSize,
      quality: "auto",
    });
  }

  private loop(nowMs: number): void {
    const dt = this.lastTickMs === null ? 0 : (nowMs - this.lastTickMs) / 1000;
    this.lastTickMs = nowMs;

    if (this.state.playing) {
      advancePlayback(this.state, dt);
      this.el.scrubber.value = this.state.time.toFixed(4);
      this.pushUpdate();
    }
    this.client.tick();

    const frame = this.client.takeFrame();
    if (frame !== null) {
      const seq = ++this.decodeSeq;
      const blob = new Blob([frame.body as BlobPart], { type: frameMimeType(frame.header.format) });
      createImageBitmap(blob).then((bitmap) => {
        // a slow decode must not paint over a newer frame
        if (seq <= this.lastDrawnSeq) return;
        this.lastDrawnSeq = seq;
        const ctx = this.el.canvas.getContext("2d");
        if (ctx === null) return;
        if (this.el.canvas.width !== bitmap.width || this.el.canvas.height !== bitmap.height) {
          this.el.canvas.width = bitmap.width;
          this.el.canvas.height = bitmap.height;
        }
        ctx.imageSmoothingEnabled = false;
        ctx.drawImage(bitmap, 0, 0);
        bitmap.close();
        this.fpsMeter.tick(nowMs / 1000);
        this.state.fps = this.fpsMeter.value();
        this.el.fpsLine.textContent = `${this.state.fps.toFixed(1)} fps`;
      });
    }

    const status = `${this.state.connection}` + (this.client.errors.badFrames > 0 ? ` (${this.client.errors.badFrames} bad frames)` : "");
    if (status !== this.lastSent) {
      this.el.statusLine.textContent = status;
      this.lastSent = status;
    }
    this.rafHandle = requestAnimationFrame((ms) => this.loop(ms));
  }

  setConnection(status: ViewerState["connection"]): void {
    this.state.connection = status;
    if (status === "connected") {
      // state survived the drop; resume streaming from where we were
      this.pushUpdate();
    }
  }
}
