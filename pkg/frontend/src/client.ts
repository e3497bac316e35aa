/**
 * Streaming client for the render service.
 *
 * Owns the network lifecycle (metadata fetch, WebSocket, reconnect with
 * backoff) and the two newest-wins slots that keep an interactive session
 * honest under backpressure:
 *
 *  - outbound: pose/time updates park in a single pending slot and at most
 *    one request goes out per animation tick, so the message rate never
 *    exceeds the display tick rate no matter how fast input events arrive;
 *  - inbound: received frames land in a one-frame buffer that a newer frame
 *    simply overwrites, so the UI only ever draws the freshest image.
 *
 * The WebSocket constructor, fetch, and timer are injectable so tests can
 * drive the client against a mock service without a browser.
 */

import { isRigidPose } from "./math.js";
import {
  FRAME_HEADER_BYTES,
  FrameHeader,
  ProtocolError,
  RenderRequest,
  ServiceMeta,
  decodeFrameHeader,
} from "./protocol.js";

/** The subset of the WebSocket API the client touches. */
export interface WireSocket {
  binaryType: string;
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
}

export interface ReceivedFrame {
  header: FrameHeader;
  /** Encoded image bytes (PNG or JPEG), header stripped. */
  body: Uint8Array;
}

export interface ClientErrors {
  /** Binary messages dropped for a bad or truncated header. */
  badFrames: number;
  /** Outbound updates dropped because the pose was not rigid. */
  posesRejected: number;
  /** JSON error replies from the service. */
  serverErrors: number;
}

export interface StreamClientOptions {
  /** Service base, e.g. "http://localhost:8000". */
  url: string;
  wsFactory?: (url: string) => WireSocket;
  fetchFn?: (url: string) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;
  setTimeoutFn?: (fn: () => void, ms: number) => unknown;
  onStatus?: (status: "connecting" | "connected" | "reconnecting" | "failed" | "closed") => void;
  onServerError?: (message: string, reqId: number) => void;
  maxReconnectAttempts?: number;
  backoffBaseMs?: number;
  backoffMaxMs?: number;
}

export function reconnectDelayMs(attempt: number, baseMs: number, maxMs: number): number {
  return Math.min(maxMs, baseMs * 2 ** (attempt - 1));
}

function wsUrl(base: string): string {
  const u = new URL(base);
  u.protocol = u.protocol === "https:" ? "wss:" : "ws:";
  u.pathname = u.pathname.replace(/\/$/, "") + "/stream";
  return u.toString();
}

export class StreamClient {
  meta: ServiceMeta | null = null;
  readonly errors: ClientErrors = { badFrames: 0, posesRejected: 0, serverErrors: 0 };

  private readonly opts: Required<Pick<StreamClientOptions, "backoffBaseMs" | "backoffMaxMs" | "maxReconnectAttempts">> &
    StreamClientOptions;
  private socket: WireSocket | null = null;
  private open = false;
  private closed = false;
  private reconnectAttempts = 0;

  // Newest-wins slots; see module docstring.
  private pending: Omit<RenderRequest, "req_id"> | null = null;
  private latestFrame: ReceivedFrame | null = null;
  private nextReqId = 1;
  private lastFrameId = -1;

  constructor(options: StreamClientOptions) {
    this.opts = {
      backoffBaseMs: 500,
      backoffMaxMs: 10_000,
      maxReconnectAttempts: 8,
      ...options,
    };
  }

  /** Fetch service metadata and open the stream. */
  async connect(): Promise<ServiceMeta> {
    this.opts.onStatus?.("connecting");
    const fetchFn = this.opts.fetchFn ?? ((url: string) => fetch(url));
    const res = await fetchFn(this.opts.url.replace(/\/$/, "") + "/meta");
    if (!res.ok) throw new Error(`metadata request failed: HTTP ${res.status}`);
    this.meta = (await res.json()) as ServiceMeta;
    this.openSocket();
    return this.meta;
  }

  private openSocket(): void {
    if (this.closed) return;
    const factory = this.opts.wsFactory ?? ((url: string) => new WebSocket(url) as unknown as WireSocket);
    const socket = factory(wsUrl(this.opts.url));
    socket.binaryType = "arraybuffer";
    socket.onopen = () => {
      this.open = true;
      this.reconnectAttempts = 0;
      this.opts.onStatus?.("connected");
    };
    socket.onmessage = (ev) => this.handleMessage(ev.data);
    socket.onerror = () => {
      // the close handler owns recovery; nothing to do here
    };
    socket.onclose = () => {
      this.open = false;
      if (this.closed) return;
      this.scheduleReconnect();
    };
    this.socket = socket;
  }

  private scheduleReconnect(): void {
    this.reconnectAttempts += 1;
    if (this.reconnectAttempts > this.opts.maxReconnectAttempts) {
      this.opts.onStatus?.("failed");
      return;
    }
    this.opts.onStatus?.("reconnecting");
    const delay = reconnectDelayMs(this.reconnectAttempts, this.opts.backoffBaseMs, this.opts.backoffMaxMs);
    const setTimeoutFn = this.opts.setTimeoutFn ?? ((fn: () => void, ms: number) => setTimeout(fn, ms));
    setTimeoutFn(() => this.openSocket(), delay);
  }

  private handleMessage(data: unknown): void {
    if (typeof data === "string") {
      try {
        const msg = JSON.parse(data) as { error?: string; req_id?: number };
        if (msg.error !== undefined) {
          this.errors.serverErrors += 1;
          this.opts.onServerError?.(msg.error, msg.req_id ?? 0);
        }
      } catch {
        this.errors.badFrames += 1;
      }
      return;
    }
    if (!(data instanceof ArrayBuffer)) {
      this.errors.badFrames += 1;
      return;
    }
    let header: FrameHeader;
    try {
      header = decodeFrameHeader(data);
    } catch (e) {
      if (e instanceof ProtocolError) {
        // malformed frame: drop it, count it, keep the session alive
        this.errors.badFrames += 1;
        return;
      }
      throw e;
    }
    // Stale frames lose to what is already buffered or displayed. Equal ids
    // are accepted: progressive quality re-answers the same id at full
    // quality and the refined frame should replace the preview.
    if (header.frameId < this.lastFrameId) return;
    if (this.latestFrame !== null && header.frameId < this.latestFrame.header.frameId) return;
    this.latestFrame = { header, body: new Uint8Array(data, FRAME_HEADER_BYTES) };
  }

  /**
   * Park a pose/time update in the outbound slot, replacing whatever was
   * waiting. Nothing is sent until the next tick(). Non-rigid poses are
   * dropped and counted; the service would reject them anyway.
   */
  requestRender(req: Omit<RenderRequest, "req_id">): void {
    if (!isRigidPose(req.pose)) {
      this.errors.posesRejected += 1;
      return;
    }
    this.pending = req;
  }

  /**
   * Flush at most one pending request. Call once per animation tick; this
   * is what coalesces input bursts to one message per tick. Returns the
   * req_id sent, or null when idle or disconnected.
   */
  tick(): number | null {
    if (this.pending === null || !this.open || this.socket === null) return null;
    const req: RenderRequest = { ...this.pending, req_id: this.nextReqId++ };
    this.pending = null;
    this.socket.send(JSON.stringify(req));
    return req.req_id;
  }

  /** Take the newest undisplayed frame, or null. The slot empties. */
  takeFrame(): ReceivedFrame | null {
    const frame = this.latestFrame;
    if (frame === null) return null;
    this.latestFrame = null;
    this.lastFrameId = frame.header.frameId;
    return frame;
  }

  get isOpen(): boolean {
    return this.open;
  }

  close(): void {
    this.closed = true;
    this.opts.onStatus?.("closed");
    this.socket?.close();
  }
}
