/**
 * Wire types for the render service.
 *
 * Requests go out as JSON text messages; frames come back as binary
 * messages with a fixed 16-byte little-endian header followed by the
 * encoded image. See docs/wire_protocol.md in the repository root.
 */

export const FRAME_MAGIC = "WNF1";
export const FRAME_HEADER_BYTES = 16;

export const FRAME_FORMAT_PNG = 0;
export const FRAME_FORMAT_JPEG = 1;

const FORMAT_MIME: Record<number, string> = {
  [FRAME_FORMAT_PNG]: "image/png",
  [FRAME_FORMAT_JPEG]: "image/jpeg",
};

export interface ServiceMeta {
  bounds: { lo: number[]; hi: number[] };
  time_range: [number, number];
  dynamic: boolean;
  step: number;
  orbit_radius: number;
  max_resolution: number;
  render_latency_512_s: number;
  formats: string[];
  quality_tiers: Record<string, number>;
}

export interface RenderRequest {
  /** Camera-to-world, 16 floats row-major. */
  pose: number[];
  time: number;
  width: number;
  height: number;
  quality: string | number;
  format?: string;
  req_id: number;
}

export interface FrameHeader {
  frameId: number;
  width: number;
  height: number;
  /** FRAME_FORMAT_PNG or FRAME_FORMAT_JPEG. */
  format: number;
}

export class ProtocolError extends Error {}

/** Parse and validate a frame header; throws ProtocolError on garbage. */
export function decodeFrameHeader(buf: ArrayBuffer): FrameHeader {
  if (buf.byteLength < FRAME_HEADER_BYTES) {
    throw new ProtocolError(`frame shorter than header: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  let magic = "";
  for (let i = 0; i < 4; i++) magic += String.fromCharCode(view.getUint8(i));
  if (magic !== FRAME_MAGIC) {
    throw new ProtocolError(`bad frame magic ${JSON.stringify(magic)}`);
  }
  const header: FrameHeader = {
    frameId: view.getUint32(4, true),
    width: view.getUint16(8, true),
    height: view.getUint16(10, true),
    format: view.getUint8(12),
  };
  if (!(header.format in FORMAT_MIME)) {
    throw new ProtocolError(`unknown frame format tag ${header.format}`);
  }
  if (header.width === 0 || header.height === 0) {
    throw new ProtocolError(`degenerate frame size ${header.width}x${header.height}`);
  }
  return header;
}

/** Inverse of decodeFrameHeader; the test mock server uses this too. */
export function encodeFrameHeader(header: FrameHeader): ArrayBuffer {
  const buf = new ArrayBuffer(FRAME_HEADER_BYTES);
  const view = new DataView(buf);
  for (let i = 0; i < 4; i++) view.setUint8(i, FRAME_MAGIC.charCodeAt(i));
  view.setUint32(4, header.frameId, true);
  view.setUint16(8, header.width, true);
  view.setUint16(10, header.height, true);
  view.setUint8(12, header.format);
  return buf;
}

export function frameMimeType(format: number): string {
  const mime = FORMAT_MIME[format];
  if (mime === undefined) throw new ProtocolError(`unknown frame format tag ${format}`);
  return mime;
}

/** Suggested orbit distance: the service's hint, else framed from the box. */
export function initialOrbitRadius(meta: ServiceMeta): number {
  if (meta.orbit_radius > 0) return meta.orbit_radius;
  const { lo, hi } = meta.bounds;
  let sq = 0;
  for (let i = 0; i < lo.length; i++) {
    const d = (hi[i] as number) - (lo[i] as number);
    sq += d * d;
  }
  return 1.5 * Math.sqrt(sq);
}

export function sceneCenter(meta: ServiceMeta): [number, number, number] {
  const { lo, hi } = meta.bounds;
  return [
    ((lo[0] as number) + (hi[0] as number)) / 2,
    ((lo[1] as number) + (hi[1] as number)) / 2,
    ((lo[2] as number) + (hi[2] as number)) / 2,
  ];
}
