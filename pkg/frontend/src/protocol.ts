/* Wire protocol between the console and the streaming service.
 *
 * client→server: {"type":"hello","version":1}  {"type":"vel","vx":..,"vy":..}
 * server→client: ready / spikes / arm / error frames, JSON per message.
 */

export const PROTOCOL_VERSION = 1;

export interface ReadyFrame {
  type: "ready";
  neurons: number;
  bin_ms: number;
}

export interface SpikesFrame {
  type: "spikes";
  bin: number;
  counts: number[];
  dropped?: number;
}

export interface ArmFrame {
  type: "arm";
  bin: number;
  x: number;
  y: number;
  angles: number[];
  dropped?: number;
}

export interface ErrorFrame {
  type: "error";
  msg: string;
}

export type ServerFrame = ReadyFrame | SpikesFrame | ArmFrame | ErrorFrame;

export function helloMessage(seed?: number): string {
  const msg: Record<string, number | string> = { type: "hello", version: PROTOCOL_VERSION };
  if (seed !== undefined) {
    msg.seed = seed;
  }
  return JSON.stringify(msg);
}

export function velMessage(vx: number, vy: number): string {
  return JSON.stringify({ type: "vel", vx, vy });
}

function isCountArray(value: unknown): value is number[] {
  return Array.isArray(value)
    && value.every((c) => Number.isInteger(c) && (c as number) >= 0);
}

function isFiniteArray(value: unknown): value is number[] {
  return Array.isArray(value)
    && value.every((a) => typeof a === "number" && Number.isFinite(a));
}

function isBin(value: unknown): value is number {
  return Number.isInteger(value) && (value as number) >= 0;
}

/* Returns null for anything that is not a well-formed server frame; the
 * caller decides whether to warn. */
export function parseServerFrame(raw: string): ServerFrame | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) {
    return null;
  }
  const frame = msg as Record<string, unknown>;
  switch (frame.type) {
    case "ready":
      if (Number.isInteger(frame.neurons) && (frame.neurons as number) > 0
          && typeof frame.bin_ms === "number" && frame.bin_ms > 0) {
        return { type: "ready", neurons: frame.neurons as number, bin_ms: frame.bin_ms };
      }
      return null;
    case "spikes":
      if (isBin(frame.bin) && isCountArray(frame.counts)) {
        return { type: "spikes", bin: frame.bin, counts: frame.counts };
      }
      return null;
    case "arm":
      if (isBin(frame.bin)
          && typeof frame.x === "number" && Number.isFinite(frame.x)
          && typeof frame.y === "number" && Number.isFinite(frame.y)
          && isFiniteArray(frame.angles)) {
        return { type: "arm", bin: frame.bin, x: frame.x, y: frame.y, angles: frame.angles };
      }
      return null;
    case "error":
      if (typeof frame.msg === "string") {
        return { type: "error", msg: frame.msg };
      }
      return null;
    default:
      return null;
  }
}
