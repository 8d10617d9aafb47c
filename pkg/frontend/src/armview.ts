import { RingBuffer } from "./ringbuffer.js";
import { ArmFrame } from "./protocol.js";

/* 500 trailing endpoint positions of 20 ms bins = 10 s of arm trace. */
export const TRACE_BINS = 500;

/* Joint geometry as served by the model-info endpoint: rotation axis and the
 * offset to the next joint, both in the parent frame. */
export interface JointGeometry {
  axis: number[];
  offset_mm: number[];
}

type Vec3 = [number, number, number];
type Mat3 = [Vec3, Vec3, Vec3];

function rotationAbout(axis: number[], angle: number): Mat3 {
  // Rodrigues form for a unit axis
  const [x, y, z] = axis;
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  const t = 1 - c;
  return [
    [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
    [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
    [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
  ];
}

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: Mat3 = [[0, 0, 0], [0, 0, 0], [0, 0, 0]];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    }
  }
  return out;
}

function matVec(a: Mat3, v: number[]): Vec3 {
  return [
    a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
    a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
    a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
  ];
}

/* XY positions of the base and every joint tip, for drawing the linkage.
 * Each joint rotates about its axis first, then steps along its offset,
 * matching how the service composes the chain. */
export function linkagePoints(joints: JointGeometry[], angles: number[]): Array<[number, number]> {
  if (angles.length !== joints.length) {
    throw new Error(`expected ${joints.length} angles, got ${angles.length}`);
  }
  let rot: Mat3 = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
  let pos: Vec3 = [0, 0, 0];
  const points: Array<[number, number]> = [[0, 0]];
  for (let i = 0; i < joints.length; i++) {
    rot = matMul(rot, rotationAbout(joints[i].axis, angles[i]));
    const step = matVec(rot, joints[i].offset_mm);
    pos = [pos[0] + step[0], pos[1] + step[1], pos[2] + step[2]];
    points.push([pos[0], pos[1]]);
  }
  return points;
}

export class ArmTrace {
  private trace: RingBuffer<ArmFrame>;
  private lastBin = -1;

  constructor(readonly bins: number = TRACE_BINS) {
    this.trace = new RingBuffer(bins);
  }

  push(frame: ArmFrame): boolean {
    if (frame.bin <= this.lastBin) {
      console.warn(`arm: dropped out-of-order bin ${frame.bin} (last ${this.lastBin})`);
      return false;
    }
    this.lastBin = frame.bin;
    this.trace.push(frame);
    return true;
  }

  latest(): ArmFrame | null {
    return this.trace.last();
  }

  get length(): number {
    return this.trace.length;
  }

  points(): readonly ArmFrame[] {
    return this.trace.toArray();
  }
}
