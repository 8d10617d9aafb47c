import { RingBuffer } from "./ringbuffer.js";
import { SpikesFrame } from "./protocol.js";

/* 250 columns of 20 ms bins = 5 s of history. */
export const RASTER_BINS = 250;

/* Brightness tops out at 8 counts, mirroring the service's 8+ spike class. */
export const COUNT_SATURATION = 8;

export function brightness(count: number): number {
  if (count <= 0) {
    return 0;
  }
  return Math.min(count, COUNT_SATURATION) / COUNT_SATURATION;
}

interface Column {
  bin: number;
  counts: number[];
}

export class SpikeRaster {
  private columns: RingBuffer<Column>;
  private lastBin = -1;

  constructor(readonly neurons: number, readonly bins: number = RASTER_BINS) {
    if (!Number.isInteger(neurons) || neurons < 1) {
      throw new Error(`neurons must be a positive integer, got ${neurons}`);
    }
    this.columns = new RingBuffer(bins);
  }

  push(frame: SpikesFrame): boolean {
    if (frame.bin <= this.lastBin) {
      console.warn(`raster: dropped out-of-order bin ${frame.bin} (last ${this.lastBin})`);
      return false;
    }
    if (frame.counts.length !== this.neurons) {
      console.warn(`raster: dropped frame with ${frame.counts.length} counts, expected ${this.neurons}`);
      return false;
    }
    this.lastBin = frame.bin;
    this.columns.push({ bin: frame.bin, counts: frame.counts });
    return true;
  }

  get columnCount(): number {
    return this.columns.length;
  }

  oldestBin(): number | null {
    return this.columns.length > 0 ? this.columns.at(0).bin : null;
  }

  /* RGBA pixels, one column per bin slot and one row per neuron, newest
   * column at the right edge. Slots not yet filled stay transparent so the
   * canvas background shows through. */
  renderPixels(): Uint8ClampedArray {
    const pixels = new Uint8ClampedArray(this.bins * this.neurons * 4);
    const filled = this.columns.length;
    const start = this.bins - filled;
    for (let c = 0; c < filled; c++) {
      const column = this.columns.at(c);
      const x = start + c;
      for (let row = 0; row < this.neurons; row++) {
        const v = Math.round(255 * brightness(column.counts[row]));
        const base = (row * this.bins + x) * 4;
        pixels[base] = v;
        pixels[base + 1] = v;
        pixels[base + 2] = v;
        pixels[base + 3] = 255;
      }
    }
    return pixels;
  }
}
