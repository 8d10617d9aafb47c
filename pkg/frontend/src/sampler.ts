/* Joystick-to-velocity sampling. One sample every 20 ms (the service bin
 * width), deflection times gain, zeros while released so the arm keeps
 * decaying toward its anchor. */

export const SAMPLE_INTERVAL_MS = 20;
export const DEFAULT_GAIN_MM_S = 150;

export interface VelocitySample {
  vx: number;
  vy: number;
}

/* Deflections inside the unit disc pass through; anything outside (a pointer
 * leaving the base faster than the capture updates) is pulled back to the rim. */
export function clampDeflection(dx: number, dy: number): [number, number] {
  const mag = Math.hypot(dx, dy);
  if (mag <= 1) {
    return [dx, dy];
  }
  return [dx / mag, dy / mag];
}

export class VelocitySampler {
  private timer: ReturnType<typeof setInterval> | null = null;
  private dx = 0;
  private dy = 0;

  constructor(
    private readonly emit: (sample: VelocitySample) => void,
    readonly gain: number = DEFAULT_GAIN_MM_S,
  ) {
    if (!(gain > 0)) {
      throw new Error(`gain must be positive, got ${gain}`);
    }
  }

  setDeflection(dx: number, dy: number): void {
    [this.dx, this.dy] = clampDeflection(dx, dy);
  }

  release(): void {
    this.dx = 0;
    this.dy = 0;
  }

  start(): void {
    if (this.timer !== null) {
      return;
    }
    this.timer = setInterval(() => {
      this.emit({ vx: this.dx * this.gain, vy: this.dy * this.gain });
    }, SAMPLE_INTERVAL_MS);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  get running(): boolean {
    return this.timer !== null;
  }
}
