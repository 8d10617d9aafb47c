import { clampDeflection } from "./sampler.js";

/* On-screen joystick: a base circle with a knob the pointer drags. Reports
 * normalized deflection in [-1, 1]^2 (screen axes, y down); release snaps
 * the knob and the deflection back to zero. */

export class Joystick {
  private knob: HTMLDivElement;
  private pointerId: number | null = null;
  private centerX = 0;
  private centerY = 0;
  private radius = 1;

  constructor(
    private readonly base: HTMLDivElement,
    private readonly onChange: (dx: number, dy: number) => void,
  ) {
    this.knob = document.createElement("div");
    this.knob.className = "joystick-knob";
    this.base.appendChild(this.knob);
    this.moveKnob(0, 0);

    this.base.addEventListener("pointerdown", (e) => {
      if (this.pointerId !== null) {
        return;
      }
      this.pointerId = e.pointerId;
      this.base.setPointerCapture(e.pointerId);
      const rect = this.base.getBoundingClientRect();
      this.centerX = rect.left + rect.width / 2;
      this.centerY = rect.top + rect.height / 2;
      this.radius = rect.width / 2;
      this.handleMove(e.clientX, e.clientY);
    });

    this.base.addEventListener("pointermove", (e) => {
      if (this.pointerId !== e.pointerId) {
        return;
      }
      this.handleMove(e.clientX, e.clientY);
    });

    const end = (e: PointerEvent) => {
      if (this.pointerId !== e.pointerId) {
        return;
      }
      this.pointerId = null;
      this.moveKnob(0, 0);
      this.onChange(0, 0);
    };
    this.base.addEventListener("pointerup", end);
    this.base.addEventListener("pointercancel", end);
  }

  get active(): boolean {
    return this.pointerId !== null;
  }

  private handleMove(clientX: number, clientY: number): void {
    const [dx, dy] = clampDeflection(
      (clientX - this.centerX) / this.radius,
      (clientY - this.centerY) / this.radius,
    );
    this.moveKnob(dx * this.radius, dy * this.radius);
    this.onChange(dx, dy);
  }

  private moveKnob(px: number, py: number): void {
    this.knob.style.transform = `translate(calc(-50% + ${px}px), calc(-50% + ${py}px))`;
  }
}
