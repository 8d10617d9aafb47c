import { helloMessage, parseServerFrame, velMessage, ReadyFrame } from "./protocol.js";
import { DEFAULT_GAIN_MM_S, VelocitySampler } from "./sampler.js";
import { Joystick } from "./joystick.js";
import { SpikeRaster } from "./raster.js";
import { ArmTrace, JointGeometry, linkagePoints } from "./armview.js";

const STALE_AFTER_MS = 500;

interface ChainManifest {
  joints: JointGeometry[];
  reach_mm: number;
  workspace_mm: [number, number];
}

function queryParam(name: string): string | null {
  return new URLSearchParams(window.location.search).get(name);
}

function element<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing #${id}`);
  }
  return el as T;
}

class ConsoleApp {
  private socket: WebSocket | null = null;
  private raster: SpikeRaster | null = null;
  private trace = new ArmTrace();
  private chain: ChainManifest | null = null;
  private sampler: VelocitySampler;
  private lastFrameMs = 0;
  private framesDropped = 0;

  private status = element<HTMLSpanElement>("status");
  private stale = element<HTMLSpanElement>("stale");
  private rasterCanvas = element<HTMLCanvasElement>("raster");
  private armCanvas = element<HTMLCanvasElement>("arm");
  private offscreen = document.createElement("canvas");

  constructor(
    private readonly host: string,
    private readonly port: string,
    gain: number,
  ) {
    this.sampler = new VelocitySampler((s) => this.send(s.vx, s.vy), gain);
    new Joystick(element<HTMLDivElement>("joystick"), (dx, dy) => {
      // canvas y grows downward, arm y grows upward
      this.sampler.setDeflection(dx, -dy);
    });
  }

  run(): void {
    this.setStatus("connecting…");
    fetch(`http://${this.host}:${this.port}/model/info`)
      .then((r) => r.json())
      .then((info) => { this.chain = info.chain ?? null; })
      .catch(() => { this.chain = null; });

    const socket = new WebSocket(`ws://${this.host}:${this.port}/ws`);
    this.socket = socket;
    socket.onopen = () => socket.send(helloMessage());
    socket.onmessage = (event) => this.handleMessage(String(event.data));
    socket.onclose = () => {
      this.sampler.stop();
      this.setStatus("disconnected");
    };
    socket.onerror = () => this.setStatus("connection error");

    requestAnimationFrame(() => this.drawLoop());
  }

  /* Socket callbacks only mutate the buffers; all drawing happens in the
   * animation-frame loop. */
  private handleMessage(raw: string): void {
    const frame = parseServerFrame(raw);
    if (frame === null) {
      console.warn("dropped unparseable frame", raw);
      return;
    }
    switch (frame.type) {
      case "ready":
        this.startSession(frame);
        break;
      case "spikes":
        this.raster?.push(frame);
        this.lastFrameMs = performance.now();
        if (frame.dropped !== undefined) {
          this.framesDropped = frame.dropped;
        }
        break;
      case "arm":
        this.trace.push(frame);
        this.lastFrameMs = performance.now();
        break;
      case "error":
        console.warn("service error:", frame.msg);
        this.setStatus(`service error: ${frame.msg}`);
        break;
    }
  }

  private startSession(ready: ReadyFrame): void {
    this.raster = new SpikeRaster(ready.neurons);
    this.offscreen.width = this.raster.bins;
    this.offscreen.height = this.raster.neurons;
    this.lastFrameMs = performance.now();
    this.sampler.start();
    this.setStatus(`live: ${ready.neurons} neurons @ ${1000 / ready.bin_ms} Hz, `
      + `gain ${this.sampler.gain} mm/s`);
  }

  private send(vx: number, vy: number): void {
    if (this.socket && this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(velMessage(vx, vy));
    }
  }

  private setStatus(text: string): void {
    this.status.textContent = text;
  }

  private drawLoop(): void {
    this.drawRaster();
    this.drawArm();
    const stale = this.raster !== null
      && performance.now() - this.lastFrameMs > STALE_AFTER_MS;
    this.stale.style.visibility = stale ? "visible" : "hidden";
    if (this.framesDropped > 0) {
      this.stale.textContent = `stale (${this.framesDropped} dropped)`;
    }
    requestAnimationFrame(() => this.drawLoop());
  }

  private drawRaster(): void {
    const ctx = this.rasterCanvas.getContext("2d");
    if (!ctx || !this.raster) {
      return;
    }
    const off = this.offscreen.getContext("2d");
    if (!off) {
      return;
    }
    off.clearRect(0, 0, this.offscreen.width, this.offscreen.height);
    const image = off.createImageData(this.raster.bins, this.raster.neurons);
    image.data.set(this.raster.renderPixels());
    off.putImageData(image, 0, 0);
    ctx.fillStyle = "#0b0e12";
    ctx.fillRect(0, 0, this.rasterCanvas.width, this.rasterCanvas.height);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(this.offscreen, 0, 0, this.rasterCanvas.width, this.rasterCanvas.height);
  }

  private drawArm(): void {
    const ctx = this.armCanvas.getContext("2d");
    if (!ctx) {
      return;
    }
    const w = this.armCanvas.width;
    const h = this.armCanvas.height;
    ctx.fillStyle = "#0b0e12";
    ctx.fillRect(0, 0, w, h);

    const reach = this.chain ? this.chain.workspace_mm[1] : 340;
    const scale = (Math.min(w, h) / 2 - 12) / reach;
    const toCanvas = (x: number, y: number): [number, number] =>
      [w / 2 + x * scale, h / 2 - y * scale];

    if (this.chain) {
      ctx.strokeStyle = "#263242";
      ctx.lineWidth = 1;
      for (const r of this.chain.workspace_mm) {
        ctx.beginPath();
        ctx.arc(w / 2, h / 2, r * scale, 0, 2 * Math.PI);
        ctx.stroke();
      }
    }

    const points = this.trace.points();
    if (points.length > 1) {
      ctx.strokeStyle = "#3fa7ff";
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      points.forEach((p, i) => {
        const [cx, cy] = toCanvas(p.x, p.y);
        if (i === 0) {
          ctx.moveTo(cx, cy);
        } else {
          ctx.lineTo(cx, cy);
        }
      });
      ctx.stroke();
    }

    const latest = this.trace.latest();
    if (latest && this.chain && this.chain.joints.length === latest.angles.length) {
      const linkage = linkagePoints(this.chain.joints, latest.angles);
      ctx.strokeStyle = "#e8eef5";
      ctx.lineWidth = 3;
      ctx.beginPath();
      linkage.forEach(([x, y], i) => {
        const [cx, cy] = toCanvas(x, y);
        if (i === 0) {
          ctx.moveTo(cx, cy);
        } else {
          ctx.lineTo(cx, cy);
        }
      });
      ctx.stroke();
      const [ex, ey] = toCanvas(latest.x, latest.y);
      ctx.fillStyle = "#ffb347";
      ctx.beginPath();
      ctx.arc(ex, ey, 4, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}

const host = queryParam("host") ?? window.location.hostname;
const port = queryParam("port") ?? (window.location.port || "8000");
const gain = Number(queryParam("gain") ?? DEFAULT_GAIN_MM_S);
new ConsoleApp(host, port, gain > 0 ? gain : DEFAULT_GAIN_MM_S).run();
