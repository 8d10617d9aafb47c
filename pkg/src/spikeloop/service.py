"""Streaming service: one live encode/decode session per socket connection.

The client drives the loop: each velocity message advances exactly one bin
and yields one spikes frame and one arm frame, in order. When the client goes
quiet for longer than a short grace period, the session self-advances on zero
velocity at the bin cadence so the arm visibly decays toward its anchor.
Frames queue through a bounded buffer that drops oldest-first under
backpressure and reports how many were lost.
"""

from __future__ import annotations

import asyncio
import json
import math
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse
from fastapi.staticfiles import StaticFiles

from .data import BIN_MS, BIN_S
from .decoder import load_decoder
from .encoder import load_encoder
from .kinematics import DEFAULT_DECAY, KinematicChain, load_chain, workspace_annulus
from .loop import LoopConfig, SessionState, loop_step
from .weights import load_weights

PROTOCOL_VERSION = 1
IDLE_GRACE_S = 0.25
QUEUE_CAPACITY = 256


class FrameQueue:
    """Bounded egress buffer: oldest frames go first when capacity is hit."""

    def __init__(self, capacity: int = QUEUE_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._frames = deque()
        self.dropped = 0

    def __len__(self) -> int:
        return len(self._frames)

    def push(self, frame: dict) -> None:
        if len(self._frames) >= self.capacity:
            self._frames.popleft()
            self.dropped += 1
        self._frames.append(frame)

    def drain(self) -> list:
        """Pop everything, stamping the cumulative drop counter once any loss occurred."""
        out = list(self._frames)
        self._frames.clear()
        if self.dropped:
            for frame in out:
                frame["dropped"] = self.dropped
        return out


@dataclass
class ServiceSession:
    session_id: str
    config: LoopConfig
    state: SessionState
    ingress: deque = field(default_factory=deque)
    egress: FrameQueue = field(default_factory=FrameQueue)
    last_input_s: float = field(default_factory=time.monotonic)
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)


class ServiceRuntime:
    """Frozen models plus per-session defaults, shared by all connections."""

    def __init__(self, decoder, encoder, chain: KinematicChain, *,
                 decay: float = DEFAULT_DECAY, temperature: float = 1.0,
                 manifests: dict | None = None, idle_grace_s: float = IDLE_GRACE_S):
        self.decoder = decoder
        self.encoder = encoder
        self.chain = chain
        self.decay = decay
        self.temperature = temperature
        self.idle_grace_s = idle_grace_s
        self.manifests = manifests or {}
        self._session_counter = 0

    @classmethod
    def load(cls, decoder_path, encoder_path, chain_path=None, *,
             decay: float = DEFAULT_DECAY, temperature: float = 1.0,
             idle_grace_s: float = IDLE_GRACE_S) -> "ServiceRuntime":
        decoder = load_decoder(decoder_path)
        encoder = load_encoder(encoder_path)
        chain = load_chain(chain_path) if chain_path else KinematicChain.default()
        manifests = {
            "decoder": load_weights(decoder_path)[0],
            "encoder": load_weights(encoder_path)[0],
            "chain": chain_info(chain),
        }
        return cls(decoder, encoder, chain, decay=decay, temperature=temperature,
                   manifests=manifests, idle_grace_s=idle_grace_s)

    def open_session(self, seed) -> ServiceSession:
        if seed is None:
            seed = self._session_counter
            self._session_counter += 1
        config = LoopConfig(decoder=self.decoder, encoder=self.encoder,
                            chain=self.chain, decay=self.decay,
                            temperature=self.temperature, seed=int(seed))
        return ServiceSession(session_id=uuid.uuid4().hex[:12], config=config,
                              state=SessionState.create(config))


def chain_info(chain: KinematicChain) -> dict:
    # per-joint geometry included so a client can place the linkage from angles
    r_min, r_max = workspace_annulus(chain)
    return {"joints": [{"axis": j.axis.tolist(), "offset_mm": j.offset.tolist()}
                       for j in chain.joints],
            "reach_mm": chain.reach_mm, "workspace_mm": [r_min, r_max]}


def _advance(session: ServiceSession, velocity) -> None:
    """One bin of the loop; spikes and arm frames land on the egress queue."""
    f = session.config.encoder.config.lookahead_bins
    future = np.tile(np.asarray(velocity, dtype=np.float64), (f, 1))
    frame = loop_step(session.config, session.state, future)
    session.egress.push({"type": "spikes", "bin": frame.bin_index,
                         "counts": frame.counts.tolist()})
    session.egress.push({"type": "arm", "bin": frame.bin_index,
                         "x": float(frame.position[0]),
                         "y": float(frame.position[1]),
                         "angles": frame.angles.tolist()})


def _parse_velocity(msg: dict):
    vx, vy = msg.get("vx"), msg.get("vy")
    for name, v in (("vx", vx), ("vy", vy)):
        if not isinstance(v, (int, float)) or isinstance(v, bool) \
                or not math.isfinite(v):
            raise ValueError(f"{name} must be a finite number")
    return float(vx), float(vy)


async def _send_pending(ws: WebSocket, session: ServiceSession) -> None:
    for frame in session.egress.drain():
        await ws.send_json(frame)


async def _idle_fill(ws: WebSocket, session: ServiceSession, grace_s: float) -> None:
    """Self-advance on zero velocity while the client is silent."""
    try:
        while True:
            await asyncio.sleep(BIN_S)
            async with session.lock:
                if time.monotonic() - session.last_input_s <= grace_s:
                    continue
                _advance(session, (0.0, 0.0))
                await _send_pending(ws, session)
    except asyncio.CancelledError:
        pass


async def _run_session(ws: WebSocket, runtime: ServiceRuntime) -> None:
    await ws.accept()
    try:
        raw = await ws.receive_text()
    except WebSocketDisconnect:
        return
    try:
        hello = json.loads(raw)
    except json.JSONDecodeError:
        hello = None
    if not isinstance(hello, dict) or hello.get("type") != "hello" \
            or hello.get("version") != PROTOCOL_VERSION:
        await ws.close(code=1008, reason="expected hello with version 1")
        return

    session = runtime.open_session(hello.get("seed"))
    await ws.send_json({"type": "ready",
                        "neurons": session.config.encoder.config.neuron_count,
                        "bin_ms": BIN_MS})
    filler = asyncio.create_task(_idle_fill(ws, session, runtime.idle_grace_s))
    try:
        while True:
            raw = await ws.receive_text()
            async with session.lock:
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError as e:
                    await ws.send_json({"type": "error", "msg": f"bad JSON: {e}"})
                    continue
                if not isinstance(msg, dict):
                    await ws.send_json({"type": "error",
                                        "msg": "message must be a JSON object"})
                    continue
                kind = msg.get("type")
                if kind == "vel":
                    try:
                        velocity = _parse_velocity(msg)
                    except ValueError as e:
                        await ws.send_json({"type": "error", "msg": str(e)})
                        continue
                    session.ingress.append(velocity)
                    while session.ingress:
                        _advance(session, session.ingress.popleft())
                    session.last_input_s = time.monotonic()
                    await _send_pending(ws, session)
                else:
                    await ws.send_json({"type": "error",
                                        "msg": f"unknown message type {kind!r}"})
    except WebSocketDisconnect:
        pass
    finally:
        filler.cancel()


def create_app(runtime: ServiceRuntime, frontend_dir=None) -> FastAPI:
    app = FastAPI(title="spikeloop service")

    @app.get("/health", response_class=PlainTextResponse)
    async def health() -> str:
        return "ok"

    @app.get("/model/info")
    async def model_info() -> dict:
        return runtime.manifests

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await _run_session(ws, runtime)

    static = Path(frontend_dir) if frontend_dir else None
    if static and static.is_dir():
        app.mount("/", StaticFiles(directory=static, html=True), name="console")
    return app
