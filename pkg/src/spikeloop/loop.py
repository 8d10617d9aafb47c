"""Pipeline orchestration.

Open-loop decoding runs spikes -> velocity -> integrated position -> IK.
The full loop starts one step earlier: leader velocities drive the spike
generator, the decoder reads only those synthetic counts, and the follower
arm tracks whatever comes out. Fidelity is scored by per-component velocity
correlation, trajectory RMSE against the leader run through the same decay
filter, and a population-rate stability band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BIN_S
from .decoder import DecoderModel, predict_velocity
from .encoder import EncoderModel, GenerationState, advance_generation, lookahead_window
from .kinematics import (
    DEFAULT_DECAY,
    ArmState,
    IKError,
    KinematicChain,
    clamp_to_workspace,
    integrate_trace,
    integrate_velocity,
    inverse_kinematics,
)

# rest point of the decay filter: center of the center-out task, placed inside
# the chain's reachable annulus with margin for 80 mm reaches in any direction
DEFAULT_ANCHOR_MM = (220.0, 0.0)

STABILITY_BAND = 3.0
STABILITY_MIN_FRACTION = 0.95


@dataclass(frozen=True)
class LoopConfig:
    """Frozen models plus the shared per-bin constants of one session."""

    decoder: DecoderModel
    encoder: EncoderModel
    chain: KinematicChain
    decay: float = DEFAULT_DECAY
    dt: float = BIN_S
    anchor: tuple = DEFAULT_ANCHOR_MM
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.dt != BIN_S:
            raise ValueError(f"bin width is fixed at {BIN_S} s, got {self.dt}")
        if self.decoder.config.neuron_count != self.encoder.config.neuron_count:
            raise ValueError(
                f"decoder expects {self.decoder.config.neuron_count} neurons, "
                f"encoder emits {self.encoder.config.neuron_count}")


@dataclass
class SessionState:
    """Sub-states of one live session; all advance together, one bin at a time."""

    generation: GenerationState
    decode_window: np.ndarray
    arm: ArmState
    bin_index: int = 0

    @classmethod
    def create(cls, config: LoopConfig) -> "SessionState":
        dec_cfg = config.decoder.config
        anchor = np.asarray(config.anchor, dtype=np.float64)
        return cls(
            generation=GenerationState.create(config.encoder, config.seed),
            decode_window=np.zeros((dec_cfg.window_bins, dec_cfg.neuron_count)),
            arm=ArmState(position=anchor, anchor=anchor, decay=config.decay,
                         dt=config.dt),
        )


@dataclass(frozen=True)
class LoopFrame:
    """Everything one bin produces."""

    bin_index: int
    counts: np.ndarray
    decoded_velocity: np.ndarray
    position: np.ndarray
    angles: np.ndarray


def _decode_next(decoder: DecoderModel, window: np.ndarray, counts) -> np.ndarray:
    window[:-1] = window[1:]
    window[-1] = counts
    return predict_velocity(decoder, window.reshape(-1))


def _track_target(chain: KinematicChain, arm: ArmState, bin_index: int):
    """Clamp the filter position into the workspace and solve IK, warm-started."""
    target = clamp_to_workspace(chain, arm.position)
    try:
        angles = inverse_kinematics(chain, target, arm.angles)
    except IKError as e:
        raise IKError(f"bin {bin_index}: {e}", best_angles=e.best_angles,
                      residual_mm=e.residual_mm) from e
    arm.angles = angles
    return target[:2].copy(), angles


def loop_step(config: LoopConfig, session: SessionState,
              future_velocities: np.ndarray) -> LoopFrame:
    """Advance one bin: sample spikes, decode them, move the arm.

    future_velocities is the leader's plan v_t..v_{t+F-1}; its first row is
    the velocity executed this bin.
    """
    t = session.bin_index
    counts = advance_generation(config.encoder, session.generation,
                                future_velocities, config.temperature)
    v_dec = _decode_next(config.decoder, session.decode_window, counts)
    integrate_velocity(session.arm, v_dec)
    position, angles = _track_target(config.chain, session.arm, t)
    session.bin_index = t + 1
    return LoopFrame(bin_index=t, counts=counts, decoded_velocity=v_dec,
                     position=position, angles=angles)


# ---------------------------------------------------------------- pipelines


@dataclass(frozen=True)
class OpenLoopResult:
    trajectory: np.ndarray
    angles: np.ndarray
    velocities: np.ndarray


def run_open_loop_decode(decoder: DecoderModel, chain: KinematicChain,
                         spike_bins: np.ndarray, *,
                         anchor=DEFAULT_ANCHOR_MM, decay: float = DEFAULT_DECAY,
                         dt: float = BIN_S) -> OpenLoopResult:
    """Spike counts (T x neurons) -> follower trajectory (T x 2) and angles (T x 6)."""
    spikes = np.asarray(spike_bins, dtype=np.float64)
    n = decoder.config.neuron_count
    if spikes.ndim != 2 or spikes.shape[1] != n:
        raise ValueError(f"spike bins must be T x {n}, got {spikes.shape}")
    if not np.all(np.isfinite(spikes)) or np.any(spikes < 0):
        raise ValueError("spike counts must be finite and non-negative")
    anchor = np.asarray(anchor, dtype=np.float64)
    window = np.zeros((decoder.config.window_bins, n))
    arm = ArmState(position=anchor, anchor=anchor, decay=decay, dt=dt)
    steps = spikes.shape[0]
    trajectory = np.empty((steps, 2))
    angles = np.empty((steps, 6))
    velocities = np.empty((steps, 2))
    for t in range(steps):
        velocities[t] = _decode_next(decoder, window, spikes[t])
        integrate_velocity(arm, velocities[t])
        trajectory[t], angles[t] = _track_target(chain, arm, t)
    return OpenLoopResult(trajectory=trajectory, angles=angles,
                          velocities=velocities)


@dataclass(frozen=True)
class FullLoopResult:
    spikes: np.ndarray
    decoded_velocities: np.ndarray
    trajectory: np.ndarray
    angles: np.ndarray


def run_full_loop(config: LoopConfig, leader_velocities: np.ndarray) -> FullLoopResult:
    """Leader velocities (T x 2) -> synthetic spikes, decoded velocities, arm pose."""
    leader = np.asarray(leader_velocities, dtype=np.float64)
    if leader.ndim != 2 or leader.shape[1] != 2:
        raise ValueError("leader velocities must be T x 2")
    if leader.shape[0] < 1:
        raise ValueError("leader trace must have at least one bin")
    if not np.all(np.isfinite(leader)):
        raise ValueError("leader velocities must be finite")
    session = SessionState.create(config)
    f = config.encoder.config.lookahead_bins
    steps = leader.shape[0]
    spikes = np.empty((steps, config.encoder.config.neuron_count), dtype=np.int16)
    decoded = np.empty((steps, 2))
    trajectory = np.empty((steps, 2))
    angles = np.empty((steps, 6))
    for t in range(steps):
        frame = loop_step(config, session, lookahead_window(leader, t, f))
        spikes[t] = frame.counts
        decoded[t] = frame.decoded_velocity
        trajectory[t] = frame.position
        angles[t] = frame.angles
    return FullLoopResult(spikes=spikes, decoded_velocities=decoded,
                          trajectory=trajectory, angles=angles)


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class LoopMetrics:
    velocity_correlation: np.ndarray
    trajectory_rmse_mm: float
    rate_trace: np.ndarray
    stability_fraction: float
    stable: bool
    degenerate_correlation: bool


def _component_correlation(x: np.ndarray, y: np.ndarray):
    """Pearson r; a constant series on either side is degenerate, scored 0."""
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return 0.0, True
    r = np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy)
    return float(np.clip(r, -1.0, 1.0)), False


def evaluate_loop(leader_velocities: np.ndarray, result: FullLoopResult, *,
                  reference_rate: float, anchor=DEFAULT_ANCHOR_MM,
                  decay: float = DEFAULT_DECAY, dt: float = BIN_S) -> LoopMetrics:
    """Score a full-loop run against its leader trace.

    reference_rate is the training corpus' mean count per neuron per bin; the
    stability band is [ref/3, 3*ref] and the run is stable when at least 95%
    of bins stay inside it.
    """
    leader = np.asarray(leader_velocities, dtype=np.float64)
    t = leader.shape[0]
    if result.decoded_velocities.shape[0] != t or result.spikes.shape[0] != t \
            or result.trajectory.shape[0] != t:
        raise ValueError(
            f"length mismatch: leader has {t} bins, outputs have "
            f"{result.decoded_velocities.shape[0]}/{result.spikes.shape[0]}"
            f"/{result.trajectory.shape[0]}")
    if reference_rate <= 0:
        raise ValueError("reference_rate must be positive")

    corr = np.empty(2)
    degenerate = False
    for c in range(2):
        corr[c], bad = _component_correlation(leader[:, c],
                                              result.decoded_velocities[:, c])
        degenerate = degenerate or bad

    leader_traj = integrate_trace(leader, anchor, decay=decay, dt=dt)
    err = leader_traj - result.trajectory
    rmse = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))

    rate_trace = result.spikes.mean(axis=1)
    lo, hi = reference_rate / STABILITY_BAND, reference_rate * STABILITY_BAND
    fraction = float(np.mean((rate_trace >= lo) & (rate_trace <= hi)))
    return LoopMetrics(velocity_correlation=corr, trajectory_rmse_mm=rmse,
                       rate_trace=rate_trace, stability_fraction=fraction,
                       stable=fraction >= STABILITY_MIN_FRACTION,
                       degenerate_correlation=degenerate)


def metrics_summary(metrics: LoopMetrics) -> str:
    """key = value block for batch runs."""
    lines = [
        f"velocity_corr_x = {metrics.velocity_correlation[0]:.6f}",
        f"velocity_corr_y = {metrics.velocity_correlation[1]:.6f}",
        f"trajectory_rmse_mm = {metrics.trajectory_rmse_mm:.6f}",
        f"mean_rate_per_bin = {metrics.rate_trace.mean():.6f}",
        f"stability_fraction = {metrics.stability_fraction:.6f}",
        f"stable = {str(metrics.stable).lower()}",
        f"degenerate_correlation = {str(metrics.degenerate_correlation).lower()}",
    ]
    return "\n".join(lines) + "\n"
