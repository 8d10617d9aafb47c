"""Synthetic center-out reach data: spike binning, velocity traces, and dataset IO.

Trials are generated from a classic cosine-tuning population model with Poisson
spike counts per 20 ms bin, which gives a known-decodable ground truth for the
decoder and encoder models.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

NEURONS = 192
BIN_MS = 20.0
BIN_S = BIN_MS / 1000.0
SAMPLE_HZ = 50.0

DEFAULT_DIRECTIONS = (0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0)

SPLITS = ("train", "validation", "test")

_HEADER_RE = re.compile(r"^jenkins-dataset v1 neurons=(\d+) bin_ms=(\d+)$")


class DatasetFormatError(ValueError):
    """Raised when a dataset file violates the documented text format."""


@dataclass(frozen=True)
class SpikeTrain:
    """Raw spike events of one neuron, timestamps in ms."""

    neuron_id: int
    spike_times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.spike_times, dtype=np.float64)
        object.__setattr__(self, "spike_times", times)
        if times.size and np.any(np.diff(times) < 0):
            raise ValueError("spike times must be non-decreasing")
        if times.size and times[0] < 0:
            raise ValueError("spike times must be >= 0")


@dataclass(frozen=True)
class BinnedTrial:
    """One trial: per-bin spike counts (T x 192) and hand velocity (T x 2, mm/s)."""

    counts: np.ndarray
    velocities: np.ndarray
    direction_deg: float
    trial_id: int
    bin_width_ms: float = BIN_MS

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int16)
        vel = np.ascontiguousarray(self.velocities, dtype=np.float64)
        if counts.ndim != 2 or vel.ndim != 2 or vel.shape[1] != 2:
            raise ValueError("counts must be T x N and velocities T x 2")
        if counts.shape[0] != vel.shape[0]:
            raise ValueError(
                f"counts has {counts.shape[0]} bins but velocities has {vel.shape[0]}"
            )
        if np.any(counts < 0):
            raise ValueError("spike counts must be non-negative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "velocities", vel)

    @property
    def num_bins(self) -> int:
        return self.counts.shape[0]

    @property
    def neuron_count(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class TuningModel:
    """Cosine-tuned population: rate_i = max(0, b_i + m_i * (v . u_i) / v_ref)."""

    baseline_hz: np.ndarray
    modulation_hz: np.ndarray
    preferred_rad: np.ndarray
    speed_scale: float

    def __post_init__(self):
        b = np.asarray(self.baseline_hz, dtype=np.float64)
        m = np.asarray(self.modulation_hz, dtype=np.float64)
        th = np.asarray(self.preferred_rad, dtype=np.float64)
        if not (b.shape == m.shape == th.shape) or b.ndim != 1:
            raise ValueError("tuning parameter arrays must share one 1-D shape")
        if np.any(b < 0):
            raise ValueError("baseline rates must be >= 0")
        if self.speed_scale <= 0:
            raise ValueError("speed_scale must be > 0")
        object.__setattr__(self, "baseline_hz", b)
        object.__setattr__(self, "modulation_hz", m)
        object.__setattr__(self, "preferred_rad", np.mod(th, 2 * np.pi))

    @property
    def neuron_count(self) -> int:
        return self.baseline_hz.shape[0]

    @classmethod
    def random(cls, seed: int, neuron_count: int = NEURONS,
               speed_scale: float | None = None) -> "TuningModel":
        """Draw per-neuron parameters: b ~ U[5, 25] Hz, m ~ U[10, 40] Hz, theta ~ U[0, 2pi)."""
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xC05)))
        if speed_scale is None:
            speed_scale = default_peak_speed()
        return cls(
            baseline_hz=rng.uniform(5.0, 25.0, neuron_count),
            modulation_hz=rng.uniform(10.0, 40.0, neuron_count),
            preferred_rad=rng.uniform(0.0, 2 * np.pi, neuron_count),
            speed_scale=float(speed_scale),
        )

    def rates_hz(self, velocities: np.ndarray) -> np.ndarray:
        """Firing rates (... x N, Hz) for velocities (... x 2, mm/s), clamped at 0."""
        v = np.asarray(velocities, dtype=np.float64)
        proj = v[..., 0, None] * np.cos(self.preferred_rad) \
            + v[..., 1, None] * np.sin(self.preferred_rad)
        rates = self.baseline_hz + self.modulation_hz * proj / self.speed_scale
        return np.maximum(rates, 0.0)


@dataclass(frozen=True)
class Dataset:
    """Binned trials plus a disjoint train/validation/test split assignment."""

    trials: tuple
    splits: tuple

    def __post_init__(self):
        trials = tuple(self.trials)
        splits = tuple(self.splits)
        if len(trials) != len(splits):
            raise ValueError("one split tag per trial required")
        for s in splits:
            if s not in SPLITS:
                raise ValueError(f"unknown split tag {s!r}")
        ids = [t.trial_id for t in trials]
        if len(set(ids)) != len(ids):
            raise ValueError("trial ids must be unique (splits must partition trials)")
        ncs = {t.neuron_count for t in trials}
        if len(ncs) > 1:
            raise ValueError(f"inconsistent neuron counts across trials: {sorted(ncs)}")
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "splits", splits)

    @property
    def neuron_count(self) -> int:
        return self.trials[0].neuron_count if self.trials else NEURONS

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [t for t, s in zip(self.trials, self.splits) if s == name]

    def mean_count_per_bin(self, split: str = "train") -> float:
        """Population mean spike count per neuron per bin over one split."""
        trials = self.split(split)
        if not trials:
            raise ValueError(f"split {split!r} is empty")
        total = sum(int(t.counts.sum()) for t in trials)
        cells = sum(t.counts.size for t in trials)
        return total / cells


def bin_spike_train(train: SpikeTrain, bin_width_ms: float, duration_ms: float) -> np.ndarray:
    """Count spikes per half-open bin [k*w, (k+1)*w); spikes at or past duration are dropped."""
    if duration_ms <= 0:
        raise ValueError("duration_ms must be > 0")
    if bin_width_ms <= 0:
        raise ValueError("bin_width_ms must be > 0")
    n_bins = int(np.ceil(duration_ms / bin_width_ms))
    times = train.spike_times
    kept = times[times < duration_ms]
    idx = np.floor(kept / bin_width_ms).astype(np.int64)
    return np.bincount(idx, minlength=n_bins).astype(np.int64)


def differentiate_positions(positions: np.ndarray, sample_hz: float = SAMPLE_HZ) -> np.ndarray:
    """Forward-difference velocities (mm/s) from positions sampled at 50 Hz."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ValueError("positions must be N x 2")
    if pos.shape[0] < 2:
        raise ValueError("insufficient samples: need at least 2 positions")
    return np.diff(pos, axis=0) * sample_hz


def min_jerk_speed(n_move: int, distance_mm: float) -> np.ndarray:
    """Minimum-jerk speed profile over n_move bins covering distance_mm."""
    if n_move < 1:
        raise ValueError("n_move must be >= 1")
    move_s = n_move * BIN_S
    # bin-center phase; speed(tau) = 30 * d / T * tau^2 (1 - tau)^2
    tau = (np.arange(n_move) + 0.5) / n_move
    return 30.0 * distance_mm / move_s * tau**2 * (1.0 - tau) ** 2


DEFAULT_REACH_MM = 80.0
DEFAULT_HOLD_BINS = 8
DEFAULT_DURATION_BINS = 60


def default_peak_speed(reach_mm: float = DEFAULT_REACH_MM,
                       duration_bins: int = DEFAULT_DURATION_BINS,
                       hold_bins: int = DEFAULT_HOLD_BINS) -> float:
    """Peak speed of the nominal reach profile; used as the tuning speed scale."""
    n_move = duration_bins - 2 * hold_bins
    return float(min_jerk_speed(n_move, reach_mm).max())


def reach_velocity_trace(direction_deg: float, duration_bins: int, rng: np.random.Generator,
                         reach_mm: float = DEFAULT_REACH_MM,
                         hold_bins: int = DEFAULT_HOLD_BINS,
                         reach_jitter: float = 0.1,
                         hold_jitter_bins: int = 3) -> np.ndarray:
    """Bell-shaped center-out velocity trace (T x 2): hold, minimum-jerk reach, hold.

    Reach amplitude and hold lengths are jittered per trial through rng so trials
    are not carbon copies; pass reach_jitter=0 and hold_jitter_bins=0 for the
    deterministic nominal profile.
    """
    if duration_bins < 40:
        raise ValueError("duration_bins must be >= 40")
    jit = int(rng.integers(-hold_jitter_bins, hold_jitter_bins + 1)) if hold_jitter_bins else 0
    pre = max(1, hold_bins + jit)
    post = max(1, hold_bins - jit)
    n_move = duration_bins - pre - post
    if n_move < 10:
        raise ValueError("trial too short for the reach profile")
    amplitude = reach_mm * (1.0 + reach_jitter * float(rng.uniform(-1.0, 1.0)))
    speed = min_jerk_speed(n_move, amplitude)
    theta = np.deg2rad(direction_deg)
    vel = np.zeros((duration_bins, 2))
    vel[pre:pre + n_move, 0] = speed * np.cos(theta)
    vel[pre:pre + n_move, 1] = speed * np.sin(theta)
    return vel


def generate_trial(tuning: TuningModel, direction_deg: float, duration_bins: int,
                   rng_seed, trial_id: int = 0,
                   allowed_directions: tuple | None = DEFAULT_DIRECTIONS,
                   reach_mm: float = DEFAULT_REACH_MM,
                   hold_bins: int = DEFAULT_HOLD_BINS,
                   reach_jitter: float = 0.1,
                   hold_jitter_bins: int = 3) -> BinnedTrial:
    """One synthetic trial: velocity trace plus Poisson counts from the tuning model.

    Deterministic given rng_seed (an int or SeedSequence). allowed_directions=None
    disables the radial-target check and accepts any finite angle.
    """
    if allowed_directions is not None and float(direction_deg) not in [float(d) for d in allowed_directions]:
        raise ValueError(f"unknown direction {direction_deg} (configured targets: {allowed_directions})")
    if not np.isfinite(direction_deg):
        raise ValueError("direction must be finite")
    rng = np.random.default_rng(rng_seed)
    vel = reach_velocity_trace(direction_deg, duration_bins, rng, reach_mm=reach_mm,
                               hold_bins=hold_bins, reach_jitter=reach_jitter,
                               hold_jitter_bins=hold_jitter_bins)
    mean_counts = tuning.rates_hz(vel) * BIN_S
    counts = rng.poisson(mean_counts).astype(np.int16)
    return BinnedTrial(counts=counts, velocities=vel, direction_deg=float(direction_deg),
                       trial_id=trial_id)


@dataclass(frozen=True)
class DatasetConfig:
    """Desk-scale synthetic dataset: 8 directions x 250 trials x 60 bins, split 80/10/10."""

    directions: tuple = DEFAULT_DIRECTIONS
    trials_per_direction: int = 250
    duration_bins: int = DEFAULT_DURATION_BINS
    seed: int = 0
    split_fractions: tuple = (0.8, 0.1, 0.1)
    reach_mm: float = DEFAULT_REACH_MM
    hold_bins: int = DEFAULT_HOLD_BINS
    reach_jitter: float = 0.1
    hold_jitter_bins: int = 3
    neuron_count: int = NEURONS

    @property
    def total_trials(self) -> int:
        return len(self.directions) * self.trials_per_direction


def make_dataset(config: DatasetConfig = DatasetConfig()) -> Dataset:
    """Generate the synthetic dataset; deterministic given config.seed.

    Split tags are assigned per trial within each direction so every split sees
    every direction. Trial seeds are spawned from one SeedSequence, so trials are
    independent and the loop could be parallelized without changing the output.
    """
    if abs(sum(config.split_fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    tuning = TuningModel.random(config.seed, config.neuron_count)
    n_dir = config.trials_per_direction
    n_train = int(round(config.split_fractions[0] * n_dir))
    n_val = int(round(config.split_fractions[1] * n_dir))
    seeds = np.random.SeedSequence((config.seed, 0xDA7A)).spawn(config.total_trials)
    trials, splits = [], []
    trial_id = 0
    for direction in config.directions:
        for k in range(n_dir):
            trials.append(generate_trial(
                tuning, direction, config.duration_bins, seeds[trial_id],
                trial_id=trial_id, allowed_directions=config.directions,
                reach_mm=config.reach_mm, hold_bins=config.hold_bins,
                reach_jitter=config.reach_jitter,
                hold_jitter_bins=config.hold_jitter_bins))
            splits.append("train" if k < n_train else
                          "validation" if k < n_train + n_val else "test")
            trial_id += 1
    return Dataset(trials=tuple(trials), splits=tuple(splits))


def dataset_tuning(config: DatasetConfig = DatasetConfig()) -> TuningModel:
    """The tuning model a dataset config generates from; the ground-truth oracle."""
    return TuningModel.random(config.seed, config.neuron_count)


# ---------------------------------------------------------------------------
# Text persistence
#
# Header: "jenkins-dataset v1 neurons=192 bin_ms=20"
# Then one line per bin:
#   trial_id,split,direction_deg,bin_index,c0,...,c191,vx,vy
# Bins of a trial are contiguous in ascending bin_index.
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, path) -> None:
    n = dataset.neuron_count
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"jenkins-dataset v1 neurons={n} bin_ms={int(BIN_MS)}\n")
        for trial, split in zip(dataset.trials, dataset.splits):
            prefix = f"{trial.trial_id},{split},{float(trial.direction_deg)!r}"
            for b in range(trial.num_bins):
                counts = ",".join(map(str, trial.counts[b].tolist()))
                vx, vy = trial.velocities[b]
                f.write(f"{prefix},{b},{counts},{float(vx)!r},{float(vy)!r}\n")


def _line_error(path, line_no: int, message: str) -> DatasetFormatError:
    return DatasetFormatError(f"{path}, line {line_no}: {message}")


def load_dataset(path) -> Dataset:
    """Load a dataset file; malformed input raises naming the offending line."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        m = _HEADER_RE.match(header)
        if not m:
            raise _line_error(path, 1, f"malformed header {header!r}")
        neurons = int(m.group(1))
        bin_ms = int(m.group(2))
        if bin_ms != int(BIN_MS):
            raise _line_error(path, 1, f"unsupported bin width {bin_ms} ms")
        body = f.read()

    n_fields = 4 + neurons + 2
    lines = body.splitlines()
    for i, line in enumerate(lines):
        if line.count(",") != n_fields - 1:
            raise _line_error(path, i + 2,
                              f"expected {n_fields} fields, got {line.count(',') + 1}")
    if not lines:
        return Dataset(trials=(), splits=())

    try:
        df = pd.read_csv(io.StringIO(body), header=None, na_filter=False,
                         float_precision="round_trip", low_memory=False)
        ids = df[0].to_numpy(dtype=np.int64)
        split_col = df[1].to_numpy(dtype=object)
        dirs = df[2].to_numpy(dtype=np.float64)
        bin_idx = df[3].to_numpy(dtype=np.int64)
        counts = df.iloc[:, 4:4 + neurons].to_numpy(dtype=np.int64)
        vels = df.iloc[:, 4 + neurons:].to_numpy(dtype=np.float64)
    except (ValueError, TypeError, pd.errors.ParserError):
        _scan_for_bad_line(path, lines, neurons)
        raise  # pragma: no cover - scan should have raised

    neg = np.argwhere(counts < 0)
    if neg.size:
        row = int(neg[0, 0])
        raise _line_error(path, row + 2, "negative spike count")
    for s in np.unique(split_col):
        if s not in SPLITS:
            row = int(np.argmax(split_col == s))
            raise _line_error(path, row + 2, f"unknown split tag {s!r}")

    # trial blocks: contiguous runs of one trial_id, bin_index 0..T-1 ascending
    boundaries = np.flatnonzero(np.diff(ids) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(ids)]))
    trials, splits = [], []
    seen = set()
    for s0, s1 in zip(starts, ends):
        tid = int(ids[s0])
        if tid in seen:
            raise _line_error(path, int(s0) + 2,
                              f"bins of trial {tid} are not contiguous")
        seen.add(tid)
        expected = np.arange(s1 - s0)
        if not np.array_equal(bin_idx[s0:s1], expected):
            bad = s0 + int(np.argmax(bin_idx[s0:s1] != expected))
            raise _line_error(path, bad + 2, "bin_index not ascending from 0")
        if len(set(split_col[s0:s1])) != 1 or len(np.unique(dirs[s0:s1])) != 1:
            raise _line_error(path, int(s0) + 2,
                              f"inconsistent split or direction within trial {tid}")
        trials.append(BinnedTrial(counts=counts[s0:s1], velocities=vels[s0:s1],
                                  direction_deg=float(dirs[s0]), trial_id=tid))
        splits.append(str(split_col[s0]))
    return Dataset(trials=tuple(trials), splits=tuple(splits))


def _scan_for_bad_line(path, lines, neurons: int) -> None:
    """Slow-path scan to name the first malformed line after pandas fails."""
    for i, line in enumerate(lines):
        parts = line.split(",")
        try:
            int(parts[0])
            float(parts[2])
            int(parts[3])
            for p in parts[4:4 + neurons]:
                int(p)
            float(parts[-2])
            float(parts[-1])
        except ValueError:
            raise _line_error(path, i + 2, f"unparseable field in {line[:60]!r}...")
    raise DatasetFormatError(f"{path}: malformed data")
