"""Windowed MLP velocity decoder: 50 bins of population spike counts in, one
instantaneous 2-D hand velocity out.

Inputs are standardized per feature with statistics frozen from the training
split; the statistics travel with the model so streaming prediction sees the
same transform. Training is plain minibatch Adam on MSE with epoch-best model
selection by validation loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import NEURONS, BinnedTrial, Dataset
from .nn import (
    AdamState,
    DenseLayer,
    adam_step,
    dense_backward,
    dense_forward,
    mse_loss,
)
from .weights import DECODER_KIND, load_weights, save_weights

OUTPUT_DIM = 2


@dataclass(frozen=True)
class DecoderConfig:
    window_bins: int = 50
    hidden_sizes: tuple = (256, 128)
    neuron_count: int = NEURONS
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.window_bins < 1:
            raise ValueError("window_bins must be >= 1")
        if any(h <= 0 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))

    @property
    def input_dim(self) -> int:
        return self.window_bins * self.neuron_count

    def to_dict(self) -> dict:
        return {
            "window_bins": self.window_bins,
            "hidden_sizes": list(self.hidden_sizes),
            "neuron_count": self.neuron_count,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class WindowedSample:
    """Flattened count window, oldest bin first, with its target velocity."""

    window: np.ndarray
    target: np.ndarray


class DecoderModel:
    def __init__(self, layers, config: DecoderConfig, norm_mean: np.ndarray,
                 norm_scale: np.ndarray):
        dims = [config.input_dim, *config.hidden_sizes, OUTPUT_DIM]
        if len(layers) != len(dims) - 1:
            raise ValueError(f"expected {len(dims) - 1} layers, got {len(layers)}")
        for layer, d_in, d_out in zip(layers, dims[:-1], dims[1:]):
            if layer.weight.shape != (d_out, d_in):
                raise ValueError(f"layer shape {layer.weight.shape} does not match "
                                 f"config ({d_out}, {d_in})")
        norm_mean = np.asarray(norm_mean, dtype=np.float64)
        norm_scale = np.asarray(norm_scale, dtype=np.float64)
        if norm_mean.shape != (config.input_dim,) or norm_scale.shape != (config.input_dim,):
            raise ValueError("normalization statistics must match input_dim")
        if not (np.all(np.isfinite(norm_mean)) and np.all(np.isfinite(norm_scale))):
            raise ValueError("normalization statistics must be finite")
        if np.any(norm_scale <= 0):
            raise ValueError("normalization scale must be > 0")
        self.layers = list(layers)
        self.config = config
        self.norm_mean = norm_mean
        self.norm_scale = norm_scale

    @classmethod
    def init(cls, config: DecoderConfig, rng: np.random.Generator,
             norm_mean: np.ndarray, norm_scale: np.ndarray) -> "DecoderModel":
        dims = [config.input_dim, *config.hidden_sizes, OUTPUT_DIM]
        acts = ["relu"] * len(config.hidden_sizes) + ["identity"]
        layers = [DenseLayer.create(rng, d_in, d_out, act)
                  for d_in, d_out, act in zip(dims[:-1], dims[1:], acts)]
        return cls(layers, config, norm_mean, norm_scale)

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.weight"] = layer.weight
            out[f"layer{i}.bias"] = layer.bias
        return out

    def normalize(self, windows: np.ndarray) -> np.ndarray:
        return (windows.astype(np.float64) - self.norm_mean) / self.norm_scale

    def forward(self, windows: np.ndarray):
        """Batched prediction (N x input_dim) -> (N x 2, caches)."""
        x = self.normalize(windows)
        caches = []
        for layer in self.layers:
            x, cache = dense_forward(layer, x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dy: np.ndarray) -> dict:
        grads = {}
        for i in reversed(range(len(self.layers))):
            dy, layer_grads = dense_backward(self.layers[i], caches[i], dy)
            grads[f"layer{i}.weight"] = layer_grads["weight"]
            grads[f"layer{i}.bias"] = layer_grads["bias"]
        return grads

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.parameters().items()}

    def restore(self, snap: dict) -> None:
        for name, param in self.parameters().items():
            param[...] = snap[name]


def assemble_windows(trial: BinnedTrial, mode: str = "train",
                     window_bins: int = 50) -> list:
    """Windowed samples for one trial.

    Train mode keeps only bins with full history (t from window-1 to T-1);
    stream mode yields one sample for every bin, zero-padding missing history
    on the old side so a live session can decode from its first bin.
    """
    if mode not in ("train", "stream"):
        raise ValueError(f"mode must be 'train' or 'stream', got {mode!r}")
    w = window_bins
    counts = trial.counts
    t_count, neurons = counts.shape
    samples = []
    start = w - 1 if mode == "train" else 0
    for t in range(start, t_count):
        if t >= w - 1:
            window = counts[t - w + 1:t + 1]
        else:
            window = np.vstack([np.zeros((w - 1 - t, neurons), dtype=counts.dtype),
                                counts[:t + 1]])
        samples.append(WindowedSample(window=window.reshape(-1).copy(),
                                      target=trial.velocities[t].copy()))
    return samples


def _window_matrix(trials, window_bins: int):
    """All full-history windows of many trials as one (N, w*192) int16 matrix."""
    from numpy.lib.stride_tricks import sliding_window_view

    blocks, targets = [], []
    for trial in trials:
        t_count = trial.num_bins
        if t_count < window_bins:
            continue
        view = sliding_window_view(trial.counts, window_bins, axis=0)
        # view is (T-w+1, neurons, w); put bins before neurons, oldest first
        blocks.append(view.transpose(0, 2, 1).reshape(view.shape[0], -1))
        targets.append(trial.velocities[window_bins - 1:])
    if not blocks:
        raise ValueError(f"no trial is at least {window_bins} bins long")
    return np.ascontiguousarray(np.concatenate(blocks)), np.concatenate(targets)


def _feature_stats(windows: np.ndarray, chunk: int = 4096):
    """Per-feature mean and std (floored) accumulated in float64 chunks."""
    n, d = windows.shape
    total = np.zeros(d)
    total_sq = np.zeros(d)
    for i in range(0, n, chunk):
        x = windows[i:i + chunk].astype(np.float64)
        total += x.sum(axis=0)
        total_sq += (x * x).sum(axis=0)
    mean = total / n
    var = np.maximum(total_sq / n - mean * mean, 0.0)
    return mean, np.maximum(np.sqrt(var), 1e-6)


@dataclass(frozen=True)
class TrainingHistory:
    train_loss: np.ndarray
    val_loss: np.ndarray
    best_epoch: int
    seconds: float


def train_decoder(dataset: Dataset, config: DecoderConfig = DecoderConfig(),
                  log=None):
    """Fit the MLP; returns (best-validation model, TrainingHistory)."""
    started = time.monotonic()
    train_trials = dataset.split("train")
    val_trials = dataset.split("validation")
    if not train_trials or not val_trials:
        raise ValueError("dataset needs non-empty train and validation splits")

    x_train, y_train = _window_matrix(train_trials, config.window_bins)
    x_val, y_val = _window_matrix(val_trials, config.window_bins)
    mean, scale = _feature_stats(x_train)

    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xDEC0)))
    model = DecoderModel.init(config, rng, mean, scale)
    adam = AdamState(lr=config.lr)
    params = model.parameters()

    n = x_train.shape[0]
    train_losses, val_losses = [], []
    best_val, best_snap, best_epoch = np.inf, model.snapshot(), 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            pred, caches = model.forward(x_train[idx])
            loss, dy = mse_loss(pred, y_train[idx])
            grads = model.backward(caches, dy)
            adam_step(adam, params, grads)
            epoch_loss += loss * idx.size
        train_losses.append(epoch_loss / n)
        val_losses.append(evaluate_mse(model, x_val, y_val))
        if val_losses[-1] < best_val:
            best_val, best_snap, best_epoch = val_losses[-1], model.snapshot(), epoch
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} "
                f"train_mse {train_losses[-1]:.3f} val_mse {val_losses[-1]:.3f}")
    model.restore(best_snap)
    history = TrainingHistory(train_loss=np.array(train_losses),
                              val_loss=np.array(val_losses),
                              best_epoch=best_epoch,
                              seconds=time.monotonic() - started)
    return model, history


def evaluate_mse(model: DecoderModel, windows: np.ndarray, targets: np.ndarray,
                 batch: int = 1024) -> float:
    total = 0.0
    for lo in range(0, windows.shape[0], batch):
        pred, _ = model.forward(windows[lo:lo + batch])
        loss, _ = mse_loss(pred, targets[lo:lo + batch])
        total += loss * pred.shape[0]
    return total / windows.shape[0]


def predict_velocity(model: DecoderModel, window: np.ndarray) -> np.ndarray:
    """One flattened window -> (vx, vy) mm/s."""
    window = np.asarray(window)
    if window.shape != (model.config.input_dim,):
        raise ValueError(f"window must have length {model.config.input_dim}, "
                         f"got shape {window.shape}")
    out, _ = model.forward(window[None])
    return out[0]


@dataclass(frozen=True)
class R2Score:
    per_component: np.ndarray
    mean: float


def r_squared(predictions: np.ndarray, targets: np.ndarray) -> R2Score:
    """Coefficient of determination per velocity component plus the average."""
    pred = np.asarray(predictions, dtype=np.float64)
    targ = np.asarray(targets, dtype=np.float64)
    if pred.shape != targ.shape or pred.ndim != 2:
        raise ValueError(f"predictions {pred.shape} and targets {targ.shape} "
                         "must be matching N x C arrays")
    if pred.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    ss_tot = np.sum((targ - targ.mean(axis=0)) ** 2, axis=0)
    if np.any(ss_tot == 0):
        dead = int(np.argmax(ss_tot == 0))
        raise ValueError(f"undefined R²: component {dead} has zero target variance")
    ss_res = np.sum((pred - targ) ** 2, axis=0)
    per = 1.0 - ss_res / ss_tot
    return R2Score(per_component=per, mean=float(per.mean()))


def evaluate_decoder(model: DecoderModel, dataset: Dataset, split: str = "test"):
    """(R2Score, mse) over all full-history windows of one split."""
    windows, targets = _window_matrix(dataset.split(split), model.config.window_bins)
    preds = np.concatenate([model.forward(windows[lo:lo + 1024])[0]
                            for lo in range(0, windows.shape[0], 1024)])
    return r_squared(preds, targets), float(np.mean((preds - targets) ** 2))


def save_decoder(model: DecoderModel, path) -> None:
    arrays = {name: arr for name, arr in model.parameters().items()}
    arrays["norm.mean"] = model.norm_mean
    arrays["norm.scale"] = model.norm_scale
    save_weights(path, {"kind": DECODER_KIND, "config": model.config.to_dict()}, arrays)


def load_decoder(path) -> DecoderModel:
    manifest, arrays = load_weights(path)
    if manifest.get("kind") != DECODER_KIND:
        raise ValueError(f"{path}: not a decoder model (kind {manifest.get('kind')!r})")
    cfg = dict(manifest["config"])
    cfg["hidden_sizes"] = tuple(cfg["hidden_sizes"])
    config = DecoderConfig(**cfg)
    acts = ["relu"] * len(config.hidden_sizes) + ["identity"]
    layers = [DenseLayer(weight=arrays[f"layer{i}.weight"], bias=arrays[f"layer{i}.bias"],
                         activation=act) for i, act in enumerate(acts)]
    return DecoderModel(layers, config, arrays["norm.mean"], arrays["norm.scale"])
