"""Velocity-to-spike generative model: a transformer over a 90-token window
(50 past bins, 40 future-velocity bins) emitting a 9-class spike-count
distribution for each of 192 neurons at the next bin.

Token layout: positions 0..P-1 embed (past counts, past velocity, position);
positions P..P+F-1 embed (zeroed count slot, future velocity, position). The
output head reads the hidden state at the last past token. Attention runs full
within the window: the look-ahead tokens must be visible to the readout, and
causality with respect to the outside world is enforced by construction, since
only executed velocities and already-sampled counts ever enter a window.

Training is teacher-forced (true counts as history) with summed per-neuron
cross-entropy; generation feeds sampled counts back autoregressively.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import NEURONS, Dataset
from .nn import (
    AdamState,
    AttentionBlock,
    DenseLayer,
    LayerNorm,
    adam_step,
    attention_backward,
    attention_forward,
    block_parameters,
    dense_backward,
    dense_forward,
    dropout,
    layer_norm_backward,
    layer_norm_forward,
    softmax,
    softmax_cross_entropy,
)
from .weights import ENCODER_KIND, load_weights, save_weights

LOOKAHEAD_BINS = 40
SPIKE_CLASSES = 9
ARGMAX_TEMPERATURE = 1e-6


def count_to_class(counts) -> np.ndarray:
    """Spike count -> class id; 8 stands for '8 or more'."""
    c = np.asarray(counts)
    if np.any(c < 0):
        raise ValueError("spike counts must be non-negative")
    return np.minimum(c, SPIKE_CLASSES - 1).astype(np.int64)


def class_to_count(classes) -> np.ndarray:
    """Class id -> numeric count fed back into the history (8+ becomes 8)."""
    k = np.asarray(classes)
    if np.any(k < 0) or np.any(k >= SPIKE_CLASSES):
        raise ValueError(f"class ids must be in [0, {SPIKE_CLASSES})")
    return k.astype(np.int64)


@dataclass(frozen=True)
class EncoderConfig:
    past_bins: int = 50
    lookahead_bins: int = LOOKAHEAD_BINS
    classes: int = SPIKE_CLASSES
    neuron_count: int = NEURONS
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    epochs: int = 60
    batch_size: int = 64
    samples_per_epoch: int = 4096
    lr: float = 5e-4
    weight_decay: float = 0.0
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if self.lookahead_bins != LOOKAHEAD_BINS:
            raise ValueError(f"lookahead is fixed at {LOOKAHEAD_BINS} bins")
        if self.classes != SPIKE_CLASSES:
            raise ValueError(f"class count is fixed at {SPIKE_CLASSES}")
        if self.d_model % self.heads != 0:
            raise ValueError("heads must divide d_model")
        if self.past_bins < 1:
            raise ValueError("past_bins must be >= 1")

    @property
    def window_tokens(self) -> int:
        return self.past_bins + self.lookahead_bins

    def to_dict(self) -> dict:
        return {
            "past_bins": self.past_bins, "lookahead_bins": self.lookahead_bins,
            "classes": self.classes, "neuron_count": self.neuron_count,
            "d_model": self.d_model, "layers": self.layers, "heads": self.heads,
            "d_ff": self.d_ff, "dropout": self.dropout, "epochs": self.epochs,
            "batch_size": self.batch_size, "samples_per_epoch": self.samples_per_epoch,
            "lr": self.lr, "weight_decay": self.weight_decay, "seed": self.seed,
            "temperature": self.temperature,
        }


class EncoderModel:
    def __init__(self, config: EncoderConfig, emb_counts, emb_vel, pos, blocks,
                 ln_out: LayerNorm, head: DenseLayer, vel_mean, vel_scale):
        d, p, f = config.d_model, config.past_bins, config.lookahead_bins
        if emb_counts.shape != (d, config.neuron_count):
            raise ValueError(f"count embedding shape {emb_counts.shape} mismatch")
        if emb_vel.shape != (d, 2) or pos.shape != (p + f, d):
            raise ValueError("velocity or positional embedding shape mismatch")
        if head.weight.shape != (config.neuron_count * config.classes, d):
            raise ValueError(f"head shape {head.weight.shape} mismatch")
        vel_mean = np.asarray(vel_mean, dtype=np.float64)
        vel_scale = np.asarray(vel_scale, dtype=np.float64)
        if vel_mean.shape != (2,) or vel_scale.shape != (2,) or np.any(vel_scale <= 0):
            raise ValueError("velocity normalization statistics invalid")
        self.config = config
        self.emb_counts = np.asarray(emb_counts, dtype=np.float64)
        self.emb_vel = np.asarray(emb_vel, dtype=np.float64)
        self.pos = np.asarray(pos, dtype=np.float64)
        self.blocks = list(blocks)
        self.ln_out = ln_out
        self.head = head
        self.vel_mean = vel_mean
        self.vel_scale = vel_scale

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator,
             vel_mean, vel_scale) -> "EncoderModel":
        d = config.d_model
        lim_c = np.sqrt(1.0 / config.neuron_count)
        emb_counts = rng.uniform(-lim_c, lim_c, (d, config.neuron_count))
        emb_vel = rng.uniform(-np.sqrt(0.5), np.sqrt(0.5), (d, 2))
        pos = rng.normal(0.0, 0.02, (config.window_tokens, d))
        blocks = [AttentionBlock.create(rng, d, config.heads, config.d_ff,
                                        max_len=config.window_tokens, causal=False)
                  for _ in range(config.layers)]
        # zero-initialized head: an untrained model emits exact uniform rows
        head = DenseLayer.zeros(d, config.neuron_count * config.classes)
        return cls(config, emb_counts, emb_vel, pos, blocks, LayerNorm.create(d),
                   head, vel_mean, vel_scale)

    def parameters(self) -> dict:
        out = {"emb_counts": self.emb_counts, "emb_vel": self.emb_vel,
               "pos": self.pos,
               "ln_out.gamma": self.ln_out.gamma, "ln_out.beta": self.ln_out.beta,
               "head.weight": self.head.weight, "head.bias": self.head.bias}
        for i, block in enumerate(self.blocks):
            out.update(block_parameters(block, prefix=f"block{i}."))
        return out

    def normalize_velocity(self, vel: np.ndarray) -> np.ndarray:
        return (np.asarray(vel, dtype=np.float64) - self.vel_mean) / self.vel_scale

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.parameters().items()}

    def restore(self, snap: dict) -> None:
        for name, param in self.parameters().items():
            param[...] = snap[name]


def build_encoder_input(model: EncoderModel, past_counts, past_velocities,
                        future_velocities) -> np.ndarray:
    """Embed one window into a (P+F, d_model) token sequence.

    Past tokens carry counts and the velocity executed at their bin; future
    tokens carry planned velocities with the count slot zeroed. Callers pad
    missing history with zeros, oldest first.
    """
    cfg = model.config
    past_counts = np.asarray(past_counts, dtype=np.float64)
    past_velocities = np.asarray(past_velocities, dtype=np.float64)
    future_velocities = np.asarray(future_velocities, dtype=np.float64)
    if past_counts.shape != (cfg.past_bins, cfg.neuron_count):
        raise ValueError(f"past_counts must be {(cfg.past_bins, cfg.neuron_count)}, "
                         f"got {past_counts.shape}")
    if past_velocities.shape != (cfg.past_bins, 2):
        raise ValueError(f"past_velocities must be {(cfg.past_bins, 2)}, "
                         f"got {past_velocities.shape}")
    if future_velocities.shape != (cfg.lookahead_bins, 2):
        raise ValueError(f"future_velocities must be {(cfg.lookahead_bins, 2)}, "
                         f"got {future_velocities.shape}")
    vel = model.normalize_velocity(np.vstack([past_velocities, future_velocities]))
    tokens = vel @ model.emb_vel.T + model.pos
    tokens[:cfg.past_bins] += past_counts @ model.emb_counts.T
    return tokens


def _forward_tokens(model: EncoderModel, tokens: np.ndarray, training: bool,
                    drop_rng=None):
    """Token sequences (B, P+F, d) -> (logits (B, N, K), caches)."""
    cfg = model.config
    x = tokens
    drop_mask = None
    if training and cfg.dropout > 0.0:
        x, drop_mask = dropout(x, cfg.dropout, drop_rng, training=True)
    block_caches = []
    for block in model.blocks:
        x, cache = attention_forward(block, x)
        block_caches.append(cache)
    h = x[:, cfg.past_bins - 1, :]
    hn, ln_cache = layer_norm_forward(model.ln_out, h)
    logits_flat, head_cache = dense_forward(model.head, hn)
    logits = logits_flat.reshape(-1, cfg.neuron_count, cfg.classes)
    return logits, (drop_mask, block_caches, ln_cache, head_cache, x.shape)


def _backward_tokens(model: EncoderModel, caches, dlogits: np.ndarray):
    cfg = model.config
    drop_mask, block_caches, ln_cache, head_cache, x_shape = caches
    dflat = dlogits.reshape(dlogits.shape[0], -1)
    dhn, head_grads = dense_backward(model.head, head_cache, dflat)
    dh, ln_grads = layer_norm_backward(model.ln_out, ln_cache, dhn)
    dx = np.zeros(x_shape)
    dx[:, cfg.past_bins - 1, :] = dh
    grads = {"head.weight": head_grads["weight"], "head.bias": head_grads["bias"],
             "ln_out.gamma": ln_grads["gamma"], "ln_out.beta": ln_grads["beta"]}
    for i in reversed(range(len(model.blocks))):
        dx, block_grads = attention_backward(model.blocks[i], block_caches[i], dx)
        grads.update({f"block{i}.{k}": v for k, v in block_grads.items()})
    if drop_mask is not None:
        dx = dx * drop_mask
    return grads, dx


def _embed_batch(model: EncoderModel, counts: np.ndarray, vels: np.ndarray) -> np.ndarray:
    """counts (B, P, N) and raw velocities (B, P+F, 2) -> tokens (B, P+F, d)."""
    cfg = model.config
    vel = model.normalize_velocity(vels)
    tokens = vel @ model.emb_vel.T + model.pos
    tokens[:, :cfg.past_bins] += counts @ model.emb_counts.T
    return tokens


def _embedding_grads(model: EncoderModel, counts, vels, dtokens) -> dict:
    cfg = model.config
    p = cfg.past_bins
    vel = model.normalize_velocity(vels)
    flat_v = vel.reshape(-1, 2)
    flat_dt = dtokens.reshape(-1, cfg.d_model)
    flat_c = counts.reshape(-1, cfg.neuron_count)
    flat_dt_past = dtokens[:, :p, :].reshape(-1, cfg.d_model)
    return {
        "emb_vel": flat_dt.T @ flat_v,
        "emb_counts": flat_dt_past.T @ flat_c,
        "pos": dtokens.sum(axis=0),
    }


def predict_spike_distribution(model: EncoderModel, tokens: np.ndarray) -> np.ndarray:
    """One embedded window -> (neurons x classes) probability matrix."""
    cfg = model.config
    if tokens.shape != (cfg.window_tokens, cfg.d_model):
        raise ValueError(f"tokens must be {(cfg.window_tokens, cfg.d_model)}, "
                         f"got {tokens.shape}")
    logits, _ = _forward_tokens(model, tokens[None], training=False)
    return softmax(logits[0], axis=-1)


def sample_spikes(distribution: np.ndarray, rng: np.random.Generator,
                  temperature: float = 1.0) -> np.ndarray:
    """Per-neuron class draw from a (temperature-sharpened) distribution.

    Temperatures at or below 1e-6 switch to argmax. Returns counts, with the
    top class already mapped through class_to_count.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    p = np.asarray(distribution, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != SPIKE_CLASSES:
        raise ValueError(f"distribution must be N x {SPIKE_CLASSES}, got {p.shape}")
    if temperature <= ARGMAX_TEMPERATURE:
        classes = np.argmax(p, axis=1)
    else:
        if temperature != 1.0:
            p = p ** (1.0 / temperature)
        p = p / p.sum(axis=1, keepdims=True)
        cdf = np.cumsum(p, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random(p.shape[0])
        classes = np.argmax(cdf >= u[:, None], axis=1)
    return class_to_count(classes)


# ----------------------------------------------------------------- training


def _sample_index(trials) -> list:
    return [(i, t) for i, trial in enumerate(trials) for t in range(trial.num_bins)]


def _gather_batch(trials, index, picks, cfg: EncoderConfig):
    """Teacher-forced batch: padded count history, executed + planned velocities."""
    b = len(picks)
    p, f, n = cfg.past_bins, cfg.lookahead_bins, cfg.neuron_count
    counts = np.zeros((b, p, n))
    vels = np.zeros((b, p + f, 2))
    targets = np.empty((b, n), dtype=np.int64)
    for row, pick in enumerate(picks):
        ti, t = index[pick]
        trial = trials[ti]
        lo = max(0, t - p)
        span = t - lo
        if span:
            counts[row, p - span:] = trial.counts[lo:t]
            vels[row, p - span:p] = trial.velocities[lo:t]
        fut = trial.velocities[t:t + f]
        vels[row, p:p + fut.shape[0]] = fut
        targets[row] = count_to_class(trial.counts[t])
    return counts, vels, targets


def _batch_loss(model: EncoderModel, counts, vels, targets, training: bool,
                drop_rng=None):
    """Summed per-neuron cross-entropy, mean over the batch; returns grads too."""
    cfg = model.config
    tokens = _embed_batch(model, counts, vels)
    logits, caches = _forward_tokens(model, tokens, training, drop_rng)
    flat_logits = logits.reshape(-1, cfg.classes)
    flat_targets = targets.reshape(-1)
    mean_ce, dflat = softmax_cross_entropy(flat_logits, flat_targets)
    loss = mean_ce * cfg.neuron_count
    if not training:
        return loss, None
    dlogits = dflat.reshape(logits.shape) * cfg.neuron_count
    grads, dtokens = _backward_tokens(model, caches, dlogits)
    grads.update(_embedding_grads(model, counts, vels, dtokens))
    return loss, grads


def _velocity_stats(trials):
    all_v = np.concatenate([t.velocities for t in trials])
    return all_v.mean(axis=0), np.maximum(all_v.std(axis=0), 1e-6)


@dataclass(frozen=True)
class EncoderHistory:
    train_loss: np.ndarray
    val_loss: np.ndarray
    best_epoch: int
    final_val_loss: float
    uniform_loss: float
    seconds: float


def evaluate_encoder_loss(model: EncoderModel, trials, batch: int = 256,
                          limit: int | None = None, seed: int = 0) -> float:
    """Mean summed-CE over (trial, bin) samples; limit subsamples deterministically."""
    cfg = model.config
    index = _sample_index(trials)
    order = np.arange(len(index))
    if limit is not None and limit < len(index):
        order = np.random.default_rng(seed).permutation(len(index))[:limit]
    total, seen = 0.0, 0
    for lo in range(0, len(order), batch):
        picks = order[lo:lo + batch]
        counts, vels, targets = _gather_batch(trials, index, picks, cfg)
        loss, _ = _batch_loss(model, counts, vels, targets, training=False)
        total += loss * len(picks)
        seen += len(picks)
    return total / seen


def train_encoder(dataset: Dataset, config: EncoderConfig = EncoderConfig(),
                  log=None):
    """Teacher-forced fit; returns (best-validation model, EncoderHistory).

    Each epoch visits a fresh random subsample of (trial, bin) pairs so the
    whole corpus is covered across epochs while one epoch stays desk-scale.
    The reported final validation loss always covers the complete split.
    """
    started = time.monotonic()
    train_trials = dataset.split("train")
    val_trials = dataset.split("validation")
    if not train_trials or not val_trials:
        raise ValueError("dataset needs non-empty train and validation splits")

    vel_mean, vel_scale = _velocity_stats(train_trials)
    seed_root = np.random.SeedSequence((config.seed, 0xE4C0))
    init_rng, shuffle_rng, drop_rng = (np.random.default_rng(s)
                                       for s in seed_root.spawn(3))
    model = EncoderModel.init(config, init_rng, vel_mean, vel_scale)
    adam = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    params = model.parameters()

    index = _sample_index(train_trials)
    uniform = config.neuron_count * np.log(config.classes)
    per_epoch = min(config.samples_per_epoch, len(index))
    train_losses, val_losses = [], []
    best_val, best_snap, best_epoch = np.inf, model.snapshot(), 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(index))[:per_epoch]
        epoch_loss = 0.0
        for lo in range(0, per_epoch, config.batch_size):
            picks = order[lo:lo + config.batch_size]
            counts, vels, targets = _gather_batch(train_trials, index, picks, config)
            loss, grads = _batch_loss(model, counts, vels, targets, training=True,
                                      drop_rng=drop_rng)
            adam_step(adam, params, grads)
            epoch_loss += loss * len(picks)
        train_losses.append(epoch_loss / per_epoch)
        val_losses.append(evaluate_encoder_loss(model, val_trials, limit=2048,
                                                seed=config.seed))
        if val_losses[-1] < best_val:
            best_val, best_snap, best_epoch = val_losses[-1], model.snapshot(), epoch
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} "
                f"train_ce {train_losses[-1]:.2f} val_ce {val_losses[-1]:.2f} "
                f"(uniform {uniform:.2f})")
    model.restore(best_snap)
    final_val = evaluate_encoder_loss(model, val_trials)
    history = EncoderHistory(train_loss=np.array(train_losses),
                             val_loss=np.array(val_losses),
                             best_epoch=best_epoch,
                             final_val_loss=final_val,
                             uniform_loss=float(uniform),
                             seconds=time.monotonic() - started)
    return model, history


# --------------------------------------------------------------- generation


@dataclass
class GenerationState:
    """Autoregressive feedback buffers: own sampled counts, executed velocities."""

    past_counts: np.ndarray
    past_velocities: np.ndarray
    rng: np.random.Generator
    bin_index: int = 0

    @classmethod
    def create(cls, model: EncoderModel, seed) -> "GenerationState":
        cfg = model.config
        return cls(past_counts=np.zeros((cfg.past_bins, cfg.neuron_count)),
                   past_velocities=np.zeros((cfg.past_bins, 2)),
                   rng=np.random.default_rng(seed))

    def push(self, counts: np.ndarray, velocity: np.ndarray) -> None:
        self.past_counts[:-1] = self.past_counts[1:]
        self.past_counts[-1] = counts
        self.past_velocities[:-1] = self.past_velocities[1:]
        self.past_velocities[-1] = velocity
        self.bin_index += 1


def advance_generation(model: EncoderModel, state: GenerationState,
                       future_velocities: np.ndarray,
                       temperature: float = 1.0) -> np.ndarray:
    """Sample one bin of counts given planned velocities v_t..v_{t+F-1}."""
    future_velocities = np.asarray(future_velocities, dtype=np.float64)
    if not np.all(np.isfinite(future_velocities)):
        raise ValueError("velocities must be finite")
    tokens = build_encoder_input(model, state.past_counts, state.past_velocities,
                                 future_velocities)
    probs = predict_spike_distribution(model, tokens)
    counts = sample_spikes(probs, state.rng, temperature)
    state.push(counts, future_velocities[0])
    return counts


def lookahead_window(trace: np.ndarray, t: int, f: int) -> np.ndarray:
    """Planned velocities v_t..v_{t+f-1}, zero-padded past the end of the trace."""
    window = np.zeros((f, 2))
    chunk = trace[t:t + f]
    window[:chunk.shape[0]] = chunk
    return window


def generate_closed_loop(model: EncoderModel, velocity_trace: np.ndarray, seed,
                         temperature: float = 1.0) -> np.ndarray:
    """Synthetic counts (T x neurons) for a velocity trace, feeding back samples."""
    trace = np.asarray(velocity_trace, dtype=np.float64)
    if trace.ndim != 2 or trace.shape[1] != 2:
        raise ValueError("velocity trace must be T x 2")
    if trace.shape[0] < 1:
        raise ValueError("velocity trace must have at least one bin")
    if not np.all(np.isfinite(trace)):
        raise ValueError("velocities must be finite")
    cfg = model.config
    state = GenerationState.create(model, seed)
    out = np.empty((trace.shape[0], cfg.neuron_count), dtype=np.int16)
    for t in range(trace.shape[0]):
        window = lookahead_window(trace, t, cfg.lookahead_bins)
        out[t] = advance_generation(model, state, window, temperature)
    return out


# -------------------------------------------------------------- persistence


def save_encoder(model: EncoderModel, path) -> None:
    arrays = dict(model.parameters())
    arrays["vel.mean"] = model.vel_mean
    arrays["vel.scale"] = model.vel_scale
    save_weights(path, {"kind": ENCODER_KIND, "config": model.config.to_dict()}, arrays)


def load_encoder(path) -> EncoderModel:
    manifest, arrays = load_weights(path)
    if manifest.get("kind") != ENCODER_KIND:
        raise ValueError(f"{path}: not an encoder model (kind {manifest.get('kind')!r})")
    config = EncoderConfig(**manifest["config"])
    blocks = []
    for i in range(config.layers):
        g = lambda name: arrays[f"block{i}.{name}"]
        blocks.append(AttentionBlock(
            d_model=config.d_model, heads=config.heads,
            wq=g("wq"), wk=g("wk"), wv=g("wv"), wo=g("wo"),
            ff1=DenseLayer(weight=g("ff1.weight"), bias=g("ff1.bias"), activation="relu"),
            ff2=DenseLayer(weight=g("ff2.weight"), bias=g("ff2.bias"),
                           activation="identity"),
            ln1=LayerNorm(gamma=g("ln1.gamma"), beta=g("ln1.beta")),
            ln2=LayerNorm(gamma=g("ln2.gamma"), beta=g("ln2.beta")),
            causal=False, max_len=config.window_tokens))
    return EncoderModel(
        config, arrays["emb_counts"], arrays["emb_vel"], arrays["pos"], blocks,
        LayerNorm(gamma=arrays["ln_out.gamma"], beta=arrays["ln_out.beta"]),
        DenseLayer(weight=arrays["head.weight"], bias=arrays["head.bias"],
                   activation="identity"),
        arrays["vel.mean"], arrays["vel.scale"])
