"""Minimal differentiable numerics on numpy: dense layers, layer norm, pre-norm
transformer blocks, losses, Adam, dropout, and finite-difference gradient checks.

Matrices are float64 C-order ndarrays throughout; reductions therefore
accumulate in 64 bits, which keeps the gradient checks meaningful. Every
forward returns (output, cache) and every backward consumes that cache and
returns exact analytic gradients. No autodiff: the architectures are fixed and
each backward is written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_strict_checks = False


def set_strict_checks(flag: bool) -> None:
    """Checked mode: forwards raise on NaN/Inf instead of propagating them."""
    global _strict_checks
    _strict_checks = bool(flag)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if _strict_checks and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} contains non-finite values")


def _shape_error(op: str, **dims) -> ValueError:
    parts = ", ".join(f"{k}={v}" for k, v in dims.items())
    return ValueError(f"{op}: incompatible shapes ({parts})")


# ------------------------------------------------------------------- dense


ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    """Affine map y = act(x W^T + b); weight is out x in."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise _shape_error("DenseLayer", weight=self.weight.shape,
                              bias=self.bias.shape)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def create(cls, rng: np.random.Generator, in_dim: int, out_dim: int,
               activation: str = "identity") -> "DenseLayer":
        """He-normal init for relu layers, scaled-uniform for identity ones."""
        if activation == "relu":
            w = rng.normal(0.0, np.sqrt(2.0 / in_dim), (out_dim, in_dim))
        else:
            lim = np.sqrt(1.0 / in_dim)
            w = rng.uniform(-lim, lim, (out_dim, in_dim))
        return cls(weight=w, bias=np.zeros(out_dim), activation=activation)

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, activation: str = "identity") -> "DenseLayer":
        return cls(weight=np.zeros((out_dim, in_dim)), bias=np.zeros(out_dim),
                   activation=activation)


def dense_forward(layer: DenseLayer, x: np.ndarray):
    """x is ... x in_dim; returns (... x out_dim, cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_dim:
        raise _shape_error("dense_forward", input=x.shape,
                           expected_features=layer.in_dim)
    z = x @ layer.weight.T + layer.bias
    y = np.maximum(z, 0.0) if layer.activation == "relu" else z
    _check_finite("dense output", y)
    return y, (x, z)


def dense_backward(layer: DenseLayer, cache, dy: np.ndarray):
    """Returns (dx, {"weight": dW, "bias": db})."""
    x, z = cache
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != z.shape:
        raise _shape_error("dense_backward", upstream=dy.shape, output=z.shape)
    dz = np.where(z > 0, dy, 0.0) if layer.activation == "relu" else dy
    flat_x = x.reshape(-1, layer.in_dim)
    flat_dz = dz.reshape(-1, layer.out_dim)
    return dz @ layer.weight, {
        "weight": flat_dz.T @ flat_x,
        "bias": flat_dz.sum(axis=0),
    }


# --------------------------------------------------------------- layer norm


@dataclass
class LayerNorm:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    @classmethod
    def create(cls, dim: int) -> "LayerNorm":
        return cls(gamma=np.ones(dim), beta=np.zeros(dim))


def layer_norm_forward(ln: LayerNorm, x: np.ndarray):
    if x.shape[-1] != ln.gamma.shape[0]:
        raise _shape_error("layer_norm_forward", input=x.shape,
                           expected_features=ln.gamma.shape[0])
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + ln.eps)
    xhat = xc * inv
    return ln.gamma * xhat + ln.beta, (xc, inv, xhat)


def layer_norm_backward(ln: LayerNorm, cache, dy: np.ndarray):
    xc, inv, xhat = cache
    d = xhat.shape[-1]
    dxhat = dy * ln.gamma
    dvar = np.sum(dxhat * xc, axis=-1, keepdims=True) * (-0.5) * inv**3
    dmu = -np.sum(dxhat, axis=-1, keepdims=True) * inv - 2.0 * dvar * xc.mean(axis=-1, keepdims=True)
    dx = dxhat * inv + dvar * 2.0 * xc / d + dmu / d
    axes = tuple(range(dy.ndim - 1))
    return dx, {"gamma": np.sum(dy * xhat, axis=axes), "beta": np.sum(dy, axis=axes)}


# ------------------------------------------------------------------- losses


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, target_class: np.ndarray):
    """Mean NLL of target classes; returns (loss, dlogits)."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(target_class)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise _shape_error("softmax_cross_entropy", logits=logits.shape,
                           targets=targets.shape)
    k = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"target class out of range [0, {k})")
    m = np.max(logits, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(logits - m), axis=1))
    picked = logits[np.arange(logits.shape[0]), targets]
    loss = float(np.mean(lse - picked))
    grad = softmax(logits)
    grad[np.arange(logits.shape[0]), targets] -= 1.0
    return loss, grad / logits.shape[0]


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries; returns (loss, dpred)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise _shape_error("mse_loss", pred=pred.shape, target=target.shape)
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# ---------------------------------------------------------------- attention


@dataclass(frozen=True)
class AttentionBlock:
    """Pre-norm transformer block: x + Attn(LN(x)), then x + FF(LN(x)).

    The causal flag is fixed at construction; with it set, position i attends
    only to positions <= i.
    """

    d_model: int
    heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ff1: DenseLayer
    ff2: DenseLayer
    ln1: LayerNorm
    ln2: LayerNorm
    causal: bool
    max_len: int

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (self.d_model, self.d_model):
                raise _shape_error("AttentionBlock", **{name: getattr(self, name).shape},
                                   d_model=self.d_model)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @classmethod
    def create(cls, rng: np.random.Generator, d_model: int, heads: int, d_ff: int,
               max_len: int, causal: bool) -> "AttentionBlock":
        lim = np.sqrt(1.0 / d_model)
        proj = lambda: rng.uniform(-lim, lim, (d_model, d_model))
        return cls(
            d_model=d_model, heads=heads,
            wq=proj(), wk=proj(), wv=proj(), wo=proj(),
            ff1=DenseLayer.create(rng, d_model, d_ff, "relu"),
            ff2=DenseLayer.create(rng, d_ff, d_model, "identity"),
            ln1=LayerNorm.create(d_model), ln2=LayerNorm.create(d_model),
            causal=causal, max_len=max_len,
        )


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def attention_forward(block: AttentionBlock, x: np.ndarray):
    """x is (T, d_model) or (B, T, d_model); returns (same shape, cache)."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 2
    if squeezed:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != block.d_model:
        raise _shape_error("attention_forward", input=x.shape, d_model=block.d_model)
    t = x.shape[1]
    if t > block.max_len:
        raise ValueError(f"sequence length {t} exceeds block maximum {block.max_len}")

    xn, ln1_cache = layer_norm_forward(block.ln1, x)
    q = _split_heads(xn @ block.wq.T, block.heads)
    k = _split_heads(xn @ block.wk.T, block.heads)
    v = _split_heads(xn @ block.wv.T, block.heads)
    scale = 1.0 / np.sqrt(block.head_dim)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if block.causal:
        # -1e30 underflows to an exact zero weight after softmax
        mask = np.tril(np.ones((t, t), dtype=bool))
        scores = np.where(mask, scores, -1e30)
    probs = softmax(scores, axis=-1)
    ctx = _merge_heads(probs @ v)
    h = x + ctx @ block.wo.T

    hn, ln2_cache = layer_norm_forward(block.ln2, h)
    u, ff1_cache = dense_forward(block.ff1, hn)
    f, ff2_cache = dense_forward(block.ff2, u)
    y = h + f
    _check_finite("attention output", y)
    cache = (squeezed, x, ln1_cache, xn, q, k, v, probs, scale, h, ln2_cache,
             ff1_cache, ff2_cache)
    return (y[0] if squeezed else y), cache


def attention_backward(block: AttentionBlock, cache, dy: np.ndarray):
    """Returns (dx, grads) with grads keyed like block_parameters()."""
    (squeezed, x, ln1_cache, xn, q, k, v, probs, scale, h, ln2_cache,
     ff1_cache, ff2_cache) = cache
    dy = np.asarray(dy, dtype=np.float64)
    if squeezed:
        dy = dy[None]
    b, t, d = x.shape

    du, ff2_grads = dense_backward(block.ff2, ff2_cache, dy)
    dhn, ff1_grads = dense_backward(block.ff1, ff1_cache, du)
    dh_ln, ln2_grads = layer_norm_backward(block.ln2, ln2_cache, dhn)
    dh = dy + dh_ln

    flat = lambda a: a.reshape(-1, d)
    ctx = _merge_heads(probs @ v)
    dwo = flat(dh).T @ flat(ctx)
    dctx = _split_heads(dh @ block.wo, block.heads)

    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
    dscores *= scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    dq_m, dk_m, dv_m = (_merge_heads(a) for a in (dq, dk, dv))
    dwq = flat(dq_m).T @ flat(xn)
    dwk = flat(dk_m).T @ flat(xn)
    dwv = flat(dv_m).T @ flat(xn)
    dxn = dq_m @ block.wq + dk_m @ block.wk + dv_m @ block.wv
    dx_ln, ln1_grads = layer_norm_backward(block.ln1, ln1_cache, dxn)
    dx = dh + dx_ln

    grads = {
        "wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo,
        "ff1.weight": ff1_grads["weight"], "ff1.bias": ff1_grads["bias"],
        "ff2.weight": ff2_grads["weight"], "ff2.bias": ff2_grads["bias"],
        "ln1.gamma": ln1_grads["gamma"], "ln1.beta": ln1_grads["beta"],
        "ln2.gamma": ln2_grads["gamma"], "ln2.beta": ln2_grads["beta"],
    }
    return (dx[0] if squeezed else dx), grads


def block_parameters(block: AttentionBlock, prefix: str = "") -> dict:
    """Live references to every parameter array, keyed for adam_step."""
    return {
        f"{prefix}wq": block.wq, f"{prefix}wk": block.wk,
        f"{prefix}wv": block.wv, f"{prefix}wo": block.wo,
        f"{prefix}ff1.weight": block.ff1.weight, f"{prefix}ff1.bias": block.ff1.bias,
        f"{prefix}ff2.weight": block.ff2.weight, f"{prefix}ff2.bias": block.ff2.bias,
        f"{prefix}ln1.gamma": block.ln1.gamma, f"{prefix}ln1.beta": block.ln1.beta,
        f"{prefix}ln2.gamma": block.ln2.gamma, f"{prefix}ln2.beta": block.ln2.beta,
    }


# --------------------------------------------------------------------- adam


@dataclass
class AdamState:
    """Bias-corrected Adam; weight decay is decoupled and active only when > 0."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One update over named tensors, in place; returns params for convenience."""
    unknown = set(grads) - set(params)
    if unknown:
        raise KeyError(f"gradients for unknown parameters: {sorted(unknown)}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise _shape_error("adam_step", param=p.shape, grad=g.shape)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay > 0.0:
            update = update + state.lr * state.weight_decay * p
        p -= update
    return params


# ------------------------------------------------------------------ dropout


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator, training: bool):
    """Inverted dropout; identity when not training. Returns (output, mask)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


# ---------------------------------------------------------- gradient checks


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() w.r.t. x, perturbing x in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Symmetric relative error, guarded against tiny denominators."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-8)
    return float(np.max(np.abs(a - n) / denom))
