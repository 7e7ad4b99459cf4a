"""Float64 matrix primitives: activations, layer gradients, Adam, RNG streams.

Everything here is a pure function of its arguments (plus an explicit RNG
stream where randomness is involved), so concurrent use is safe. All arrays
are C-contiguous float64; mixed inputs are coerced on entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

Array = np.ndarray

# Self-normalizing activation constants (Klambauer et al. values).
SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717
# Value that alpha dropout writes into dropped units.
ALPHA_DROP_VALUE = -SELU_LAMBDA * SELU_ALPHA

ACTIVATION_KINDS = ("linear", "relu", "selu", "sigmoid", "log_softmax_rows")


@dataclass(frozen=True)
class RngStream:
    """Named deterministic random stream.

    Identical (seed, stream_id) always reproduce the same draws; distinct
    stream ids are statistically independent. ``generator`` accepts extra
    integer key parts so call sites can carve out sub-streams (per epoch,
    per iteration, ...) without coordinating id ranges.
    """

    seed: int
    stream_id: int = 0

    def generator(self, *key: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed,
                                    spawn_key=(self.stream_id, *key))
        return np.random.default_rng(ss)


def as_matrix(values) -> Array:
    """Coerce to a C-ordered float64 2-D array."""
    a = np.ascontiguousarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a: Array, b: Array) -> Array:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul produced non-finite values")
    return out


def hadamard(a: Array, b: Array) -> Array:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError(
            f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    out = a * b
    if not np.all(np.isfinite(out)):
        raise NumericError("hadamard produced non-finite values")
    return out


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def _sigmoid(x: Array) -> Array:
    # Branch on sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_softmax_rows(x: Array) -> Array:
    shift = x - x.max(axis=1, keepdims=True)
    return shift - np.log(np.exp(shift).sum(axis=1, keepdims=True))


def activation(x: Array, kind: str) -> Array:
    """Apply an element-wise (or per-row, for log_softmax_rows) transform."""
    x = as_matrix(x)
    if kind == "linear":
        return x.copy()
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "selu":
        return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if kind == "sigmoid":
        return _sigmoid(x)
    if kind == "log_softmax_rows":
        if x.shape[1] < 1:
            raise DimensionError("log_softmax_rows needs >=1 entry per row")
        return _log_softmax_rows(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def activation_backward(kind: str, upstream: Array, pre: Array, out: Array) -> Array:
    """Gradient of ``activation`` w.r.t. its input.

    ``pre`` is the pre-activation input and ``out`` the cached activation
    output from the matching forward pass.
    """
    if kind == "linear":
        return upstream.copy()
    if kind == "relu":
        return upstream * (pre > 0)
    if kind == "selu":
        # d/dx = lambda for x>0, else lambda*alpha*e^x = out + lambda*alpha
        return upstream * np.where(pre > 0, SELU_LAMBDA, out + SELU_LAMBDA * SELU_ALPHA)
    if kind == "sigmoid":
        return upstream * out * (1.0 - out)
    if kind == "log_softmax_rows":
        return upstream - np.exp(out) * upstream.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------

def dropout_mask(shape, p: float, rng) -> Array:
    """Inverted-dropout mask: 0 with probability p, else 1/(1-p).

    ``rng`` is an RngStream or a numpy Generator. Training-mode only;
    evaluation skips the mask entirely.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    keep = gen.random(size=shape) >= p
    return keep / (1.0 - p)


def alpha_dropout(x: Array, p: float, rng) -> tuple[Array, Array]:
    """SELU-matched dropout: dropped units are set to -lambda*alpha, then an
    affine correction restores zero mean / unit variance. Returns the output
    and the element scale factor needed by the backward pass."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    keep = gen.random(size=x.shape) >= p
    q = 1.0 - p
    a = (q * (1.0 + p * ALPHA_DROP_VALUE ** 2)) ** -0.5
    b = -a * p * ALPHA_DROP_VALUE
    out = a * np.where(keep, x, ALPHA_DROP_VALUE) + b
    return out, a * keep


# ---------------------------------------------------------------------------
# Dense-layer primitives
# ---------------------------------------------------------------------------

def dense_forward(x: Array, w: Array, b: Array | None) -> Array:
    """Pre-activation z = x @ w (+ b)."""
    z = x @ w
    if b is not None:
        z = z + b
    return z


def dense_backward(x: Array, w: Array, upstream_z: Array):
    """Gradients of z = x @ w + b given dL/dz: returns (dx, dw, db)."""
    dw = x.T @ upstream_z
    db = upstream_z.sum(axis=0)
    dx = upstream_z @ w.T
    return dx, dw, db


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the step counter."""

    first_moment: dict[str, Array] = field(default_factory=dict)
    second_moment: dict[str, Array] = field(default_factory=dict)
    step_count: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Array]) -> "AdamState":
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
            step_count=0,
        )


def adam_step(
    params: dict[str, Array],
    grads: dict[str, Array],
    state: AdamState,
    rate: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, Array], AdamState]:
    """One Adam update over all parameters; weight decay is decoupled
    (applied to the parameter directly, never mixed into the moments).

    Inputs are left untouched; fresh parameter and state dicts are returned.
    """
    if rate <= 0:
        raise ValueError(f"learning rate must be positive, got {rate}")
    t = state.step_count + 1
    new_params: dict[str, Array] = {}
    new_m: dict[str, Array] = {}
    new_v: dict[str, Array] = {}
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = beta1 * state.first_moment[name] + (1.0 - beta1) * g
        v = beta2 * state.second_moment[name] + (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        step = rate * m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            step = step + rate * weight_decay * p
        new_params[name] = p - step
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class LrSchedule:
    """Linear decay from base_rate at epoch 0 to base_rate/total at the last
    epoch (rate(e) = base * (1 - e/total))."""

    base_rate: float
    total_epochs: int

    def __post_init__(self):
        if self.base_rate <= 0:
            raise ValueError(f"base rate must be positive, got {self.base_rate}")
        if self.total_epochs < 1:
            raise ValueError(f"total epochs must be >= 1, got {self.total_epochs}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(
            f"epoch {epoch} outside [0, {schedule.total_epochs})")
    return schedule.base_rate * (1.0 - epoch / schedule.total_epochs)
