"""Base stochastic units and the compound activation built from them.

Three base units are supported, each defined by a conditional distribution
p0(h; u) with natural parameter u:

* ``sigmoid_bernoulli`` -- Bernoulli on {0,1}, mean is the logistic sigmoid.
* ``ted`` -- truncated exponential on [0,1], density proportional to
  exp(u*h); the continuous analogue of the Bernoulli unit.
* ``linear_gaussian`` -- unit-variance Gaussian with mean u.

Every unit provides its mean function f0 (the activation), the derivative
f0', the antiderivative L0 with L0' = f0 (the log-partition), the
conditional CDF, and a sampler.

A compound activation averages M scaled/shifted copies of the base
activation per output element:

    y_i = (1/M) * sum_j f0(exp(A[i,j]) * x_i + B[i,j])

which is monotone in x_i for any finite A, B and reduces to the base
activation at A = B = 0.  The induced stochastic unit is the uniform
mixture of the M parameter-transformed base distributions; its mean is
exactly the compound activation.

All functions are pure, vectorized over leading axes, and safe for
pre-activations up to |u| ~ 700 (well past the documented +-500 range).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr

__all__ = [
    "BaseKind",
    "TcaParams",
    "base_eval",
    "base_deriv",
    "base_deriv2",
    "base_logpartition",
    "base_cdf",
    "base_sample",
    "tca_eval",
    "tca_deriv",
    "tca_grads",
    "tca_logpartition",
    "tca_mixture_cdf",
    "tca_sample",
]


class BaseKind(str, Enum):
    SIGMOID_BERNOULLI = "sigmoid_bernoulli"
    TED = "ted"
    LINEAR_GAUSSIAN = "linear_gaussian"


# Switch to Taylor series below this |u| to dodge 0/0 cancellation in the
# TED formulas; series truncation error at the cutoff is below 1e-11.
_TED_CUT = 1e-3
_TED_CUT_VAR = 1e-2
_TED_CUT_D2 = 5e-2
# Above this u, exp(u) would overflow inside expm1; use asymptotic forms.
_TED_BIG = 30.0


def _as_float_array(u, name="input"):
    a = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


# ---------------------------------------------------------------------------
# logistic / Bernoulli


def _sigmoid(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(u):
    out = np.empty_like(u)
    pos = u > 0
    out[pos] = u[pos] + np.log1p(np.exp(-u[pos]))
    out[~pos] = np.log1p(np.exp(u[~pos]))
    return out


# ---------------------------------------------------------------------------
# truncated exponential on [0,1], density ~ exp(u*h)


def _ted_mean(u):
    out = np.empty_like(u)
    small = np.abs(u) < _TED_CUT
    s = u[small]
    out[small] = 0.5 + s / 12.0 - s**3 / 720.0
    b = u[~small]
    a = np.abs(b)
    m = 1.0 / -np.expm1(-a) - 1.0 / a
    out[~small] = np.where(b > 0, m, 1.0 - m)
    return out


def _ted_var(u):
    # f0' of the TED unit; even in u.
    out = np.empty_like(u)
    small = np.abs(u) < _TED_CUT_VAR
    s = u[small]
    out[small] = 1.0 / 12.0 - s**2 / 240.0 + s**4 / 6048.0
    a = np.abs(u[~small])
    v = np.exp(-a)
    w = -np.expm1(-a)  # 1 - v without cancellation
    out[~small] = 1.0 / a**2 - v / w**2
    return out


def _ted_deriv2(u):
    # f0'' of the TED unit; odd in u.
    out = np.empty_like(u)
    small = np.abs(u) < _TED_CUT_D2
    s = u[small]
    out[small] = -s / 120.0 + s**3 / 1512.0 - s**5 / 28800.0
    b = u[~small]
    a = np.abs(b)
    v = np.exp(-a)
    w = -np.expm1(-a)
    d = -2.0 / a**3 + v * (1.0 + v) / w**3
    out[~small] = np.where(b > 0, d, -d)
    return out


def _ted_logpartition(u):
    out = np.empty_like(u)
    small = np.abs(u) < _TED_CUT
    s = u[small]
    out[small] = s / 2.0 + s**2 / 24.0 - s**4 / 2880.0
    big = u >= _TED_BIG
    ub = u[big]
    out[big] = ub + np.log1p(-np.exp(-ub)) - np.log(ub)
    mid = ~small & ~big
    um = u[mid]
    out[mid] = np.log(np.expm1(um) / um)
    return out


def _ted_cdf(h, u):
    h, u = np.broadcast_arrays(h, u)
    out = np.empty_like(h, dtype=float)
    lo = h <= 0.0
    hi = h >= 1.0
    out[lo] = 0.0
    out[hi] = 1.0
    inside = ~lo & ~hi
    hh, uu = h[inside], u[inside]
    r = np.empty_like(hh)
    small = np.abs(uu) < _TED_CUT
    hs, us = hh[small], uu[small]
    r[small] = (
        hs
        + us * hs * (hs - 1.0) / 2.0
        + us**2 * hs * (hs - 1.0) * (2.0 * hs - 1.0) / 12.0
        + us**3 * hs**2 * (hs - 1.0) ** 2 / 24.0
    )
    big = uu >= _TED_BIG
    hb, ub = hh[big], uu[big]
    r[big] = np.exp(
        ub * (hb - 1.0) + np.log1p(-np.exp(-ub * hb)) - np.log1p(-np.exp(-ub))
    )
    mid = ~small & ~big
    hm, um = hh[mid], uu[mid]
    r[mid] = np.expm1(um * hm) / np.expm1(um)
    out[inside] = r
    return out


def _ted_inverse_cdf(w, u):
    # Inverse-CDF sampling; w is uniform on [0,1).
    w, u = np.broadcast_arrays(w, u)
    out = np.empty_like(w, dtype=float)
    tiny = np.abs(u) < 1e-12
    out[tiny] = w[tiny]
    big = u >= _TED_BIG
    wb, ub = w[big], u[big]
    out[big] = 1.0 + np.log(wb + (1.0 - wb) * np.exp(-ub)) / ub
    neg = u <= -_TED_BIG
    wn, un = w[neg], u[neg]
    out[neg] = np.log((1.0 - wn) + wn * np.exp(un)) / un
    mid = ~tiny & ~big & ~neg
    wm, um = w[mid], u[mid]
    out[mid] = np.log1p(wm * np.expm1(um)) / um
    return out


# ---------------------------------------------------------------------------
# per-kind dispatch


def base_eval(kind: BaseKind, u):
    """Mean of the generating distribution p0(.; u), i.e. the activation."""
    u = _as_float_array(u)
    if kind == BaseKind.SIGMOID_BERNOULLI:
        return _sigmoid(u)
    if kind == BaseKind.TED:
        return _ted_mean(u)
    if kind == BaseKind.LINEAR_GAUSSIAN:
        return u.copy()
    raise ValueError(f"unknown base kind {kind!r}")


def base_deriv(kind: BaseKind, u):
    """Derivative f0'(u) of the base activation; strictly positive."""
    u = _as_float_array(u)
    if kind == BaseKind.SIGMOID_BERNOULLI:
        p = _sigmoid(u)
        return p * (1.0 - p)
    if kind == BaseKind.TED:
        return _ted_var(u)
    if kind == BaseKind.LINEAR_GAUSSIAN:
        return np.ones_like(u)
    raise ValueError(f"unknown base kind {kind!r}")


def base_deriv2(kind: BaseKind, u):
    """Second derivative f0''(u); needed by the density-fit gradients."""
    u = _as_float_array(u)
    if kind == BaseKind.SIGMOID_BERNOULLI:
        p = _sigmoid(u)
        return p * (1.0 - p) * (1.0 - 2.0 * p)
    if kind == BaseKind.TED:
        return _ted_deriv2(u)
    if kind == BaseKind.LINEAR_GAUSSIAN:
        return np.zeros_like(u)
    raise ValueError(f"unknown base kind {kind!r}")


def base_logpartition(kind: BaseKind, u):
    """Antiderivative L0(u) with L0' = f0, fixed so overflow never occurs.

    sigmoid_bernoulli: softplus(u); ted: log((exp(u)-1)/u) with value 0 at
    u = 0; linear_gaussian: u^2/2.
    """
    u = _as_float_array(u)
    if kind == BaseKind.SIGMOID_BERNOULLI:
        return _softplus(u)
    if kind == BaseKind.TED:
        return _ted_logpartition(u)
    if kind == BaseKind.LINEAR_GAUSSIAN:
        return 0.5 * u**2
    raise ValueError(f"unknown base kind {kind!r}")


def base_cdf(kind: BaseKind, h, u):
    """Conditional CDF of p0(.; u) at h.

    h outside the support clamps to 0/1 rather than raising.
    """
    u = _as_float_array(u, "natural parameter")
    h = np.asarray(h, dtype=float)
    if kind == BaseKind.SIGMOID_BERNOULLI:
        h, u = np.broadcast_arrays(h, u)
        out = np.empty_like(h, dtype=float)
        out[h < 0.0] = 0.0
        out[h >= 1.0] = 1.0
        mid = (h >= 0.0) & (h < 1.0)
        out[mid] = 1.0 - _sigmoid(u[mid])
        return out
    if kind == BaseKind.TED:
        return _ted_cdf(h, u)
    if kind == BaseKind.LINEAR_GAUSSIAN:
        return ndtr(h - u)
    raise ValueError(f"unknown base kind {kind!r}")


def base_sample(kind: BaseKind, u, rng: np.random.Generator):
    """Draw h ~ p0(.; u) element-wise using the caller's generator."""
    u = _as_float_array(u)
    if kind == BaseKind.SIGMOID_BERNOULLI:
        return (rng.random(u.shape) < _sigmoid(u)).astype(float)
    if kind == BaseKind.TED:
        return _ted_inverse_cdf(rng.random(u.shape), u)
    if kind == BaseKind.LINEAR_GAUSSIAN:
        return u + rng.standard_normal(u.shape)
    raise ValueError(f"unknown base kind {kind!r}")


# ---------------------------------------------------------------------------
# compound activation


@dataclass(frozen=True)
class TcaParams:
    """Per-layer compound-activation parameters.

    A holds log-scales and B holds biases, both N x M; row i parametrizes
    output element i.  At A = B = 0 the layer is exactly the base
    activation.  Arrays are treated as read-only by all operations.
    """

    base: BaseKind
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 2 or A.shape != B.shape:
            raise ValueError(f"A and B must be equal-shape 2-D arrays, got {A.shape} and {B.shape}")
        if A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError("need at least one row and one mixture component")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @classmethod
    def reduced(cls, base: BaseKind, n: int, m: int = 1) -> "TcaParams":
        """Params that reproduce the base activation exactly."""
        return cls(base, np.zeros((n, m)), np.zeros((n, m)))

    @classmethod
    def near_base(
        cls,
        base: BaseKind,
        n: int,
        m: int,
        rng: np.random.Generator,
        spread: float = 0.1,
    ) -> "TcaParams":
        """Near-base init: A = 0, B uniform on [-spread, spread].

        Keeps the transfer function close to the base activation while
        letting the components separate once training starts.
        """
        return cls(base, np.zeros((n, m)), rng.uniform(-spread, spread, size=(n, m)))


def _check_last_dim(p: TcaParams, x, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != p.n:
        raise ValueError(f"{name} must have last dimension {p.n}, got shape {x.shape}")
    return x


def _component_fields(p: TcaParams, x):
    # (..., N) -> (..., N, M) pre-activations exp(A)*x + B
    return np.exp(p.A) * x[..., None] + p.B


def tca_eval(p: TcaParams, x):
    """y_i = (1/M) sum_j f0(exp(A[i,j]) x_i + B[i,j]); x is (..., N)."""
    x = _check_last_dim(p, x)
    return base_eval(p.base, _component_fields(p, x)).mean(axis=-1)


def tca_deriv(p: TcaParams, x):
    """dy_i/dx_i; strictly positive for every finite parameter set."""
    x = _check_last_dim(p, x)
    u = _component_fields(p, x)
    return (np.exp(p.A) * base_deriv(p.base, u)).mean(axis=-1)


def tca_grads(p: TcaParams, x, upstream):
    """Chain-rule gradients of sum(upstream * y) w.r.t. x, A and B.

    Returns (dx, dA, dB).  dx matches the shape of x; dA and dB are N x M
    with any leading batch axes summed in.
    """
    x = _check_last_dim(p, x)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != x.shape:
        raise ValueError(f"upstream shape {upstream.shape} must match x shape {x.shape}")
    scale = np.exp(p.A)
    u = _component_fields(p, x)
    d = base_deriv(p.base, u)  # (..., N, M)
    m = p.m
    dx = upstream * (scale * d).mean(axis=-1)
    w = upstream[..., None] / m
    dB = w * d
    dA = dB * scale * x[..., None]
    if dB.ndim > 2:
        flat = (-1, p.n, m)
        dA = dA.reshape(flat).sum(axis=0)
        dB = dB.reshape(flat).sum(axis=0)
    return dx, dA, dB


def tca_logpartition(p: TcaParams, alpha):
    """Per-element log-partition whose alpha-derivative is tca_eval.

    LZ_i = (1/M) sum_j exp(-A[i,j]) L0(exp(A[i,j]) alpha_i + B[i,j]).
    The exp(-A) weight is forced by L0' = f0.
    """
    alpha = _check_last_dim(p, alpha, "alpha")
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha must be finite")
    u = _component_fields(p, alpha)
    return (np.exp(-p.A) * base_logpartition(p.base, u)).mean(axis=-1)


def tca_mixture_cdf(p: TcaParams, h, alpha, row: int = 0):
    """CDF of the mixture unit for one row: average of component CDFs.

    Components are the base distribution with transformed parameter
    exp(A[row,j]) * alpha + B[row,j] and uniform 1/M weights, so the value
    is a valid CDF (0 at the lower support end, 1 at the upper).
    """
    if not 0 <= row < p.n:
        raise ValueError(f"row {row} out of range for {p.n} rows")
    alpha = float(alpha)
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    h = np.asarray(h, dtype=float)
    u = np.exp(p.A[row]) * alpha + p.B[row]  # (M,)
    return base_cdf(p.base, h[..., None], u).mean(axis=-1)


def tca_sample(p: TcaParams, alpha, rng: np.random.Generator):
    """Draw from the mixture unit: pick j uniformly, then sample the base.

    Element i of the result is h_i ~ p0(.; exp(A[i,j]) alpha_i + B[i,j])
    with j drawn uniformly from the M components, independently per
    element.  The mean of this draw is tca_eval(p, alpha).
    """
    alpha = _check_last_dim(p, alpha, "alpha")
    j = rng.integers(p.m, size=alpha.shape)
    rows = np.arange(p.n)
    a = p.A[rows, j]
    b = p.B[rows, j]
    return base_sample(p.base, np.exp(a) * alpha + b, rng)
