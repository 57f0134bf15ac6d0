"""Univariate PDF estimation by maximum likelihood over a monotone map.

A single-row compound activation f is fitted so that y = f(x) follows a
target law (uniform on [0,1] or standard Gaussian).  By change of
variables the implied data density is |f'(x)| * p_target(f(x)), so
maximizing mean log f'(x_k) + log p_target(f(x_k)) is maximum-likelihood
density estimation, and applying f to the samples flattens their modes.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from tcanet.activations import (
    BaseKind,
    TcaParams,
    base_deriv,
    base_deriv2,
    base_eval,
)
from tcanet.config import TrainConfig
from tcanet.errors import TrainingFailure

__all__ = ["TargetLaw", "loglik", "fit_univariate", "density", "demodalize"]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# uniform01 needs the map's range inside [0,1]
_BOUNDED = (BaseKind.SIGMOID_BERNOULLI, BaseKind.TED)


class TargetLaw(str, Enum):
    UNIFORM01 = "uniform01"
    STANDARD_GAUSSIAN = "standard_gaussian"


def _check_inputs(p: TcaParams, x):
    if p.n != 1:
        raise ValueError(f"univariate estimation needs a single-row map, got {p.n} rows")
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample set")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    return x


def _check_target(target: TargetLaw, base: BaseKind):
    if target == TargetLaw.UNIFORM01 and base not in _BOUNDED:
        raise ValueError("uniform01 target needs a base with range inside [0,1]")


def _map_terms(p: TcaParams, x):
    # y = f(x), fp = f'(x) for the single row, plus per-component fields.
    scale = np.exp(p.A[0])  # (M,)
    u = scale * x[:, None] + p.B[0]  # (K, M)
    f0 = base_eval(p.base, u)
    f1 = base_deriv(p.base, u)
    y = f0.mean(axis=1)
    fp = (scale * f1).mean(axis=1)
    return y, fp, u, f1, scale


def loglik(p: TcaParams, target: TargetLaw, x) -> float:
    """Mean log-likelihood of the samples under the transformed law."""
    x = _check_inputs(p, x)
    _check_target(target, p.base)
    y, fp, _, _, _ = _map_terms(p, x)
    ll = np.log(np.maximum(fp, 1e-300))
    if target == TargetLaw.STANDARD_GAUSSIAN:
        ll = ll - 0.5 * y**2 - _LOG_SQRT_2PI
    return float(ll.mean())


def _loglik_grads(p: TcaParams, target: TargetLaw, x):
    """Gradient of loglik w.r.t. the A and B rows (shape (M,) each)."""
    y, fp, u, f1, scale = _map_terms(p, x)
    f2 = base_deriv2(p.base, u)
    m = p.m
    k = x.size
    inv_fp = 1.0 / np.maximum(fp, 1e-300)
    # d log f' terms
    dA = (inv_fp[:, None] * (scale * f1 + scale**2 * x[:, None] * f2)).sum(0) / (m * k)
    dB = (inv_fp[:, None] * (scale * f2)).sum(0) / (m * k)
    if target == TargetLaw.STANDARD_GAUSSIAN:
        w = -y  # d log p_target / dy
        dA += (w[:, None] * (scale * x[:, None] * f1)).sum(0) / (m * k)
        dB += (w[:, None] * f1).sum(0) / (m * k)
    return dA, dB


def _seed_params(x, base: BaseKind, m: int) -> TcaParams:
    """Quantile-spread init: components centered on data quantiles.

    Centering component j where the data actually lives breaks the
    symmetry of the all-zero init, which is a stationary point the
    ascent cannot leave.  Component widths come from the gaps between
    neighboring quantiles, so tight modes get correspondingly sharp
    components.
    """
    std = max(float(np.std(x)), 1e-3)
    q = np.quantile(x, (np.arange(m) + 0.5) / m)
    if m == 1:
        width = np.array([std])
    else:
        gaps = np.diff(q)
        left = np.concatenate([[gaps[0]], gaps])
        right = np.concatenate([gaps, [gaps[-1]]])
        width = np.clip(np.minimum(left, right), std / (5.0 * m), 2.0 * std)
    a = np.log(1.8 / width).reshape(1, m)
    b = -np.exp(a) * q.reshape(1, m)
    return TcaParams(base, a, b)


def fit_univariate(x, base: BaseKind, m: int, target: TargetLaw, cfg: TrainConfig):
    """Full-batch gradient ascent on loglik; returns (params, trace).

    The step is halved whenever a proposed update would lower the
    objective (and regrows gently afterwards), so the returned trace is
    non-decreasing.  Deterministic for fixed inputs.
    """
    if m < 1:
        raise ValueError("need at least one mixture component")
    _check_target(target, base)
    x = np.asarray(x, dtype=float).ravel()
    p = _seed_params(x, base, m)
    ll = loglik(p, target, x)
    if not np.isfinite(ll):
        raise TrainingFailure("objective not finite at initialization (epoch 0)")
    trace = [ll]
    step = cfg.lr
    for epoch in range(cfg.epochs):
        dA, dB = _loglik_grads(p, target, x)
        if not (np.all(np.isfinite(dA)) and np.all(np.isfinite(dB))):
            raise TrainingFailure(f"gradient diverged at epoch {epoch}")
        while True:
            cand = TcaParams(base, p.A + step * dA, p.B + step * dB)
            llc = loglik(cand, target, x)
            if np.isfinite(llc) and llc >= ll:
                break
            step *= 0.5
            if step < 1e-12:
                return p, trace  # converged: no uphill step remains
        p, ll = cand, llc
        trace.append(ll)
        step = min(step * 1.05, cfg.lr)
    return p, trace


def density(p: TcaParams, target: TargetLaw, x):
    """Implied data density |f'(x)| * p_target(f(x)); vectorized in x."""
    arr = np.asarray(x, dtype=float).ravel()
    y, fp, _, _, _ = _map_terms(p, arr)
    out = fp.copy()
    if target == TargetLaw.STANDARD_GAUSSIAN:
        out *= np.exp(-0.5 * y**2) / np.sqrt(2.0 * np.pi)
    else:
        _check_target(target, p.base)
    return out if np.ndim(x) else float(out[0])


def demodalize(p: TcaParams, x):
    """Transform samples through the fitted monotone map."""
    arr = np.asarray(x, dtype=float).ravel()
    y, _, _, _, _ = _map_terms(p, arr)
    return y
