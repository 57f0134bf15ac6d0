"""Restricted Boltzmann machine with a compound-mixture hidden layer.

The visible layer is a plain base unit (TED for dithered images); each
hidden unit is the mixture unit induced by a compound activation.  With
energy E(x,h) = -x'Wh - a'x - b'h, marginalizing the hidden layer gives
the free energy

    F(x) = -a'x - sum_i LZ_i(alpha_i),   alpha = W'x + b,

where LZ is the per-unit log-partition with d LZ / d alpha = tca_eval.
Contrastive divergence is implemented as the difference of analytic
free-energy gradients at the data and at the chain reconstruction, which
yields the classical CD updates for W, a, b and the mixture-parameter
updates from the same expression.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from tcanet.activations import (
    BaseKind,
    TcaParams,
    base_eval,
    base_logpartition,
    base_sample,
    tca_eval,
    tca_logpartition,
    tca_sample,
)
from tcanet.config import TrainConfig
from tcanet.data import batches
from tcanet.errors import TrainingFailure

__all__ = [
    "RbmModel",
    "init_rbm",
    "swap_mixture",
    "forward_field",
    "backward_field",
    "hidden_step",
    "visible_step",
    "gibbs_chain",
    "free_energy",
    "free_energy_grads",
    "conditional_loglik",
    "cd_step",
    "reconstruction_metrics",
    "train_rbm_phases",
    "inverse_base_eval",
]

_MODES = ("deterministic", "stochastic")


@dataclass
class RbmModel:
    """Weights W (visible x hidden), biases a (visible) and b (hidden)."""

    W: np.ndarray
    a: np.ndarray
    b: np.ndarray
    vis: BaseKind
    hid: TcaParams

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n, h = self.W.shape
        if self.a.shape != (n,) or self.b.shape != (h,) or self.hid.n != h:
            raise ValueError(
                f"inconsistent shapes: W {self.W.shape}, a {self.a.shape}, "
                f"b {self.b.shape}, hid rows {self.hid.n}"
            )
        if not all(
            np.all(np.isfinite(v)) for v in (self.W, self.a, self.b)
        ):
            raise ValueError("model parameters must be finite")

    @property
    def n_vis(self) -> int:
        return self.W.shape[0]

    @property
    def n_hid(self) -> int:
        return self.W.shape[1]


def inverse_base_eval(kind: BaseKind, y, lo=-500.0, hi=500.0):
    """Invert the base activation by bisection (it is strictly monotone)."""
    y = np.asarray(y, dtype=float)
    if kind == BaseKind.LINEAR_GAUSSIAN:
        return y.copy()
    if kind == BaseKind.SIGMOID_BERNOULLI:
        yc = np.clip(y, 1e-12, 1.0 - 1e-12)
        return np.log(yc / (1.0 - yc))
    lo_arr = np.full(y.shape, lo)
    hi_arr = np.full(y.shape, hi)
    for _ in range(80):
        mid = 0.5 * (lo_arr + hi_arr)
        below = base_eval(kind, mid) < y
        lo_arr = np.where(below, mid, lo_arr)
        hi_arr = np.where(below, hi_arr, mid)
    return 0.5 * (lo_arr + hi_arr)


def init_rbm(
    n_vis: int,
    n_hid: int,
    vis: BaseKind,
    hid_base: BaseKind,
    rng: np.random.Generator,
    data_means=None,
) -> RbmModel:
    """Fresh model for phase (a): reduced single-component hidden units.

    W ~ N(0, 0.01^2); hidden biases zero; visible biases the inverse base
    activation of the pixel means (clipped to [-4, 4]) so the model's
    unconditional reconstruction starts near the data marginals.
    """
    W = rng.normal(0.0, 0.01, size=(n_vis, n_hid))
    if data_means is None:
        a = np.zeros(n_vis)
    else:
        a = np.clip(inverse_base_eval(vis, data_means), -4.0, 4.0)
    return RbmModel(W=W, a=a, b=np.zeros(n_hid), vis=vis, hid=TcaParams.reduced(hid_base, n_hid, 1))


def swap_mixture(m: RbmModel, n_components: int, rng: np.random.Generator, spread=0.1) -> RbmModel:
    """Phase (b) start: replace hidden units by M-component mixtures.

    A = 0 and small random B keep each transfer function near the base
    activation, so metrics continue where phase (a) left off.
    """
    hid = TcaParams.near_base(m.hid.base, m.n_hid, n_components, rng, spread)
    return replace(m, hid=hid)


def _as_batch(v, dim, name):
    v = np.asarray(v, dtype=float)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != dim:
        raise ValueError(f"{name} must have {dim} columns, got shape {v.shape}")
    return v, squeeze


def forward_field(m: RbmModel, x):
    """alpha = W'x + b, rows are samples."""
    x, squeeze = _as_batch(x, m.n_vis, "x")
    alpha = x @ m.W + m.b
    return alpha[0] if squeeze else alpha


def backward_field(m: RbmModel, h):
    """beta = W h + a, rows are samples."""
    h, squeeze = _as_batch(h, m.n_hid, "h")
    beta = h @ m.W.T + m.a
    return beta[0] if squeeze else beta


def _check_mode(mode):
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")


def hidden_step(m: RbmModel, x, mode="deterministic", rng=None):
    """Hidden values given visibles: mixture sample or mixture mean."""
    _check_mode(mode)
    alpha = forward_field(m, x)
    if mode == "stochastic":
        return tca_sample(m.hid, alpha, rng)
    return tca_eval(m.hid, alpha)


def visible_step(m: RbmModel, h, mode="deterministic", rng=None):
    """Visible values given hiddens: base-unit sample or mean."""
    _check_mode(mode)
    beta = backward_field(m, h)
    if mode == "stochastic":
        return base_sample(m.vis, beta, rng)
    return base_eval(m.vis, beta)


def gibbs_chain(m: RbmModel, x0, k: int, mode="deterministic", rng=None):
    """k alternations starting from data; returns (x_k, alpha_0, beta_k)."""
    if k < 1:
        raise ValueError(f"need k >= 1 Gibbs steps, got {k}")
    _check_mode(mode)
    alpha0 = forward_field(m, x0)
    x = x0
    for _ in range(k):
        h = hidden_step(m, x, mode, rng)
        beta = backward_field(m, h)
        if mode == "stochastic":
            x = base_sample(m.vis, beta, rng)
        else:
            x = base_eval(m.vis, beta)
    return x, alpha0, beta


def free_energy(m: RbmModel, x):
    """F(x) = -a'x - sum_i LZ_i(alpha_i); lower means more likely."""
    xb, squeeze = _as_batch(x, m.n_vis, "x")
    alpha = xb @ m.W + m.b
    F = -xb @ m.a - tca_logpartition(m.hid, alpha).sum(axis=1)
    return float(F[0]) if squeeze else F


def free_energy_grads(m: RbmModel, x, weights=None):
    """Gradients of the weighted batch mean of F(x) for every block.

    Returns a dict with keys W, a, b, A, B.  weights defaults to 1/S per
    sample; pass signed weights to build classifier-style objectives out
    of free-energy differences.
    """
    xb, _ = _as_batch(x, m.n_vis, "x")
    s = xb.shape[0]
    w = np.full(s, 1.0 / s) if weights is None else np.asarray(weights, dtype=float)
    alpha = xb @ m.W + m.b  # (S, H)
    hhat = tca_eval(m.hid, alpha)  # (S, H)
    da = -(w @ xb)
    db = -(w @ hhat)
    dW = -(xb * w[:, None]).T @ hhat
    # mixture-parameter blocks: LZ_i = mean_j exp(-A) L0(exp(A) alpha + B)
    scale = np.exp(m.hid.A)  # (H, M)
    u = scale * alpha[..., None] + m.hid.B  # (S, H, M)
    f0 = base_eval(m.hid.base, u)
    L0 = base_logpartition(m.hid.base, u)
    mm = m.hid.m
    wa = w[:, None, None]
    dA = -(wa * (alpha[..., None] * f0 - L0 / scale)).sum(axis=0) / mm
    dB = -(wa * (f0 / scale)).sum(axis=0) / mm
    return {"W": dW, "a": da, "b": db, "A": dA, "B": dB}


def conditional_loglik(m: RbmModel, x, beta):
    """Mean over samples of log p(x | beta) = sum_j beta_j x_j - L0(beta_j).

    The visible units are an exponential family in beta, so this is the
    exact conditional log-density of the data under the reconstruction
    field (up to the fixed base measure).
    """
    xb, _ = _as_batch(x, m.n_vis, "x")
    bb, _ = _as_batch(beta, m.n_vis, "beta")
    if m.vis in (BaseKind.TED,):
        if xb.min() < 0.0 or xb.max() > 1.0:
            raise ValueError("visible data outside [0,1] support")
    elif m.vis == BaseKind.SIGMOID_BERNOULLI:
        if not np.all((xb == 0.0) | (xb == 1.0)):
            raise ValueError("Bernoulli visibles must be 0/1")
    per_sample = (bb * xb - base_logpartition(m.vis, bb)).sum(axis=1)
    return float(per_sample.mean())


def _apply_update(m: RbmModel, gd, gm, lr, tca_lr, freeze_tca):
    W = m.W - lr * (gd["W"] - gm["W"])
    a = m.a - lr * (gd["a"] - gm["a"])
    b = m.b - lr * (gd["b"] - gm["b"])
    if freeze_tca:
        hid = m.hid
    else:
        hid = TcaParams(
            m.hid.base,
            m.hid.A - tca_lr * (gd["A"] - gm["A"]),
            m.hid.B - tca_lr * (gd["B"] - gm["B"]),
        )
    for block in (W, a, b, hid.A, hid.B):
        if not np.all(np.isfinite(block)):
            raise TrainingFailure("NaN in contrastive-divergence update")
    return RbmModel(W=W, a=a, b=b, vis=m.vis, hid=hid)


def cd_step(
    m: RbmModel,
    batch,
    k: int = 1,
    lr: float = 0.05,
    tca_lr: float = 0.01,
    freeze_tca: bool = False,
    mode: str = "deterministic",
    rng: np.random.Generator = None,
):
    """One contrastive-divergence update on a batch.

    theta <- theta - lr * (dF(data)/dtheta - dF(recon)/dtheta), batch
    averaged; mixture parameters use tca_lr.  Returns (model', metrics)
    with the batch reconstruction MSE and mean conditional log-likelihood.
    """
    batch, _ = _as_batch(batch, m.n_vis, "batch")
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    x_recon, _, beta_k = gibbs_chain(m, batch, k, mode, rng)
    gd = free_energy_grads(m, batch)
    gm = free_energy_grads(m, x_recon)
    m2 = _apply_update(m, gd, gm, lr, tca_lr, freeze_tca)
    mse = float(np.mean((batch - x_recon) ** 2))
    ll = conditional_loglik(m, batch, beta_k)
    return m2, {"mse": mse, "cond_ll": ll}


def reconstruction_metrics(m: RbmModel, X, k: int = 1, mode: str = "deterministic", rng=None):
    """Dataset MSE after a k-step chain plus mean conditional log-likelihood."""
    X, _ = _as_batch(X, m.n_vis, "X")
    x_recon, _, beta_k = gibbs_chain(m, X, k, mode, rng)
    mse = float(np.mean((X - x_recon) ** 2))
    ll = conditional_loglik(m, X, beta_k)
    return mse, ll


def train_rbm_phases(
    X,
    n_hid: int,
    vis: BaseKind,
    hid_base: BaseKind,
    n_components: int,
    cfg: TrainConfig,
    epochs_a: int,
    epochs_b: int,
    epochs_c: int,
    mode: str = "deterministic",
    callback=None,
    model_sink: dict | None = None,
    plateau_epochs: int | None = None,
    plateau_rtol: float = 1e-3,
):
    """Three-phase protocol: base AF, frozen mixtures, trainable mixtures.

    (a) trains a reduced single-component model (exactly the base AF);
    (b) swaps in n_components-component hidden units with near-base init
    and keeps them frozen while W, a, b adapt; (c) unfreezes the mixture
    parameters.  Returns (model, history) where history rows are dicts
    with epoch, phase, mse and cond_ll on the training set.  When
    model_sink is given, its "model" key tracks the current model so a
    callback can inspect it (e.g. to dump reconstructions mid-run).
    Phase changes are epoch-count triggered; with plateau_epochs set, a
    phase also ends early once MSE has not improved by a relative
    plateau_rtol within that many epochs.
    """
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    m = init_rbm(X.shape[1], n_hid, vis, hid_base, rng, data_means=X.mean(axis=0))
    history = []
    epoch = 0

    def run_phase(m, phase, n_epochs, freeze):
        nonlocal epoch
        best, best_at = np.inf, 0
        for it in range(n_epochs):
            for idx in batches(X.shape[0], cfg.batch_size, cfg.seed + epoch):
                m, _ = cd_step(
                    m, X[idx], cfg.cd_k, cfg.lr, cfg.tca_lr, freeze, mode, rng
                )
            epoch += 1
            mse, ll = reconstruction_metrics(m, X, k=1, mode="deterministic")
            row = {"epoch": epoch, "phase": phase, "mse": mse, "cond_ll": ll}
            history.append(row)
            if model_sink is not None:
                model_sink["model"] = m
            if callback is not None:
                callback(row)
            if mse < best * (1.0 - plateau_rtol):
                best, best_at = mse, it
            elif plateau_epochs is not None and it - best_at >= plateau_epochs:
                break
        return m

    m = run_phase(m, "a", epochs_a, True)
    m = swap_mixture(m, n_components, rng)
    m = run_phase(m, "b", epochs_b, True)
    m = run_phase(m, "c", epochs_c, False)
    return m, history
