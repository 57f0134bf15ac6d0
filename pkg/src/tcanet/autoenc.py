"""Small dense auto-encoder with compound activations in the encoder.

Architecture (for 784-pixel images): dense 784->32 + compound activation,
dense 32->8 + compound activation, then a mirrored decoder 8->32->784
using the plain base activation.  Trained by stochastic gradient descent
on per-pixel mean squared error; the compound parameters receive their
gradients through the same backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tcanet.activations import (
    BaseKind,
    TcaParams,
    base_deriv,
    base_eval,
    tca_eval,
    tca_grads,
)
from tcanet.config import TrainConfig
from tcanet.data import batches
from tcanet.errors import TrainingFailure
from tcanet.rbm import inverse_base_eval

__all__ = [
    "AeModel",
    "init_ae",
    "ae_forward",
    "ae_loss",
    "ae_backprop",
    "ae_train_step",
    "ae_evaluate",
    "swap_ae_mixture",
    "train_autoencoder",
]


@dataclass
class AeModel:
    """Encoder dense+compound layers, decoder dense+base layers."""

    enc_w: list
    enc_b: list
    enc_tca: list
    dec_w: list
    dec_b: list
    base: BaseKind

    def __post_init__(self):
        if len(self.enc_w) != len(self.enc_b) or len(self.enc_w) != len(self.enc_tca):
            raise ValueError("encoder lists must have equal length")
        if len(self.dec_w) != len(self.dec_b):
            raise ValueError("decoder lists must have equal length")
        dim = self.enc_w[0].shape[0]
        for W, p in zip(self.enc_w, self.enc_tca):
            if W.shape[0] != dim or p.n != W.shape[1]:
                raise ValueError("encoder dimensions do not chain")
            dim = W.shape[1]
        for W in self.dec_w:
            if W.shape[0] != dim:
                raise ValueError("decoder dimensions do not chain")
            dim = W.shape[1]
        if dim != self.enc_w[0].shape[0]:
            raise ValueError("decoder must end at the input dimension")


def init_ae(
    n_in: int,
    hidden,
    base: BaseKind,
    rng: np.random.Generator,
    data_means=None,
) -> AeModel:
    """Fresh model with reduced (single-component) encoder activations.

    Dense weights use a fan-scaled normal init compensated for the base
    activation's slope at 0, so signals neither die nor saturate at the
    start.  The output bias starts at the inverse activation of the pixel
    means (clipped), which removes the long background-settling phase.
    """
    slope = float(base_deriv(base, 0.0))
    dims = [n_in] + list(hidden)
    enc_w, enc_b, enc_tca = [], [], []
    for i in range(len(hidden)):
        fan_in, fan_out = dims[i], dims[i + 1]
        s = min(np.sqrt(2.0 / (fan_in + fan_out)) / slope, 1.5)
        enc_w.append(rng.normal(0.0, s, size=(fan_in, fan_out)))
        enc_b.append(np.zeros(fan_out))
        enc_tca.append(TcaParams.reduced(base, fan_out, 1))
    dec_dims = dims[::-1]
    dec_w, dec_b = [], []
    for i in range(len(hidden)):
        fan_in, fan_out = dec_dims[i], dec_dims[i + 1]
        s = min(np.sqrt(2.0 / (fan_in + fan_out)) / slope, 1.5)
        dec_w.append(rng.normal(0.0, s, size=(fan_in, fan_out)))
        dec_b.append(np.zeros(fan_out))
    if data_means is not None:
        dec_b[-1] = np.clip(inverse_base_eval(base, data_means), -25.0, 25.0)
    return AeModel(enc_w, enc_b, enc_tca, dec_w, dec_b, base)


def swap_ae_mixture(m: AeModel, n_components: int, rng: np.random.Generator, spread=0.1) -> AeModel:
    """Give every encoder activation n_components near-base components."""
    tcas = [
        TcaParams.near_base(p.base, p.n, n_components, rng, spread)
        for p in m.enc_tca
    ]
    return AeModel(m.enc_w, m.enc_b, tcas, m.dec_w, m.dec_b, m.base)


def ae_forward(m: AeModel, x):
    """Forward pass; returns (x_hat, cache) with every field and layer input."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    cache = {"x": x, "enc_in": [], "enc_z": [], "dec_in": [], "dec_z": []}
    h = x
    for W, b, p in zip(m.enc_w, m.enc_b, m.enc_tca):
        cache["enc_in"].append(h)
        z = h @ W + b
        cache["enc_z"].append(z)
        h = tca_eval(p, z)
    for W, b in zip(m.dec_w, m.dec_b):
        cache["dec_in"].append(h)
        z = h @ W + b
        cache["dec_z"].append(z)
        h = base_eval(m.base, z)
    x_hat = h[0] if squeeze else h
    return x_hat, cache


def ae_loss(x_hat, x) -> float:
    """Mean over samples and pixels of the squared reconstruction error."""
    x_hat = np.asarray(x_hat, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    return float(np.mean((x_hat - x) ** 2))


def ae_backprop(m: AeModel, x):
    """Loss and gradients of ae_loss for every parameter block.

    Returns (loss, grads) where grads holds lists enc_w, enc_b, enc_A,
    enc_B, dec_w, dec_b matching the model layout.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    x_hat, cache = ae_forward(m, x)
    loss = ae_loss(x_hat, x)
    grads = {
        "enc_w": [None] * len(m.enc_w),
        "enc_b": [None] * len(m.enc_b),
        "enc_A": [None] * len(m.enc_tca),
        "enc_B": [None] * len(m.enc_tca),
        "dec_w": [None] * len(m.dec_w),
        "dec_b": [None] * len(m.dec_b),
    }
    d = 2.0 * (x_hat - x) / x.size  # dL/dx_hat
    for i in range(len(m.dec_w) - 1, -1, -1):
        dz = d * base_deriv(m.base, cache["dec_z"][i])
        grads["dec_w"][i] = cache["dec_in"][i].T @ dz
        grads["dec_b"][i] = dz.sum(axis=0)
        d = dz @ m.dec_w[i].T
    for i in range(len(m.enc_w) - 1, -1, -1):
        dz, dA, dB = tca_grads(m.enc_tca[i], cache["enc_z"][i], d)
        grads["enc_A"][i] = dA
        grads["enc_B"][i] = dB
        grads["enc_w"][i] = cache["enc_in"][i].T @ dz
        grads["enc_b"][i] = dz.sum(axis=0)
        d = dz @ m.enc_w[i].T
    return loss, grads


def ae_train_step(m: AeModel, batch, lr: float, freeze_tca: bool, tca_lr=None) -> AeModel:
    """One SGD step; compound parameters update at tca_lr (default lr)."""
    if tca_lr is None:
        tca_lr = lr
    _, g = ae_backprop(m, batch)
    enc_w = [W - lr * dW for W, dW in zip(m.enc_w, g["enc_w"])]
    enc_b = [b - lr * db for b, db in zip(m.enc_b, g["enc_b"])]
    dec_w = [W - lr * dW for W, dW in zip(m.dec_w, g["dec_w"])]
    dec_b = [b - lr * db for b, db in zip(m.dec_b, g["dec_b"])]
    if freeze_tca:
        tcas = m.enc_tca
    else:
        tcas = [
            TcaParams(p.base, p.A - tca_lr * dA, p.B - tca_lr * dB)
            for p, dA, dB in zip(m.enc_tca, g["enc_A"], g["enc_B"])
        ]
    for block in enc_w + enc_b + dec_w + dec_b + [p.A for p in tcas]:
        if not np.all(np.isfinite(block)):
            raise TrainingFailure("NaN in auto-encoder update")
    return AeModel(enc_w, enc_b, tcas, dec_w, dec_b, m.base)


def ae_evaluate(m: AeModel, X) -> float:
    """Mean per-pixel squared reconstruction error over a dataset."""
    x_hat, _ = ae_forward(m, X)
    return ae_loss(x_hat, np.asarray(X, dtype=float))


def train_autoencoder(
    X,
    hidden,
    base: BaseKind,
    n_components: int,
    cfg: TrainConfig,
    epochs_frozen: int,
    epochs_tca: int,
    plateau_epochs: int = 25,
    plateau_rtol: float = 1e-3,
    callback=None,
):
    """Two-phase protocol: converge with base activations, then enable TCAs.

    Phase one trains the reduced model for at most epochs_frozen epochs,
    stopping early once plateau_epochs epochs pass without a relative
    train-MSE improvement of plateau_rtol.  Phase two swaps in
    n_components-component encoder activations and continues with them
    trainable (epochs_tca = 0 skips the swap entirely).  Returns
    (model, history); history rows carry epoch, phase and train mse.
    """
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    m = init_ae(X.shape[1], hidden, base, rng, data_means=X.mean(axis=0))
    history = []
    epoch = 0

    def run(m, phase, n_epochs, freeze):
        nonlocal epoch
        best = np.inf
        since_best = 0
        for _ in range(n_epochs):
            for idx in batches(X.shape[0], cfg.batch_size, cfg.seed + epoch):
                m = ae_train_step(m, X[idx], cfg.lr, freeze, cfg.tca_lr)
            epoch += 1
            mse = ae_evaluate(m, X)
            row = {"epoch": epoch, "phase": phase, "mse": mse}
            history.append(row)
            if callback is not None:
                callback(row)
            if mse < best * (1.0 - plateau_rtol):
                best, since_best = mse, 0
            else:
                since_best += 1
                if since_best >= plateau_epochs:
                    break
        return m

    m = run(m, "frozen", epochs_frozen, True)
    if epochs_tca > 0:
        m = swap_ae_mixture(m, n_components, rng)
        m = run(m, "tca", epochs_tca, False)
    return m, history
