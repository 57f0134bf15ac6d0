"""Stacked RBMs with a label-aware top layer.

The stack is trained greedily layer by layer; the top RBM sees the last
hidden code concatenated with a one-hot label block (label block last).
Classification scores a sample by the negative free energy of the top
RBM under each label hypothesis, so no partition function is needed.
Fine-tuning uses a simplified tied-weight up-down pass: deterministic
up, CD at the top with labels injected, deterministic down, and a
free-energy-difference update for every stack layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tcanet.activations import BaseKind, TcaParams
from tcanet.config import TrainConfig
from tcanet.data import batches
from tcanet.rbm import (
    RbmModel,
    _apply_update,
    _as_batch,
    free_energy,
    free_energy_grads,
    gibbs_chain,
    hidden_step,
    init_rbm,
    reconstruction_metrics,
    swap_mixture,
    train_rbm_phases,
    visible_step,
)

__all__ = [
    "DbnModel",
    "one_hot",
    "init_dbn",
    "stack_forward",
    "train_layerwise",
    "top_train",
    "classify_free_energy",
    "classification_error",
    "reconstruction_error",
    "updown_finetune",
    "swap_dbn_mixture",
    "swap_top_mixture",
]


@dataclass
class DbnModel:
    """Feature stack, label-aware top RBM, and the class list."""

    stack: list
    top: RbmModel
    classes: list

    def __post_init__(self):
        if not self.classes:
            raise ValueError("classes must be non-empty")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class labels")
        dim = None
        for i, layer in enumerate(self.stack):
            if dim is not None and layer.n_vis != dim:
                raise ValueError(f"stack layer {i} expects {layer.n_vis} inputs, got {dim}")
            dim = layer.n_hid
        feat = dim if dim is not None else self.top.n_vis - len(self.classes)
        if self.top.n_vis != feat + len(self.classes):
            raise ValueError(
                f"top visible dim {self.top.n_vis} != features {feat} + {len(self.classes)} labels"
            )

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_features(self) -> int:
        return self.top.n_vis - len(self.classes)


def one_hot(labels, classes):
    """Rows of the identity selected by label; unknown labels are an error."""
    classes = list(classes)
    labels = np.atleast_1d(np.asarray(labels))
    idx = np.empty(labels.shape[0], dtype=int)
    for k, lab in enumerate(labels):
        try:
            idx[k] = classes.index(lab)
        except ValueError:
            raise ValueError(f"label {lab!r} not in classes {classes}") from None
    return np.eye(len(classes))[idx]


def init_dbn(
    n_vis: int,
    hidden_sizes,
    n_top: int,
    classes,
    vis: BaseKind,
    base: BaseKind,
    rng: np.random.Generator,
) -> DbnModel:
    """Untrained DBN with reduced (single-component) activations throughout."""
    classes = list(classes)
    stack = []
    dim = n_vis
    for h in hidden_sizes:
        stack.append(init_rbm(dim, h, vis, base, rng))
        dim = h
    top = init_rbm(dim + len(classes), n_top, vis, base, rng)
    return DbnModel(stack, top, classes)


def stack_forward(d: DbnModel, x, mode: str = "deterministic", rng=None):
    """Hidden code of the last stack layer; empty stack returns x unchanged."""
    h = np.asarray(x, dtype=float)
    for layer in d.stack:
        h = hidden_step(layer, h, mode=mode, rng=rng)
    return h


def train_layerwise(
    d: DbnModel,
    X,
    n_components: int,
    cfg: TrainConfig,
    epochs_a: int,
    epochs_b: int,
    epochs_c: int,
    mode: str = "deterministic",
    callback=None,
):
    """Greedy pre-training of every stack layer through the three phases.

    Each layer is trained on the deterministic output of the previous one,
    using the same phase schedule (base convergence, frozen mixture,
    mixture enabled).  Layer sizes and unit kinds come from the existing
    stack.  Returns (trained model, history) where history rows gain a
    "layer" key.
    """
    X = np.asarray(X, dtype=float)
    history = []
    stack = []
    layer_input = X
    for li, layer in enumerate(d.stack):
        def cb(row, li=li):
            row = dict(row, layer=li)
            history.append(row)
            if callback is not None:
                callback(row)

        trained, _ = train_rbm_phases(
            layer_input,
            layer.n_hid,
            layer.vis,
            layer.hid.base,
            n_components,
            cfg,
            epochs_a,
            epochs_b,
            epochs_c,
            mode=mode,
            callback=cb,
        )
        stack.append(trained)
        layer_input = hidden_step(trained, layer_input, mode="deterministic")
    return DbnModel(stack, d.top, d.classes), history


def _class_scores(d: DbnModel, feats):
    """Negative top free energy for every label hypothesis; shape (S, C)."""
    feats, _ = _as_batch(feats, d.n_features, "features")
    S = feats.shape[0]
    C = d.n_classes
    scores = np.empty((S, C))
    for c in range(C):
        lab = np.zeros((S, C))
        lab[:, c] = 1.0
        scores[:, c] = -free_energy(d.top, np.concatenate([feats, lab], axis=1))
    return scores


def classify_free_energy(d: DbnModel, x):
    """(labels, scores): argmax of -F over label hypotheses, ties to the
    lowest class index."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    feats = stack_forward(d, x if not squeeze else x[None, :])
    scores = _class_scores(d, feats)
    idx = np.argmax(scores, axis=1)  # first max wins = lowest class index
    labels = np.asarray(d.classes)[idx]
    if squeeze:
        return labels[0], scores[0]
    return labels, scores


def classification_error(d: DbnModel, X, y) -> float:
    """Fraction of samples whose free-energy label disagrees with y."""
    pred, _ = classify_free_energy(d, X)
    return float(np.mean(pred != np.asarray(y)))


def _ce_grads(d: DbnModel, feats, labs, lambda_fe: float):
    """Gradient of lambda_fe * cross-entropy(softmax of class scores).

    Expressed as a weighted free-energy gradient over every (sample,
    label-hypothesis) pair: weight (1{y=true} - p_y) * lambda_fe / S.
    """
    S = feats.shape[0]
    C = d.n_classes
    scores = _class_scores(d, feats)
    p = np.exp(scores - scores.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    w = lambda_fe * (labs - p) / S
    x_all = np.concatenate(
        [np.concatenate([feats, np.tile(np.eye(C)[c], (S, 1))], axis=1) for c in range(C)],
        axis=0,
    )
    return free_energy_grads(d.top, x_all, weights=w.T.reshape(-1))


def _top_update(d: DbnModel, feats, labs, cfg: TrainConfig, rng, mode: str):
    """One CD + free-energy-cost update of the top RBM on a batch."""
    v = np.concatenate([feats, labs], axis=1)
    recon, _, _ = gibbs_chain(d.top, v, cfg.cd_k, mode, rng)
    gd = free_energy_grads(d.top, v)
    gm = free_energy_grads(d.top, recon)
    if cfg.lambda_fe != 0.0:
        g_ce = _ce_grads(d, feats, labs, cfg.lambda_fe)
        for k in gd:
            gd[k] = gd[k] + g_ce[k]
    top = _apply_update(d.top, gd, gm, cfg.lr, cfg.tca_lr, cfg.freeze_tca)
    return DbnModel(d.stack, top, d.classes)


def top_train(
    d: DbnModel,
    X,
    y,
    cfg: TrainConfig,
    epochs: int,
    mode: str = "stochastic",
    X_val=None,
    y_val=None,
    callback=None,
):
    """Train the top RBM on [stack features | one-hot labels].

    The update combines CD (cfg.cd_k Gibbs steps) with the gradient of
    lambda_fe times the cross-entropy of the softmax over class scores.
    Returns (model, history); rows carry epoch, train_err and, when a
    validation split is given, val_err.
    """
    X = np.asarray(X, dtype=float)
    labs_all = one_hot(y, d.classes)
    feats_all = stack_forward(d, X)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(epochs):
        for idx in batches(X.shape[0], cfg.batch_size, cfg.seed + epoch):
            d = _top_update(d, feats_all[idx], labs_all[idx], cfg, rng, mode)
        row = {"epoch": epoch + 1, "train_err": classification_error(d, X, y)}
        if X_val is not None:
            row["val_err"] = classification_error(d, X_val, y_val)
        history.append(row)
        if callback is not None:
            callback(row)
    return d, history


def _down_pass(d: DbnModel, h_top_feats):
    """Deterministic generative pass from last-layer code to pixel space."""
    states = [None] * len(d.stack)
    h = h_top_feats
    for li in range(len(d.stack) - 1, -1, -1):
        states[li] = visible_step(d.stack[li], h, mode="deterministic")
        h = states[li]
    return states  # states[li] = reconstruction of stack[li]'s input


def reconstruction_error(d: DbnModel, X, y, cfg: TrainConfig, rng=None):
    """Bottom-layer MSE after a full up, top CD chain, and down pass."""
    X = np.asarray(X, dtype=float)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    ups = [X]
    for layer in d.stack:
        ups.append(hidden_step(layer, ups[-1], mode="deterministic"))
    labs = one_hot(y, d.classes)
    v_top = np.concatenate([ups[-1], labs], axis=1)
    recon, _, _ = gibbs_chain(d.top, v_top, cfg.cd_k, "deterministic", rng)
    states = _down_pass(d, recon[:, : d.n_features])
    return float(np.mean((states[0] - X) ** 2))


def updown_finetune(
    d: DbnModel,
    X,
    y,
    cfg: TrainConfig,
    epochs: int,
    X_val=None,
    y_val=None,
    mode: str = "stochastic",
    callback=None,
):
    """Simplified tied-weight up-down fine-tuning of the whole network.

    Per batch: deterministic up-pass collecting every layer input; top
    update by CD with labels injected (plus the lambda_fe cost used in
    top_train); deterministic down-pass from the top reconstruction; each
    stack layer then takes a free-energy-difference step with its up-pass
    input as the data term and the down-pass reconstruction as the model
    term.  Returns (model, history) with per-epoch recon_mse and, when a
    validation split is given, val_err.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    labs_all = one_hot(y, d.classes)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(epochs):
        for idx in batches(X.shape[0], cfg.batch_size, cfg.seed + 7919 * (epoch + 1)):
            xb, lb = X[idx], labs_all[idx]
            ups = [xb]
            for layer in d.stack:
                ups.append(hidden_step(layer, ups[-1], mode="deterministic"))
            v_top = np.concatenate([ups[-1], lb], axis=1)
            recon, _, _ = gibbs_chain(d.top, v_top, cfg.cd_k, mode, rng)
            gd = free_energy_grads(d.top, v_top)
            gm = free_energy_grads(d.top, recon)
            if cfg.lambda_fe != 0.0:
                g_ce = _ce_grads(d, ups[-1], lb, cfg.lambda_fe)
                for k in gd:
                    gd[k] = gd[k] + g_ce[k]
            top = _apply_update(d.top, gd, gm, cfg.lr, cfg.tca_lr, cfg.freeze_tca)
            d = DbnModel(d.stack, top, d.classes)

            states = _down_pass(d, recon[:, : d.n_features])
            stack = []
            for li, layer in enumerate(d.stack):
                gd_l = free_energy_grads(layer, ups[li])
                gm_l = free_energy_grads(layer, states[li])
                stack.append(
                    _apply_update(layer, gd_l, gm_l, cfg.lr, cfg.tca_lr, cfg.freeze_tca)
                )
            d = DbnModel(stack, d.top, d.classes)
        row = {
            "epoch": epoch + 1,
            "recon_mse": reconstruction_error(d, X, y, cfg),
        }
        if X_val is not None:
            row["val_err"] = classification_error(d, X_val, y_val)
        history.append(row)
        if callback is not None:
            callback(row)
    return d, history


def swap_dbn_mixture(d: DbnModel, n_components: int, rng: np.random.Generator, spread=0.1) -> DbnModel:
    """Give every hidden activation in the network n_components components.

    Only valid before training the mixtures: swapping replaces the TCA
    parameters outright, so a layer already carrying trained components
    would lose them.
    """
    stack = [swap_mixture(m, n_components, rng, spread) for m in d.stack]
    top = swap_mixture(d.top, n_components, rng, spread)
    return DbnModel(stack, top, d.classes)


def swap_top_mixture(d: DbnModel, n_components: int, rng: np.random.Generator, spread=0.1) -> DbnModel:
    """Widen only the top RBM; stack layers keep their trained mixtures.

    This is the step between layerwise pre-training (which already swaps
    each stack layer during its own phase (b)) and top training.
    """
    return DbnModel(d.stack, swap_mixture(d.top, n_components, rng, spread), d.classes)
