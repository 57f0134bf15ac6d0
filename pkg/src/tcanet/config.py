"""Shared training configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass
class TrainConfig:
    """Hyperparameters shared by the RBM, DBN and auto-encoder trainers.

    lr applies to dense weights and biases, tca_lr to the compound
    activation parameters (kept lower so the transfer functions move
    slowly relative to the weights).
    """

    lr: float = 0.05
    tca_lr: float = 0.01
    cd_k: int = 1
    batch_size: int = 100
    epochs: int = 10
    freeze_tca: bool = False
    lambda_fe: float = 1.0
    seed: int = 0

    def replace(self, **kw) -> "TrainConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return TrainConfig(**d)
