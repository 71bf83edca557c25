"""Toy encoder 2 -> 64 -> 3 with batch norm and unit-norm output, plus the
small predictor head used by the SimSiam/BYOL-style baselines and ablations."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import substream, uniform

TRAIN = "train"
EVAL = "eval"


class BatchTooSmallError(ValueError):
    pass


def _param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("batch norm eps must be > 0")
        if not 0 < self.momentum < 1:
            raise ValueError("batch norm momentum must lie in (0, 1)")

    @classmethod
    def init(cls, dim: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(_param(np.ones(dim)), _param(np.zeros(dim)), np.zeros(dim), np.ones(dim), momentum, eps)

    def __call__(self, h: Tensor, mode: str) -> Tensor:
        if mode == TRAIN:
            n = h.shape[0]
            if n < 2:
                raise BatchTooSmallError(f"train-mode batch norm needs >= 2 rows, got {n}")
            mu = ad.mean(h, axis=0, keepdims=True)
            var = ad.variance(h, axis=0, keepdims=True)
            xhat = (h - mu) / ad.sqrt(var + self.eps)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data[0]
            self.running_var = (1 - m) * self.running_var + m * var.data[0] * n / (n - 1)
        elif mode == EVAL:
            xhat = (h - self.running_mean) / np.sqrt(self.running_var + self.eps)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return xhat * self.gamma + self.beta


@dataclass
class EncoderParams:
    W1: Tensor
    b1: Tensor
    bn1: BatchNormState
    W2: Tensor
    bn2: BatchNormState

    def parameters(self) -> list[Tensor]:
        return [self.W1, self.b1, self.bn1.gamma, self.bn1.beta, self.W2, self.bn2.gamma, self.bn2.beta]

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Every tensor and buffer, in checkpoint order."""
        return {
            "W1": self.W1.data,
            "b1": self.b1.data,
            "bn1.gamma": self.bn1.gamma.data,
            "bn1.beta": self.bn1.beta.data,
            "bn1.running_mean": self.bn1.running_mean,
            "bn1.running_var": self.bn1.running_var,
            "W2": self.W2.data,
            "bn2.gamma": self.bn2.gamma.data,
            "bn2.beta": self.bn2.beta.data,
            "bn2.running_mean": self.bn2.running_mean,
            "bn2.running_var": self.bn2.running_var,
        }

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, arr in self.named_arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass
class PredictorParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    def parameters(self) -> list[Tensor]:
        return [self.W1, self.b1, self.W2, self.b2]


def _linear_init(gen: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return uniform(gen, -bound, bound, (fan_in, fan_out))


def init_encoder(
    seed: int, *labels, in_dim: int = 2, hidden: int = 64, out_dim: int = 3,
    bn_momentum: float = 0.1, bn_eps: float = 1e-5,
) -> EncoderParams:
    gen = substream(seed, "encoder", *labels)
    W1 = _linear_init(gen, in_dim, hidden)
    b1 = uniform(gen, -math.sqrt(1.0 / in_dim), math.sqrt(1.0 / in_dim), (hidden,))
    W2 = _linear_init(gen, hidden, out_dim)
    return EncoderParams(
        _param(W1), _param(b1), BatchNormState.init(hidden, bn_momentum, bn_eps),
        _param(W2), BatchNormState.init(out_dim, bn_momentum, bn_eps),
    )


def init_predictor(seed: int, *labels, dim: int = 3, hidden: int = 16) -> PredictorParams:
    gen = substream(seed, "predictor", *labels)
    bound1, bound2 = math.sqrt(1.0 / dim), math.sqrt(1.0 / hidden)
    return PredictorParams(
        _param(_linear_init(gen, dim, hidden)),
        _param(uniform(gen, -bound1, bound1, (hidden,))),
        _param(_linear_init(gen, hidden, dim)),
        _param(uniform(gen, -bound2, bound2, (dim,))),
    )


def encode(params: EncoderParams, x, mode: str = TRAIN) -> Tensor:
    """Unit-norm embeddings; train mode uses batch statistics and updates running stats."""
    x = ad.as_tensor(x)
    if mode == TRAIN and x.shape[0] < 2:
        raise BatchTooSmallError(f"train-mode encode needs >= 2 rows, got {x.shape[0]}")
    h = params.bn1(x @ params.W1 + params.b1, mode)
    h = params.bn2(ad.relu(h) @ params.W2, mode)
    return ad.l2_normalize_rows(h)


def predict(params: PredictorParams, z: Tensor) -> Tensor:
    h = ad.relu(z @ params.W1 + params.b1)
    return ad.l2_normalize_rows(h @ params.W2 + params.b2)


def parameter_count(params: EncoderParams | PredictorParams) -> int:
    return int(sum(p.data.size for p in params.parameters()))


def copy_params(src: EncoderParams) -> EncoderParams:
    def bn(s: BatchNormState) -> BatchNormState:
        return BatchNormState(
            _param(s.gamma.data.copy()), _param(s.beta.data.copy()),
            s.running_mean.copy(), s.running_var.copy(), s.momentum, s.eps,
        )

    return EncoderParams(
        _param(src.W1.data.copy()), _param(src.b1.data.copy()), bn(src.bn1),
        _param(src.W2.data.copy()), bn(src.bn2),
    )


def ema_update(target: EncoderParams, online: EncoderParams, tau_ema: float) -> EncoderParams:
    """target <- tau * target + (1 - tau) * online, in place; BN running stats are copied."""
    if not 0.0 <= tau_ema <= 1.0:
        raise ValueError(f"tau_ema must lie in [0, 1], got {tau_ema}")
    for t, o in zip(target.parameters(), online.parameters()):
        if tau_ema == 0.0:
            blended = o.data.copy()
        elif tau_ema == 1.0:
            continue
        else:
            blended = tau_ema * t.data + (1.0 - tau_ema) * o.data
        t.data = Tensor(blended).data
    for tb, ob in ((target.bn1, online.bn1), (target.bn2, online.bn2)):
        tb.running_mean = ob.running_mean.copy()
        tb.running_var = ob.running_var.copy()
    return target


# checkpoints: one .npz per encoder, arrays stored under their checkpoint names


def save_checkpoint(params: EncoderParams, path: str | Path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, **params.named_arrays())


def load_checkpoint(path: str | Path, bn_momentum: float = 0.1, bn_eps: float = 1e-5) -> EncoderParams:
    with np.load(path) as z:
        a = {k: z[k].copy() for k in z.files}

    def bn(prefix: str) -> BatchNormState:
        return BatchNormState(
            _param(a[f"{prefix}.gamma"]), _param(a[f"{prefix}.beta"]),
            a[f"{prefix}.running_mean"], a[f"{prefix}.running_var"], bn_momentum, bn_eps,
        )

    return EncoderParams(_param(a["W1"]), _param(a["b1"]), bn("bn1"), _param(a["W2"]), bn("bn2"))
