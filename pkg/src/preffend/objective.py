"""Training objective: classification, map-divergence and swapped-map losses."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numgrad as ng
from .heads import MODES
from .numgrad import Tensor

EPS = 1e-12
ABLATIONS = ("none", "rand-init-maps", "no-cos", "no-rev", "only-cls")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    layers: int = 2
    alpha: float = 0.5
    beta1: float = 2.0
    beta2: float = 1.0
    beta3: float = 1.0
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    mode: str = "joint"
    ablation: str = "none"
    uniform_maps: bool = False  # baseline head without preference maps
    top_k: int = 5
    d: int = 32
    min_count: int = 2  # rarer training tokens share the OOV row
    pattern_hidden: int = 32
    fact_dim: int = 32
    attn_dim: int = 32
    fusion_hidden: int = 64
    eval_batch_size: int = 128
    casefold: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if min(self.beta1, self.beta2, self.beta3) < 0:
            raise ConfigError("loss weights must be non-negative")
        for name in ("min_count", "layers", "batch_size", "epochs", "patience", "top_k", "d", "pattern_hidden",
                     "fact_dim", "attn_dim", "fusion_hidden", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config key(s) {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def effective_betas(self) -> tuple[float, float, float]:
        """Loss weights after ablation switches; the uniform-map baseline keeps only L_cls."""
        b1, b2, b3 = self.beta1, self.beta2, self.beta3
        if self.ablation in ("no-cos", "only-cls") or self.uniform_maps:
            b2 = 0.0
        if self.ablation in ("no-rev", "only-cls") or self.uniform_maps:
            b3 = 0.0
        return b1, b2, b3


@dataclass
class LossBreakdown:
    cls: float
    cos: float
    rev: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


# scalar forms -------------------------------------------------------------


def ce_loss(y: int, p: float) -> float:
    p = min(max(p, EPS), 1.0 - EPS)
    return -y * math.log(p) - (1 - y) * math.log(1.0 - p)


def cos_loss(m_P, m_F) -> float:
    a, b = np.asarray(m_P, dtype=float), np.asarray(m_F, dtype=float)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def reversed_loss(y: int, y_hat_swapped: float) -> float:
    return ce_loss(abs(1 - y), y_hat_swapped)


def total_loss(cls: float, cos: float, rev: float, betas: tuple[float, float, float]) -> LossBreakdown:
    b1, b2, b3 = betas
    return LossBreakdown(cls, cos, rev, b1 * cls + b2 * cos + b3 * rev)


# tensor forms --------------------------------------------------------------


def ce_tensor(y: np.ndarray, p: Tensor) -> Tensor:
    """Per-sample cross-entropy with p clamped to [EPS, 1 - EPS]."""
    pc = ng.clip(p, EPS, 1.0 - EPS)
    y = np.asarray(y, dtype=float)
    pos = ng.mul(ng.log(pc), y)
    neg = ng.mul(ng.log(ng.sub(1.0, pc)), 1.0 - y)
    return ng.scale(ng.add(pos, neg), -1.0)


def cos_tensor(m_P: Tensor, m_F: Tensor) -> Tensor:
    return ng.cosine(m_P, m_F)


def batch_objective(y: np.ndarray, y_hat: Tensor, m_P: Tensor, m_F: Tensor, y_hat_swapped: Tensor,
                    betas: tuple[float, float, float]) -> tuple[Tensor, LossBreakdown]:
    """Mean over the batch of b1*L_cls + b2*L_cos + b3*L_rev, plus the unweighted part means."""
    b1, b2, b3 = betas
    cls = ce_tensor(y, y_hat)
    cos = cos_tensor(m_P, m_F)
    rev = ce_tensor(np.abs(1.0 - np.asarray(y, dtype=float)), y_hat_swapped)
    per_sample = ng.scale(cls, b1)
    if b2:
        per_sample = ng.add(per_sample, ng.scale(cos, b2))
    if b3:
        per_sample = ng.add(per_sample, ng.scale(rev, b3))
    loss = ng.mean(per_sample)
    parts = LossBreakdown(float(cls.values.mean()), float(cos.values.mean()),
                          float(rev.values.mean()), float(loss.values))
    return loss, parts


class Adam:
    """Per-parameter steps from bias-corrected running gradient moments."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
