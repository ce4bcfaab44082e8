"""Training objectives and the per-sample anomaly score.

All functions take latents with a leading batch axis (or none) and return the
per-sample value; reduce with ``.mean()`` for the batch objective.  Shapes:
``O`` and ``G`` are ``(..., d)``, ``views`` is ``(..., K, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import FLOOR, Tensor

MODES = ("CDCL", "CCL", "DCL", "OCC", "CCL_REG")


@dataclass
class LossConfig:
    mode: str = "CDCL"
    temperature: float = 0.1
    gamma: float = 1.0
    eps: float = 1e-4
    weight_decay: float = 0.0
    center: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode: {self.mode!r} is not one of {', '.join(MODES)}")
        for name in ("temperature", "gamma", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name}: must be > 0, got {getattr(self, name)}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay: must be >= 0, got {self.weight_decay}")

    @property
    def uses_bank(self) -> bool:
        return self.mode in ("CDCL", "DCL")


def _check_dims(a: Tensor, b: Tensor) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def squared_distance(a, b) -> Tensor:
    a, b = nx.as_tensor(a), nx.as_tensor(b)
    _check_dims(a, b)
    diff = a - b
    return (diff * diff).sum(axis=-1)


def ccl(O, G) -> Tensor:
    """Contextual contrastive loss: ``||O - G||^2`` per sample."""
    return squared_distance(O, G)


def unit(a) -> Tensor:
    a = nx.as_tensor(a)
    return a / nx.clamp_min(nx.l2_norm(a, axis=-1, keepdims=True), FLOOR)


def cosine_similarity(a, b) -> Tensor:
    """``a.b / (|a| |b|)`` with both norms floored at 1e-12 (zero vectors give 0)."""
    a, b = nx.as_tensor(a), nx.as_tensor(b)
    _check_dims(a, b)
    return (unit(a) * unit(b)).sum(axis=-1)


def h(a, b, temperature: float = 0.1) -> Tensor:
    """Pair score ``exp(cos(a, b) / temperature)``."""
    return nx.exp(cosine_similarity(a, b) * (1.0 / temperature))


def _similarities(O: Tensor, views: Tensor) -> Tensor:
    """Cosine matrix over ``[O, view_1, .., view_K]``: shape ``(..., K+1, K+1)``."""
    u = unit(nx.concat([O.reshape(*O.shape[:-1], 1, O.shape[-1]), views], axis=-2))
    n = u.shape[-2]
    left = u.reshape(*u.shape[:-2], n, 1, u.shape[-1])
    right = u.reshape(*u.shape[:-2], 1, n, u.shape[-1])
    return (left * right).sum(axis=-1)


def dcl(O, views, temperature: float = 0.1) -> Tensor:
    """Discriminative contrastive loss of the views of ``O``.

    ``-sum_k log[h(O, O^k) / (h(O, O^k) + sum_{l != k} h(O^k, O^l))]`` with the
    untransformed ``O`` as the positive partner of every view.
    """
    O, views = nx.as_tensor(O), nx.as_tensor(views)
    _check_dims(O, views)
    K = views.shape[-2]
    if K < 2:
        raise ValueError(f"dcl needs at least 2 views, got K={K}")
    if views.shape[:-2] != O.shape[:-1]:
        raise ValueError(f"views batch shape {views.shape[:-2]} != latent batch shape {O.shape[:-1]}")
    sims = _similarities(O, views) * (1.0 / temperature)
    scores = nx.exp(sims)
    positive_log = sims[..., 0, 1:]
    off_diagonal = 1.0 - np.eye(K)
    negatives = (scores[..., 1:, 1:] * off_diagonal).sum(axis=-1)
    denominator = scores[..., 0, 1:] + negatives
    return -(positive_log - nx.log(denominator)).sum(axis=-1)


def cncl(views, G) -> Tensor:
    """Contextual neural contrastive loss: ``sum_k ||O^k - G||^2`` per sample."""
    views, G = nx.as_tensor(views), nx.as_tensor(G)
    _check_dims(views, G)
    diff = views - G.reshape(*G.shape[:-1], 1, G.shape[-1])
    return (diff * diff).sum(axis=-1).sum(axis=-1)


def cdcl(O, views, G, temperature: float = 0.1) -> Tensor:
    """``cncl + dcl``: the training objective and, per sample, the anomaly score."""
    return cncl(views, G) + dcl(O, views, temperature)


def constant_baseline(K: int) -> float:
    """Value of ``cdcl`` when encoder and every transformation output one constant."""
    return K * math.log(K)


def occ(latents, center, weight_decay: float = 0.0, weights=()) -> Tensor:
    """One-class objective: mean ``||phi - c||^2`` plus ``weight_decay * sum ||W||^2``."""
    latents = nx.as_tensor(latents)
    center = np.asarray(center, dtype=np.float64)
    if latents.shape[-1] != center.shape[-1]:
        raise ValueError(f"dimension mismatch: {latents.shape[-1]} vs center {center.shape[-1]}")
    loss = squared_distance(latents, center).mean()
    if weight_decay:
        for w in weights:
            loss = loss + weight_decay * (w * w).sum()
    return loss


def var_reg(batch_latents, gamma: float = 1.0, eps: float = 1e-4) -> Tensor:
    """Variance hinge ``mean_j max(0, gamma - sqrt(Var_j + eps))`` over a ``(B, d)`` batch.

    ``Var_j`` is the unbiased variance of dimension ``j`` across the batch.
    """
    z = nx.as_tensor(batch_latents)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError(f"var_reg needs a (B >= 2, d) batch, got shape {z.shape}")
    centred = z - z.mean(axis=0, keepdims=True)
    var = (centred * centred).sum(axis=0) * (1.0 / (z.shape[0] - 1))
    return nx.relu(gamma - nx.sqrt(var + eps)).mean()
