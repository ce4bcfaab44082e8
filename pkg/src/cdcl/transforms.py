"""Learnable latent-space transformations ``T_1 .. T_K``.

Each transformation is a three-layer MLP ``d -> d -> d -> d`` with ReLU
between layers and a linear output.  The untransformed latent serves as the
identity view, so the bank itself only holds ``K`` maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor

LAYERS = 3


@dataclass
class TransformBank:
    n_transforms: int
    dim: int
    seed: int = 0
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, n_transforms: int, dim: int, seed: int = 0) -> "TransformBank":
        if n_transforms < 1 or dim < 1:
            raise ValueError(f"need K >= 1 and d >= 1, got K={n_transforms}, d={dim}")
        bound = 1.0 / np.sqrt(dim)
        params = {}
        children = np.random.SeedSequence(seed).spawn(n_transforms)
        for k, child in enumerate(children):
            rng = np.random.default_rng(child)
            for layer in range(LAYERS):
                params[f"t{k}.l{layer}.w"] = Tensor(rng.uniform(-bound, bound, (dim, dim)), requires_grad=True)
                params[f"t{k}.l{layer}.b"] = Tensor(rng.uniform(-bound, bound, dim), requires_grad=True)
        return cls(n_transforms, dim, seed, params)

    def apply_one(self, k: int, latent: Tensor) -> Tensor:
        h = latent
        for layer in range(LAYERS):
            h = nx.linear(h, self.params[f"t{k}.l{layer}.w"], self.params[f"t{k}.l{layer}.b"])
            if layer < LAYERS - 1:
                h = nx.relu(h)
        return h

    def apply_all(self, latent) -> Tensor:
        """Views of ``latent`` (``(d,)`` or ``(batch, d)``), stacked on a new axis -2.

        A single latent gives ``(K, d)``; a batch gives ``(batch, K, d)``.
        """
        latent = nx.as_tensor(latent)
        if latent.shape[-1] != self.dim:
            raise ValueError(f"latent has dimension {latent.shape[-1]}, bank expects {self.dim}")
        return nx.stack([self.apply_one(k, latent) for k in range(self.n_transforms)], axis=-2)
