"""Executable self-checks: finite-difference gradient suite and collapse witnesses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import losses
from . import numerics as nx
from .encoder import Encoder, EncoderConfig
from .losses import LossConfig
from .model import Detector
from .transforms import TransformBank

GRADCHECK_LOSSES = ("CCL", "DCL", "CNCL", "CDCL", "OCC", "CCL_REG")
GRADCHECK_TOLERANCE = 1e-4


@dataclass
class GradcheckRow:
    loss: str
    seed: int
    n_transforms: int
    error: float

    @property
    def passed(self) -> bool:
        return self.error < GRADCHECK_TOLERANCE


def _gradcheck_setup(loss: str, seed: int, dim: int, batch: int, length: int, blocks: int):
    rng = np.random.default_rng(seed)
    K = 2 + seed % 2
    mode = "CDCL" if loss == "CNCL" else loss
    cfg = EncoderConfig(in_channels=1, hidden_dim=dim, block_count=blocks, seed=seed)
    det = Detector.build(cfg, K, LossConfig(mode))
    # batch-norm scale/shift start at 1/0; jitter them so their gradients are generic
    for name, p in det.encoder.params.items():
        if ".bn." in name:
            p.data += rng.normal(0, 0.3, p.shape)
    suspect = rng.normal(size=(batch, 1, length))
    context = rng.normal(size=(batch, 1, length))
    if mode == "OCC":
        det.loss.center = rng.normal(size=dim)
        det.loss.weight_decay = 1e-3
    return det, suspect, context, K


def loss_gradcheck(loss: str, seed: int, dim: int = 4, batch: int = 3, length: int = 8, blocks: int = 2) -> GradcheckRow:
    """Compare backprop against central differences for one loss on a small random model."""
    if loss not in GRADCHECK_LOSSES:
        raise ValueError(f"loss must be one of {GRADCHECK_LOSSES}, got {loss!r}")
    det, suspect, context, K = _gradcheck_setup(loss, seed, dim, batch, length, blocks)
    if loss == "CNCL":

        def f():
            O, G = det._encode_pair(suspect, context, "train", False)
            return losses.cncl(det.bank.apply_all(O), G).mean()

    else:

        def f():
            return det.objective(suspect, context, "train", update_stats=False)

    params = list(det.parameters().values())
    return GradcheckRow(loss, seed, K, nx.finite_diff_check(f, params))


def gradcheck_table(seeds=range(20), losses_=GRADCHECK_LOSSES) -> list[GradcheckRow]:
    return [loss_gradcheck(name, int(s)) for name in losses_ for s in seeds]


# -- collapse witnesses -------------------------------------------------------


def constant_cdcl(n_transforms: int, dim: int = 8, seed: int = 0) -> float:
    """Per-sample cdcl when encoder and every transform output the same constant vector."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    O = nx.Tensor(v)
    views = nx.Tensor(np.tile(v, (n_transforms, 1)))
    G = nx.Tensor(v.copy())
    return losses.cdcl(O, views, G).item()


def zero_encoder_ccl(suspect, context, config: EncoderConfig) -> np.ndarray:
    """Per-sample ccl of an encoder whose every weight is zero."""
    enc = Encoder.init(config).zero_()
    with nx.no_grad():
        O = enc.encode_batch(suspect, "eval")
        G = enc.encode_batch(context, "eval")
        return losses.ccl(O, G).data


def baseline_gap(n_transforms: int) -> float:
    return abs(constant_cdcl(n_transforms) - n_transforms * math.log(n_transforms))
