"""Encoder + transformation bank + loss mode, wired into objective and score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from . import numerics as nx
from .encoder import Encoder, EncoderConfig
from .losses import LossConfig
from .numerics import Tensor
from .transforms import TransformBank


@dataclass
class Detector:
    encoder: Encoder
    bank: TransformBank | None
    loss: LossConfig

    @classmethod
    def build(cls, encoder_config: EncoderConfig, n_transforms: int, loss: LossConfig) -> "Detector":
        """Fresh detector; OCC mode drops every bias term from the encoder."""
        if loss.mode == "OCC" and encoder_config.bias:
            encoder_config = EncoderConfig(**{**encoder_config.__dict__, "bias": False})
        encoder = Encoder.init(encoder_config)
        bank = None
        if loss.uses_bank:
            bank = TransformBank.init(n_transforms, encoder_config.hidden_dim, seed=encoder_config.seed + 1)
        return cls(encoder, bank, loss)

    @property
    def mode(self) -> str:
        return self.loss.mode

    def parameters(self) -> dict[str, Tensor]:
        params = {f"encoder.{k}": v for k, v in self.encoder.params.items()}
        if self.bank is not None:
            params.update({f"bank.{k}": v for k, v in self.bank.params.items()})
        return params

    def _encode_pair(self, suspect, context, mode: str, update_stats: bool) -> tuple[Tensor, Tensor]:
        # one pass over [S; C] so both halves see identical weights and batch statistics
        n = suspect.shape[0]
        both = np.concatenate([suspect, context], axis=0)
        z = self.encoder.encode_batch(both, mode, update_stats)
        return z[:n], z[n:]

    def _per_sample(self, suspect, context, mode: str, update_stats: bool) -> tuple[Tensor, Tensor | None, Tensor | None]:
        """Per-sample loss plus the latents needed by batch-level terms."""
        m, tau = self.loss.mode, self.loss.temperature
        if m in ("DCL", "OCC"):
            O = self.encoder.encode_batch(suspect, mode, update_stats)
            if m == "OCC":
                if self.loss.center is None:
                    raise RuntimeError("OCC center not initialised")
                return losses.squared_distance(O, self.loss.center), O, None
            return losses.dcl(O, self.bank.apply_all(O), tau), O, None
        O, G = self._encode_pair(suspect, context, mode, update_stats)
        if m == "CDCL":
            return losses.cdcl(O, self.bank.apply_all(O), G, tau), O, G
        return losses.ccl(O, G), O, G

    def objective(self, suspect, context, mode: str = "train", update_stats: bool = True) -> Tensor:
        """Scalar batch objective for the configured loss mode."""
        per_sample, O, G = self._per_sample(suspect, context, mode, update_stats)
        loss = per_sample.mean()
        if self.loss.mode == "CCL_REG":
            loss = loss + losses.var_reg(O, self.loss.gamma, self.loss.eps) + losses.var_reg(
                G, self.loss.gamma, self.loss.eps
            )
        if self.loss.weight_decay:
            for w in self.parameters().values():
                loss = loss + self.loss.weight_decay * (w * w).sum()
        return loss

    def sample_scores(self, suspect, context, batch_size: int = 256) -> np.ndarray:
        """Eval-mode anomaly score per window (CCL_REG scores with ccl alone)."""
        out = []
        with nx.no_grad():
            for lo in range(0, suspect.shape[0], batch_size):
                hi = lo + batch_size
                s, _, _ = self._per_sample(suspect[lo:hi], context[lo:hi], "eval", False)
                out.append(s.data)
        return np.concatenate(out) if out else np.zeros(0)

    def init_center(self, suspect, batch_size: int = 256) -> np.ndarray:
        """OCC center: mean initial encoder output (train-mode normalization, stats untouched)."""
        total = np.zeros(self.encoder.config.hidden_dim)
        with nx.no_grad():
            for lo in range(0, suspect.shape[0], batch_size):
                chunk = suspect[lo : lo + batch_size]
                mode = "train" if chunk.shape[0] > 1 else "eval"
                total += self.encoder.encode_batch(chunk, mode, update_stats=False).data.sum(axis=0)
        center = total / suspect.shape[0]
        self.loss.center = center
        return center

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every array that defines the model: weights, running stats, OCC center."""
        arrays = {k: v.data for k, v in self.parameters().items()}
        arrays.update({f"encoder.{k}": v for k, v in self.encoder.buffers.items()})
        if self.loss.center is not None:
            arrays["occ.center"] = self.loss.center
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        expected = set(params) | {f"encoder.{k}" for k in self.encoder.buffers}
        missing = expected - set(arrays)
        if missing:
            raise KeyError(f"missing arrays: {sorted(missing)}")
        for name, t in params.items():
            if arrays[name].shape != t.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {t.shape}")
            t.data[...] = arrays[name]
        for k, buf in self.encoder.buffers.items():
            buf[...] = arrays[f"encoder.{k}"]
        if "occ.center" in arrays:
            self.loss.center = np.array(arrays["occ.center"], dtype=np.float64)
