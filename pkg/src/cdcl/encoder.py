"""Temporal convolutional encoder with dilated inception blocks.

Pipeline for an ``(N, c)`` sequence: 1x1 input convolution to ``d`` channels,
``L`` residual blocks (parallel causal convolutions of several kernel sizes,
concatenated, batch-normalized, ReLU), readout of the last time position, and a
1x1 output convolution mapping ``d -> d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 1
    hidden_dim: int = 32
    block_count: int = 8
    kernel_set: tuple[int, ...] = (2, 3, 6, 7)
    dilation_base: int = 2
    seed: int = 0
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kernel_set", tuple(int(k) for k in self.kernel_set))
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.block_count < 1:
            raise ValueError("block_count must be >= 1")
        if not self.kernel_set or min(self.kernel_set) < 1:
            raise ValueError("kernel_set must hold positive kernel sizes")
        if self.hidden_dim < len(self.kernel_set) or self.hidden_dim % len(self.kernel_set):
            raise ValueError(
                f"hidden_dim {self.hidden_dim} must be a multiple of the kernel count {len(self.kernel_set)}"
            )
        if self.dilation_base < 1:
            raise ValueError("dilation_base must be >= 1")

    def dilation(self, block: int, length: int | None = None) -> int:
        dil = self.dilation_base**block
        return dil if length is None else max(1, min(dil, length))


def receptive_field(config: EncoderConfig, length: int | None = None) -> int:
    """Ticks visible to the last output position.

    With ``length`` given, dilations are capped at it as in :meth:`Encoder.encode`.
    """
    k = max(config.kernel_set)
    return 1 + sum((k - 1) * config.dilation(b, length) for b in range(config.block_count))


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Encoder:
    """Weights (as gradient-tracked tensors) plus batch-norm running statistics."""

    config: EncoderConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, config: EncoderConfig) -> "Encoder":
        rng = np.random.default_rng(config.seed)
        d, n_in = config.hidden_dim, config.in_channels
        branch = d // len(config.kernel_set)
        p: dict[str, np.ndarray] = {}
        b: dict[str, np.ndarray] = {}
        p["in.w"] = _uniform(rng, (d, n_in, 1), n_in)
        if config.bias:
            p["in.b"] = _uniform(rng, (d,), n_in)
        for blk in range(config.block_count):
            for k in config.kernel_set:
                p[f"block{blk}.k{k}.w"] = _uniform(rng, (branch, d, k), d * k)
                if config.bias:
                    p[f"block{blk}.k{k}.b"] = _uniform(rng, (branch,), d * k)
            p[f"block{blk}.bn.scale"] = np.ones(d)
            if config.bias:
                p[f"block{blk}.bn.shift"] = np.zeros(d)
            b[f"block{blk}.bn.mean"] = np.zeros(d)
            b[f"block{blk}.bn.var"] = np.ones(d)
        p["out.w"] = _uniform(rng, (d, d), d)
        if config.bias:
            p["out.b"] = _uniform(rng, (d,), d)
        params = {name: Tensor(v, requires_grad=True) for name, v in p.items()}
        return cls(config, params, b)

    def zero_(self) -> "Encoder":
        """Set every weight to zero (batch-norm scale included)."""
        for t in self.params.values():
            t.data[...] = 0.0
        return self

    def _batch_norm(self, h: Tensor, blk: int, mode: str, update_stats: bool) -> Tensor:
        scale = self.params[f"block{blk}.bn.scale"].reshape(1, -1, 1)
        shift = self.params.get(f"block{blk}.bn.shift")
        if mode == "train":
            mu = h.mean(axis=(0, 2), keepdims=True)
            centred = h - mu
            var = (centred * centred).mean(axis=(0, 2), keepdims=True)
            normed = centred / nx.sqrt(var + BN_EPS)
            if update_stats:
                n = h.shape[0] * h.shape[2]
                unbiased = var.data.reshape(-1) * (n / max(n - 1, 1))
                rm, rv = self.buffers[f"block{blk}.bn.mean"], self.buffers[f"block{blk}.bn.var"]
                rm *= 1 - BN_MOMENTUM
                rm += BN_MOMENTUM * mu.data.reshape(-1)
                rv *= 1 - BN_MOMENTUM
                rv += BN_MOMENTUM * unbiased
        elif mode == "eval":
            rm = self.buffers[f"block{blk}.bn.mean"].reshape(1, -1, 1)
            rv = self.buffers[f"block{blk}.bn.var"].reshape(1, -1, 1)
            normed = (h - rm) * (1.0 / np.sqrt(rv + BN_EPS))
        else:
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        out = normed * scale
        if shift is not None:
            out = out + shift.reshape(1, -1, 1)
        return out

    def dil_layer(self, h: Tensor, blk: int, mode: str = "eval", update_stats: bool = True) -> Tensor:
        """One residual block on ``(batch, d, length)`` features."""
        if h.shape[1] != self.config.hidden_dim:
            raise ValueError(f"block input has {h.shape[1]} channels, expected {self.config.hidden_dim}")
        dil = self.config.dilation(blk, h.shape[2])
        kmax = max(self.config.kernel_set)
        # Branches run as one convolution: each kernel is zero-padded on its
        # oldest taps to kmax, so tap kmax-1 is still the current tick.
        kernels, biases = [], []
        for k in self.config.kernel_set:
            w = self.params[f"block{blk}.k{k}.w"]
            if k < kmax:
                w = nx.concat([np.zeros((w.shape[0], w.shape[1], kmax - k)), w], axis=2)
            kernels.append(w)
            if f"block{blk}.k{k}.b" in self.params:
                biases.append(self.params[f"block{blk}.k{k}.b"])
        y = nx.conv1d_causal(h, nx.concat(kernels, axis=0), dil, left_pad=True)
        if biases:
            y = y + nx.concat(biases, axis=0).reshape(1, -1, 1)
        y = nx.relu(self._batch_norm(y, blk, mode, update_stats))
        return h + y

    def features(self, x, mode: str = "eval", update_stats: bool = True) -> Tensor:
        """Per-position features ``(batch, d, length)`` before the readout."""
        x = nx.as_tensor(x)
        if x.ndim != 3 or x.shape[1] != self.config.in_channels or x.shape[2] < 1:
            raise ValueError(f"expected (batch, {self.config.in_channels}, c>=1) input, got {x.shape}")
        h = nx.conv1d_causal(x, self.params["in.w"], 1)
        if "in.b" in self.params:
            h = h + self.params["in.b"].reshape(1, -1, 1)
        for blk in range(self.config.block_count):
            h = self.dil_layer(h, blk, mode, update_stats)
        return h

    def encode_batch(self, x, mode: str = "eval", update_stats: bool = True) -> Tensor:
        """Map ``(batch, N, c)`` sequences to ``(batch, d)`` latents."""
        h = self.features(x, mode, update_stats)
        last = h[:, :, -1]
        return nx.linear(last, self.params["out.w"], self.params.get("out.b"))

    def encode(self, sequence, mode: str = "eval") -> np.ndarray:
        """Latent ``d``-vector of a single ``(N, c)`` sequence."""
        seq = np.asarray(sequence, dtype=np.float64)
        if seq.ndim != 2:
            raise ValueError(f"expected an (N, c) sequence, got shape {seq.shape}")
        with nx.no_grad():
            return self.encode_batch(seq[None], mode).data[0]
