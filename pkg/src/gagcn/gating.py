"""Gating networks and adjacency banks.

A gate reads a layer's feature tensor, reduces it to a channel descriptor by
mean-pooling over joints and frames, and maps that descriptor through three
affine layers and a softmax to convex blending weights.  Those weights mix the
candidate matrices of an :class:`AdjacencyBank` into one adaptive adjacency.

Feature tensors are laid out ``(w, N, T)`` or batched ``(B, w, N, T)``.
"""

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .exceptions import ConfigurationError

AXES = ("spatial", "temporal")


@dataclass
class BlendingCoefficients:
    weights: nk.Tensor  # (q,) or (B, q), rows on the simplex
    axis: str

    @property
    def q(self):
        return self.weights.shape[-1]


class AdjacencyBank(nk.Module):
    """``q`` trainable ``d x d`` candidate adjacency matrices for one axis.

    Candidates start at identity plus Gaussian noise of scale ``noise`` so an
    untrained layer is close to pass-through.
    """

    def __init__(self, size, count, axis, rng, prefix="bank", noise=0.01, dtype=np.float64):
        if axis not in AXES:
            raise ConfigurationError(f"axis must be one of {AXES}, got {axis!r}")
        if count < 1:
            raise ConfigurationError(f"an adjacency bank needs at least one candidate, got {count}")
        self.axis = axis
        self.candidates = [
            nk.Parameter(np.eye(size) + rng.normal(noise, (size, size)), f"{prefix}.A{i}", dtype=dtype)
            for i in range(count)
        ]

    @property
    def q(self):
        return len(self.candidates)

    @property
    def size(self):
        return self.candidates[0].shape[0]


def pool_features(h):
    """Mean over the joint and frame axes: ``(..., w, N, T) -> (..., w)``."""
    return nk.mean(h, axis=(-2, -1))


class GatingNetwork(nk.Module):
    """Pooled features -> affine -> act -> affine -> act -> affine -> softmax."""

    def __init__(self, in_width, q, rng, hidden=None, activation="tanh", axis="spatial",
                 prefix="gate", dtype=np.float64):
        if q < 1:
            raise ConfigurationError(f"gate output width must be >= 1, got {q}")
        h1, h2 = hidden if hidden is not None else (2 * in_width, 2 * in_width)
        self.in_width = in_width
        self.q = q
        self.axis = axis
        self.activation = activation
        self.layers = []
        for i, (fan_in, fan_out) in enumerate([(in_width, h1), (h1, h2), (h2, q)], start=1):
            weight = nk.Parameter(nk.init_uniform(rng, (fan_in, fan_out), fan_in, dtype),
                                  f"{prefix}.fc{i}.weight")
            bias = nk.Parameter(nk.init_uniform(rng, (fan_out,), fan_in, dtype), f"{prefix}.fc{i}.bias")
            self.layers.append((weight, bias))

    def logits(self, h):
        pooled = pool_features(h)
        if pooled.shape[-1] != self.in_width:
            raise ConfigurationError(
                f"gate expects feature width {self.in_width}, got {pooled.shape[-1]}")
        x = pooled
        for i, (weight, bias) in enumerate(self.layers):
            x = x @ weight + bias
            if i < len(self.layers) - 1:
                x = nk.activation(x, self.activation)
        return x

    def __call__(self, h):
        return BlendingCoefficients(nk.softmax(self.logits(h), axis=-1), self.axis)

    def zero_(self):
        for weight, bias in self.layers:
            weight.data.fill(0)
            bias.data.fill(0)


def gating_forward(gate, h):
    return gate(h)


def blend(bank, coefficients):
    """Convex combination ``sum_i w_i * A_i``; batched weights give a batch of matrices."""
    w = coefficients.weights if isinstance(coefficients, BlendingCoefficients) else nk.as_tensor(coefficients)
    if w.shape[-1] != bank.q:
        raise ConfigurationError(f"{w.shape[-1]} blending weights for a bank of {bank.q} candidates")
    lead = w.shape[:-1]
    total = None
    for i, candidate in enumerate(bank.candidates):
        scale = nk.reshape(w[..., i], lead + (1, 1))
        term = scale * candidate
        total = term if total is None else total + term
    return total
