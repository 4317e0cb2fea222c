"""GAGCN encoder layers.

Each layer mixes features over joints and frames with the Kronecker product
of an adaptive spatial adjacency ``As (N x N)`` and an adaptive temporal
adjacency ``At (T x T)``, then maps channels through ``W``.

The Kronecker product acts on the joint-major flattening of a channel slice
(index ``joint * T + frame``), where ``(As kron At) vec(H) == vec(As H At^T)``.
:func:`st_apply` evaluates the right-hand side, which costs
``O(N^2 T + N T^2)`` per channel instead of ``O(N^2 T^2)``.
"""

import numpy as np

from . import numkernel as nk
from .exceptions import ConfigurationError, DimensionError
from .gating import AdjacencyBank, GatingNetwork, blend

DEFAULT_WIDTH = 64
DEFAULT_DEPTH = 6


def _batched(h):
    h = nk.as_tensor(h)
    if h.ndim == 3:
        return nk.reshape(h, (1,) + h.shape), True
    if h.ndim != 4:
        raise DimensionError(f"features must be (w, N, T) or (B, w, N, T), got {h.shape}")
    return h, False


def st_apply(As, At, h):
    """Apply ``As kron At`` to every channel of ``h`` as ``As @ h[c] @ At.T``.

    ``As`` and ``At`` are ``(N, N)`` / ``(T, T)``, or carry a leading batch axis
    matching a batched ``h`` of shape ``(B, w, N, T)``.
    """
    As, At, h = nk.as_tensor(As), nk.as_tensor(At), nk.as_tensor(h)
    if h.ndim not in (3, 4):
        raise DimensionError(f"features must be (w, N, T) or (B, w, N, T), got {h.shape}")
    N, T = h.shape[-2], h.shape[-1]
    if As.shape[-2:] != (N, N) or At.shape[-2:] != (T, T):
        raise DimensionError(
            f"adjacency shapes {As.shape} and {At.shape} do not fit features {h.shape}")
    for adj in (As, At):
        if adj.ndim == 3 and (h.ndim != 4 or adj.shape[0] != h.shape[0]):
            raise DimensionError(f"batched adjacency {adj.shape} needs features with batch {adj.shape[0]}")
        if adj.ndim not in (2, 3):
            raise DimensionError(f"adjacency must be 2-D or batched 3-D, got {adj.shape}")

    # Spatial mixing: bring the joint axis next to the batch so one GEMM per sample suffices.
    if As.ndim == 2:
        perm = (h.ndim - 2,) + tuple(range(h.ndim - 2)) + (h.ndim - 1,)
        moved = nk.transpose(h, perm)
        mixed = nk.reshape(As @ nk.reshape(moved, (N, -1)), moved.shape)
        x = nk.transpose(mixed, tuple(np.argsort(perm)))
    else:
        B, w = h.shape[0], h.shape[1]
        moved = nk.transpose(h, (0, 2, 1, 3))
        mixed = nk.reshape(As @ nk.reshape(moved, (B, N, w * T)), (B, N, w, T))
        x = nk.transpose(mixed, (0, 2, 1, 3))

    # Temporal mixing acts on the last axis: x @ At^T.
    if At.ndim == 2:
        return x @ nk.transpose(At)
    B = h.shape[0]
    out = nk.reshape(x, (B, -1, T)) @ nk.transpose(At, (0, 2, 1))
    return nk.reshape(out, h.shape)


def channel_map(h, weight, bias=None):
    """Apply ``weight (w, w')`` along the channel axis of ``(B, w, N, T)`` features."""
    x = nk.transpose(h, (0, 2, 3, 1)) @ weight
    if bias is not None:
        x = x + bias
    return nk.transpose(x, (0, 3, 1, 2))


class GagcnLayer(nk.Module):
    """One encoder stage with gated spatial and temporal adjacency banks."""

    def __init__(self, in_width, out_width, joints, frames, n=4, m=3, rng=None,
                 activation="tanh", gate_hidden=None, prefix="layer", dtype=np.float64):
        rng = rng if rng is not None else nk.Rng(0)
        self.in_width, self.out_width = in_width, out_width
        self.activation = activation
        self.spatial_bank = AdjacencyBank(joints, n, "spatial", rng.child(0), f"{prefix}.spatial", dtype=dtype)
        self.temporal_bank = AdjacencyBank(frames, m, "temporal", rng.child(1), f"{prefix}.temporal", dtype=dtype)
        self.spatial_gate = GatingNetwork(in_width, n, rng.child(2), gate_hidden, activation, "spatial",
                                          f"{prefix}.spatial_gate", dtype)
        self.temporal_gate = GatingNetwork(in_width, m, rng.child(3), gate_hidden, activation, "temporal",
                                           f"{prefix}.temporal_gate", dtype)
        self.transform = nk.Parameter(nk.init_uniform(rng.child(4), (in_width, out_width), in_width, dtype),
                                      f"{prefix}.W")
        if self.spatial_gate.q != self.spatial_bank.q or self.temporal_gate.q != self.temporal_bank.q:
            raise ConfigurationError("gate widths must match their banks' candidate counts")

    @property
    def n(self):
        return self.spatial_bank.q

    @property
    def m(self):
        return self.temporal_bank.q

    def adjacency(self, h):
        """Return ``(As, At, ws, wt)`` for batched features ``h``."""
        ws = self.spatial_gate(h)
        wt = self.temporal_gate(h)
        return blend(self.spatial_bank, ws), blend(self.temporal_bank, wt), ws, wt

    def forward(self, h, log=None):
        h, squeeze = _batched(h)
        if h.shape[1] != self.in_width:
            raise DimensionError(f"layer expects width {self.in_width}, got features {h.shape}")
        As, At, ws, wt = self.adjacency(h)
        if log is not None:
            log.append((ws.weights.data.copy(), wt.weights.data.copy()))
        out = nk.activation(channel_map(st_apply(As, At, h), self.transform), self.activation)
        return out[0] if squeeze else out

    __call__ = forward


class StableLayer(nk.Module):
    """A layer with one fixed trainable adjacency per axis and no gates."""

    def __init__(self, in_width, out_width, joints, frames, rng=None, activation="tanh",
                 prefix="layer", dtype=np.float64):
        rng = rng if rng is not None else nk.Rng(0)
        self.in_width, self.out_width = in_width, out_width
        self.activation = activation
        # Same streams as GagcnLayer so both arms can start from identical values.
        self.spatial = AdjacencyBank(joints, 1, "spatial", rng.child(0), f"{prefix}.spatial", dtype=dtype).candidates[0]
        self.temporal = AdjacencyBank(frames, 1, "temporal", rng.child(1), f"{prefix}.temporal", dtype=dtype).candidates[0]
        self.transform = nk.Parameter(nk.init_uniform(rng.child(4), (in_width, out_width), in_width, dtype),
                                      f"{prefix}.W")

    n = m = 1

    def forward(self, h, log=None):
        h, squeeze = _batched(h)
        if h.shape[1] != self.in_width:
            raise DimensionError(f"layer expects width {self.in_width}, got features {h.shape}")
        out = nk.activation(channel_map(st_apply(self.spatial, self.temporal, h), self.transform),
                            self.activation)
        return out[0] if squeeze else out

    __call__ = forward


def layer_forward(layer, h):
    return layer(h)


class Encoder(nk.Module):
    """A chain of GAGCN (or stable) layers over widths ``[w0, w1, ..., wL]``."""

    def __init__(self, widths, joints, frames, n=4, m=3, rng=None, activation="tanh",
                 gated=True, prefix="encoder", dtype=np.float64):
        if len(widths) < 2:
            raise ConfigurationError("an encoder needs at least one layer (two widths)")
        rng = rng if rng is not None else nk.Rng(0)
        self.widths = list(widths)
        self.gated = gated
        self.layers = []
        for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            if gated:
                layer = GagcnLayer(w_in, w_out, joints, frames, n, m, rng.child(i), activation,
                                   prefix=f"{prefix}.{i}", dtype=dtype)
            else:
                layer = StableLayer(w_in, w_out, joints, frames, rng.child(i), activation,
                                    prefix=f"{prefix}.{i}", dtype=dtype)
            self.layers.append(layer)

    def forward(self, h, log=None):
        """Run all layers; when ``log`` is a list, append per-layer gate weights to it."""
        for i, layer in enumerate(self.layers):
            layer_log = [] if log is not None and self.gated else None
            h = layer(h, layer_log)
            if layer_log:
                log.append((i,) + layer_log[0])
        return h

    __call__ = forward


def encoder_forward(encoder, h0, log=None):
    return encoder(h0, log)


def default_widths(channels, width=DEFAULT_WIDTH, depth=DEFAULT_DEPTH):
    return [channels] + [width] * depth


class InputProjection(nk.Module):
    """Per joint-frame affine lift of ``C`` raw channels to ``w0`` features.

    With ``C == w0`` the weight starts at identity and the bias at zero.
    """

    def __init__(self, channels, width, rng=None, dtype=np.float64, prefix="embed"):
        rng = rng if rng is not None else nk.Rng(0)
        self.channels, self.width = channels, width
        if channels == width:
            weight = np.eye(channels)
        else:
            weight = nk.init_uniform(rng, (channels, width), channels)
        self.weight = nk.Parameter(weight, f"{prefix}.weight", dtype=dtype)
        self.bias = nk.Parameter(np.zeros(width), f"{prefix}.bias", dtype=dtype)

    def forward(self, x):
        x, squeeze = _batched(x)
        if x.shape[1] != self.channels:
            raise DimensionError(f"input has {x.shape[1]} channels, projection expects {self.channels}")
        out = channel_map(x, self.weight, self.bias)
        return out[0] if squeeze else out

    __call__ = forward


def embed_input(projection, window):
    return projection(window)
