"""Finite-difference gradient checks at three scales: single ops, one layer, the whole model."""

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .decoder import GagcnModel, ModelConfig
from .exceptions import ConfigurationError
from .gating import AdjacencyBank, blend, BlendingCoefficients
from .layers import GagcnLayer, st_apply
from .trainer import mpjpe

SCALES = ("ops", "layer", "model")
TOLERANCE = 1e-4

# Toy sizes keep a full-model check well under a minute.
TOY = dict(joints=4, frames_in=5, frames_out=3, width=8, n=2, m=2)


@dataclass
class GradResult:
    name: str
    size: int
    max_rel_err: float

    @property
    def passed(self):
        return bool(self.max_rel_err < TOLERANCE)


def _ghost(p):
    """A zero-valued term whose backward rule is deliberately wrong (negative control)."""
    return nk._node(np.zeros((), dtype=p.dtype), (p,), lambda g: (np.full(p.shape, 0.5) * g,))


def _check_all(params, loss_fn, corrupt=None, eps=1e-5):
    names = [p.name for p in params]
    if corrupt is not None and corrupt not in names:
        raise ConfigurationError(f"cannot corrupt unknown parameter {corrupt!r}")
    results = []
    for p in params:
        if p.name == corrupt:
            f = lambda p=p: loss_fn() + _ghost(p)  # noqa: E731
        else:
            f = loss_fn
        results.append(GradResult(p.name, p.size, nk.finite_diff_check(f, p, eps)))
    return results


def _randomize(params, rng, only_zero=True):
    for i, p in enumerate(params):
        if not only_zero or not np.any(p.data):
            p.data[...] = rng.child(i).normal(0.3, p.shape, np.float64)


# --- op scale ---------------------------------------------------------------------------------


def _op_cases(rng):
    def par(name, shape, away_from_zero=False):
        x = rng.child(len(cases) * 8 + len(name)).normal(1.0, shape)
        if away_from_zero:
            x = np.sign(x) * (np.abs(x) + 0.2)
        return nk.Parameter(x, name, dtype=np.float64)

    cases = []

    def case(label, build, *shapes, away=False):
        ps = [par(f"{label}.{chr(97 + i)}", s, away) for i, s in enumerate(shapes)]
        cases.append((label, ps, lambda ps=ps: build(*ps)))

    case("add", lambda a, b: a + b, (3, 4), (4,))
    case("sub", lambda a, b: a - b, (2, 3), (2, 1))
    case("mul", lambda a, b: a * b, (3, 4), (3, 4))
    case("div", lambda a, b: a / b, (3, 4), (1, 4), away=True)
    case("matmul", lambda a, b: a @ b, (3, 4), (4, 2))
    case("matmul_batched", lambda a, b: a @ b, (2, 3, 4), (2, 4, 5))
    case("matmul_flat", lambda a, b: a @ b, (2, 3, 4), (4, 5))
    case("matmul_vector", lambda a, b: a @ b, (4,), (4, 3))
    case("kronecker", nk.kronecker, (2, 3), (3, 2))
    case("reshape", lambda a: nk.reshape(a, (6, 2)) * nk.Tensor(np.arange(12.0).reshape(6, 2)), (3, 4))
    case("transpose", lambda a: nk.transpose(a, (2, 0, 1)) @ nk.Tensor(np.arange(10.0).reshape(5, 2)), (2, 5, 3))
    case("getitem", lambda a: a[1:, ::2] * a[1:, ::2], (3, 4))
    case("concatenate", lambda a, b: nk.tanh(nk.concatenate([a, b], axis=1)), (2, 3), (2, 2))
    case("stack", lambda a, b: nk.stack([a, b], axis=0) * nk.Tensor(np.arange(12.0).reshape(2, 2, 3)),
         (2, 3), (2, 3))
    case("sum", lambda a: nk.tsum(a * a, axis=1), (3, 4))
    case("mean", lambda a: nk.mean(a * a, axis=(0, 2)), (2, 3, 4))
    case("shift", lambda a: nk.shift(a, 2) * nk.Tensor(np.arange(10.0).reshape(2, 5)), (2, 5))
    case("tanh", nk.tanh, (3, 4))
    case("relu", lambda a: nk.relu(a) * a, (3, 4), away=True)
    case("absolute", nk.absolute, (3, 4), away=True)
    case("norm", lambda a: nk.norm(a, axis=-1), (4, 3))
    case("softmax", lambda a: nk.softmax(a, axis=-1) * nk.Tensor(np.arange(12.0).reshape(3, 4)), (3, 4))
    case("st_apply", st_apply, (4, 4), (5, 5), (2, 3, 4, 5))
    case("st_apply_batched", st_apply, (2, 4, 4), (2, 5, 5), (2, 3, 4, 5))

    bank_rng = rng.child(999)
    bank = AdjacencyBank(4, 3, "spatial", bank_rng, "blend.bank", dtype=np.float64)
    logits = par("blend.logits", (2, 3))
    cases.append(("blend", list(bank.candidates) + [logits],
                  lambda: blend(bank, BlendingCoefficients(nk.softmax(logits), "spatial"))))
    return cases


def check_ops(seed=0, corrupt=None):
    rng = nk.Rng(seed)
    results = []
    weights_rng = rng.child(10_000)
    for label, params, build in _op_cases(rng.child(1)):
        probe = {}

        def loss_fn(build=build, probe=probe):
            out = build()
            if "w" not in probe:
                probe["w"] = weights_rng.child(len(results)).normal(1.0, out.shape)
            return nk.tsum(out * nk.Tensor(probe["w"]))

        results.extend(_check_all(params, loss_fn, corrupt))
    return results


# --- layer and model scale --------------------------------------------------------------------


def toy_layer(seed=0):
    rng = nk.Rng(seed)
    c = TOY
    layer = GagcnLayer(c["width"], c["width"], c["joints"], c["frames_in"], c["n"], c["m"], rng.child(0),
                       prefix="layer", dtype=np.float64)
    h = nk.Tensor(rng.child(1).normal(1.0, (2, c["width"], c["joints"], c["frames_in"])))
    target = rng.child(2).normal(0.5, (2, c["width"], c["joints"], c["frames_in"]))
    return layer, h, target


def check_layer(seed=0, corrupt=None):
    layer, h, target = toy_layer(seed)
    _randomize(layer.parameters(), nk.Rng(seed).child(3))

    def loss_fn():
        diff = layer(h) - target
        return nk.mean(diff * diff)

    return _check_all(layer.parameters(), loss_fn, corrupt)


def toy_model(seed=0, depth=6):
    cfg = ModelConfig(channels=3, depth=depth, precision="binary64", seed=seed, **TOY)
    model = GagcnModel(cfg)
    # Zero-initialised output weights would hide every upstream gradient.
    _randomize(model.parameters(), nk.Rng(seed).child(3))
    rng = nk.Rng(seed).child(4)
    window = rng.child(0).normal(1.0, (2, 3, cfg.joints, cfg.frames_in))
    target = rng.child(1).normal(1.0, (2, 3, cfg.joints, cfg.frames_out))
    return model, window, target


def check_model(seed=0, corrupt=None, depth=6):
    model, window, target = toy_model(seed, depth)

    def loss_fn():
        return mpjpe(model(window), nk.Tensor(target), channel_axis=1)

    return _check_all(model.parameters(), loss_fn, corrupt)


def run(scale="model", seed=0, corrupt=None):
    if scale not in SCALES:
        raise ConfigurationError(f"scale must be one of {SCALES}, got {scale!r}")
    return {"ops": check_ops, "layer": check_layer, "model": check_model}[scale](seed, corrupt)
