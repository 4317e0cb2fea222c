"""Losses, optimiser, training loop, horizon evaluation, and ablation runs."""

import copy
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numkernel as nk
from .decoder import GagcnModel, ModelConfig
from .exceptions import ConfigurationError, DimensionError, DivergenceError, NumericError
from .motiondata import SYNTH_CLASSES, WindowSet, make_windows, synth_dataset

log = logging.getLogger(__name__)

HORIZONS_MS = (80, 160, 320, 400, 560, 1000)
LOSS_KINDS = ("mpjpe", "mae")
DIVERGENCE_LIMIT = 1e6


# metrics


def _check_same(pred, gt):
    if tuple(pred.shape) != tuple(gt.shape):
        raise DimensionError(f"prediction shape {tuple(pred.shape)} differs from ground truth {tuple(gt.shape)}")


def mpjpe(pred, gt, channel_axis=-1):
    """Mean over frames and joints of the Euclidean joint error.

    Tensors in give a differentiable Tensor out; arrays in give a float.
    """
    _check_same(pred, gt)
    if isinstance(pred, nk.Tensor) or isinstance(gt, nk.Tensor):
        return nk.mean(nk.norm(nk.sub(pred, gt), axis=channel_axis))
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.mean(np.linalg.norm(diff, axis=channel_axis)))


def mae(pred, gt):
    """Mean absolute difference over all angle entries."""
    _check_same(pred, gt)
    if isinstance(pred, nk.Tensor) or isinstance(gt, nk.Tensor):
        return nk.mean(nk.absolute(nk.sub(pred, gt)))
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))))


def per_frame_error(pred, gt, metric="mpjpe"):
    """Errors per future frame for frame-major ``(W, t, N, C)`` arrays, averaged over windows."""
    _check_same(pred, gt)
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    if metric == "mpjpe":
        return np.linalg.norm(diff, axis=-1).mean(axis=(0, 2))
    if metric == "mae":
        return np.abs(diff).mean(axis=(0, 2, 3))
    raise ConfigurationError(f"unknown metric {metric!r}")


def horizon_frames(horizon_ms, rate_hz=25.0):
    frames = horizon_ms * rate_hz / 1000.0
    if abs(frames - round(frames)) > 1e-9:
        raise ConfigurationError(f"{horizon_ms} ms is not a whole number of frames at {rate_hz} Hz")
    return int(round(frames))


# optimiser


class Adam:
    """Adam with bias correction; ``step`` raises on non-finite gradients."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {p.name}")
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def optimizer_step(params, state=None, lr=1e-3):
    """Functional wrapper: one Adam step over ``params`` using their ``grad``.

    ``state`` is the object returned by the previous call (``None`` to start).
    """
    if state is None:
        state = Adam(params, lr)
    state.lr = lr
    state.step()
    return state


# training


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_decay: float = 0.96
    seed: int = 0
    precision: str = "binary32"
    loss_kind: str = "mpjpe"
    n: int = 4
    m: int = 3
    log_every: int = 10
    max_steps: int = None
    restore_best: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigurationError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.precision not in nk.PRECISIONS:
            raise ConfigurationError(f"precision must be one of {sorted(nk.PRECISIONS)}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigurationError("lr_decay must be in (0, 1]")
        if self.log_every < 1:
            raise ConfigurationError("log_every must be >= 1")


def to_model_layout(x):
    """Frame-major ``(..., T, N, C)`` -> model layout ``(..., C, N, T)``."""
    return np.swapaxes(np.asarray(x), -1, -3)


def to_frame_layout(x):
    return np.swapaxes(np.asarray(x), -1, -3)


def batch_loss(model, inputs, targets, loss_kind, log=None):
    dtype = model.dtype
    pred = model(nk.Tensor(to_model_layout(inputs), dtype=dtype), log)
    gt = nk.Tensor(to_model_layout(targets), dtype=dtype)
    if loss_kind == "mpjpe":
        return mpjpe(pred, gt, channel_axis=1)
    return mae(pred, gt)


@dataclass
class TrainResult:
    state: dict
    history: list = field(default_factory=list)   # one dict per epoch
    steps: list = field(default_factory=list)     # (step, loss) per optimiser step
    gate_log: list = field(default_factory=list)  # (step, layer, axis, weights)
    best_epoch: int = None                        # set when the best validation state was restored


def train(model, windows, cfg, validation=None, gate_logging=False):
    """Minimise ``cfg.loss_kind`` over ``windows`` with Adam; deterministic per ``cfg.seed``.

    The learning rate is multiplied by ``cfg.lr_decay`` after every epoch.
    ``cfg.max_steps`` caps the total number of optimiser steps.
    With ``cfg.restore_best`` and a non-empty ``validation`` set, the
    parameters from the epoch with the lowest validation loss are kept.
    """
    if len(windows) == 0:
        raise ConfigurationError("cannot train on an empty window set")
    result = TrainResult(state=model.state_dict())
    if cfg.epochs == 0:
        return result

    params = model.parameters()
    opt = Adam(params, cfg.learning_rate)
    rng = nk.Rng(cfg.seed).child(7)
    last_good = model.state_dict()
    best = (np.inf, None, None)  # (val_loss, epoch, state)
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(windows))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            idx = np.sort(order[start:start + cfg.batch_size])
            want_log = gate_logging and step % cfg.log_every == 0
            layer_log = [] if want_log else None
            opt.zero_grad()
            loss = batch_loss(model, windows.inputs[idx], windows.targets[idx], cfg.loss_kind, layer_log)
            value = loss.item()
            if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
                model.load_state_dict(last_good)
                raise DivergenceError(f"loss {value:g} at step {step}; parameters restored to step {step - 1}",
                                      last_good)
            loss.backward()
            opt.step()
            last_good = model.state_dict()
            if layer_log:
                for layer, ws, wt in layer_log:
                    result.gate_log.append((step, layer, "spatial", ws.mean(axis=0)))
                    result.gate_log.append((step, layer, "temporal", wt.mean(axis=0)))
            result.steps.append((step, value))
            losses.append(value)
            step += 1
        if not losses:
            break
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "lr": opt.lr}
        if validation is not None and len(validation):
            record["val_loss"] = evaluate_loss(model, validation, cfg.loss_kind)
            if cfg.restore_best and record["val_loss"] < best[0]:
                best = (record["val_loss"], epoch, model.state_dict())
        result.history.append(record)
        log.debug("epoch %d loss %.6g", epoch, record["train_loss"])
        opt.lr *= cfg.lr_decay
    if best[2] is not None:
        model.load_state_dict(best[2])
        result.best_epoch = best[1]
    result.state = model.state_dict()
    return result


def evaluate_loss(model, windows, loss_kind="mpjpe", batch_size=256):
    pred = predict_windows(model, windows.inputs, batch_size)
    if loss_kind == "mpjpe":
        return mpjpe(pred, windows.targets)
    return mae(pred, windows.targets)


def predict_windows(model, inputs, batch_size=256, threads=1):
    """Frame-major ``(W, T, N, C)`` inputs -> ``(W, t, N, C)`` predictions.

    ``model`` is a :class:`GagcnModel` or any callable on frame-major batches.
    Chunks are evaluated in parallel with ``threads`` > 1 and merged in order.
    """
    inputs = np.asarray(inputs)
    if isinstance(model, GagcnModel):
        fn = lambda x: to_frame_layout(model.predict(to_model_layout(x).astype(model.dtype)))  # noqa: E731
    else:
        fn = model
    chunks = [inputs[i:i + batch_size] for i in range(0, len(inputs), batch_size)]
    if not chunks:
        return np.zeros((0,) + inputs.shape[1:])
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outs = list(pool.map(fn, chunks))
    else:
        outs = [fn(c) for c in chunks]
    return np.concatenate(outs).astype(np.float64)


def zero_velocity(inputs, frames_out=25):
    """Repeat the last observed frame ``frames_out`` times."""
    inputs = np.asarray(inputs)
    return np.repeat(inputs[:, -1:], frames_out, axis=1)


# horizon evaluation


@dataclass
class HorizonReport:
    metric: str
    mode: str
    rate_hz: float
    horizons_ms: list
    frames: list
    errors: list
    per_frame: list = field(default_factory=list)

    def as_dict(self):
        return dict(zip(self.horizons_ms, self.errors))

    def rows(self):
        return [(h, self.metric, e) for h, e in zip(self.horizons_ms, self.errors)]


def evaluate_horizons(model, windows, rate_hz=25.0, horizons=HORIZONS_MS, metric="mpjpe",
                      mode="cumulative", threads=1):
    """Error at each horizon: mean over frames ``1..k`` (``cumulative``) or at frame ``k`` (``at_horizon``)."""
    if mode not in ("cumulative", "at_horizon"):
        raise ConfigurationError(f"mode must be 'cumulative' or 'at_horizon', got {mode!r}")
    pred = predict_windows(model, windows.inputs, threads=threads)
    errors = per_frame_error(pred, windows.targets, metric)
    t = errors.shape[0]
    kept_h, kept_f, values = [], [], []
    for h in horizons:
        k = horizon_frames(h, rate_hz)
        if k > t or k < 1:
            warnings.warn(f"horizon {h} ms ({k} frames) is outside the {t} predicted frames; skipped")
            continue
        kept_h.append(h)
        kept_f.append(k)
        values.append(float(errors[:k].mean() if mode == "cumulative" else errors[k - 1]))
    return HorizonReport(metric, mode, rate_hz, kept_h, kept_f, values, errors.tolist())


# ablations

SWEEP_SETTINGS = ((4, 3), (4, 1), (1, 3), (8, 6), (3, 4))
SUITES = ("gated_vs_stable_unseen", "candidate_sweep")


@dataclass
class AblationConfig:
    classes: tuple = SYNTH_CLASSES
    held_out: str = "all"
    sequences_per_class: int = 4
    test_sequences_per_class: int = 2
    validation_sequences_per_class: int = 1
    duration_frames: int = 120
    noise_scale: float = 0.02
    window_stride: int = 2
    seeds: tuple = (0, 1, 2, 3, 4)
    width: int = 32
    depth: int = 6
    frames_in: int = 10
    frames_out: int = 25
    n: int = 4
    m: int = 3
    sweep: tuple = SWEEP_SETTINGS
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=15, learning_rate=2e-3, lr_decay=0.93,
                                                                   restore_best=True))

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.seeds = tuple(self.seeds)
        self.sweep = tuple(tuple(s) for s in self.sweep)
        if self.held_out != "all" and self.held_out not in self.classes:
            raise ConfigurationError(f"held-out class {self.held_out!r} is not among {self.classes}")
        if len(self.classes) < 2:
            raise ConfigurationError("an ablation needs at least two classes")
        if not self.seeds:
            raise ConfigurationError("an ablation needs at least one seed")

    @property
    def held_out_classes(self):
        """Classes withheld in turn; ``"all"`` rotates through every class."""
        return self.classes if self.held_out == "all" else (self.held_out,)


def _model_config(ab, seed, scale, n, m, gated, joints, channels):
    return ModelConfig(joints=joints, channels=channels, frames_in=ab.frames_in, frames_out=ab.frames_out,
                       width=ab.width, depth=ab.depth, n=n, m=m, gated=gated, scale=scale,
                       precision=ab.train.precision, seed=seed)


def check_fair(arm_a, arm_b):
    """Reject arm pairs whose configs differ in anything but gating and candidate counts."""
    ignore = {"n", "m", "gated"}
    da = {k: v for k, v in asdict(arm_a).items() if k not in ignore}
    db = {k: v for k, v in asdict(arm_b).items() if k not in ignore}
    diff = sorted(k for k in da if da[k] != db[k])
    if diff:
        raise ConfigurationError(f"ablation arms differ in {diff}; only n, m and gating may vary")


def data_scale(windows):
    """Typical displacement magnitude used to normalise model inputs."""
    centred = windows.inputs - windows.inputs[:, -1:, :1, :]
    return float(max(np.sqrt(np.mean(centred ** 2)), 1e-6))


def _suite_data(ab, seed):
    train_seqs = synth_dataset(ab.classes, ab.sequences_per_class, ab.duration_frames, ab.noise_scale, seed)
    test_seqs = synth_dataset(ab.classes, ab.test_sequences_per_class, ab.duration_frames, ab.noise_scale,
                              seed + 10_000)
    val_seqs = synth_dataset(ab.classes, ab.validation_sequences_per_class, ab.duration_frames, ab.noise_scale,
                             seed + 20_000)

    def windows(seqs):
        return WindowSet.concatenate([make_windows(s, ab.frames_in, ab.frames_out, ab.window_stride)
                                      for s in seqs])

    return windows(train_seqs), windows(test_seqs), windows(val_seqs)


def mean_gate_weights(model, windows, layer=None, axis="spatial"):
    """Mean blending weights over ``windows``, one vector per encoder layer."""
    log_entries = []
    with nk.no_grad():
        model(to_model_layout(windows.inputs).astype(model.dtype), log_entries)
    pick = 1 if axis == "spatial" else 2
    means = [entry[pick].mean(axis=0) for entry in log_entries]
    return means if layer is None else means[layer]


def gate_separation(model, windows, classes):
    """L1 distance between class-mean spatial weights, averaged over layers, per class pair."""
    per_class = {c: mean_gate_weights(model, windows.where(label=c)) for c in classes
                 if len(windows.where(label=c))}
    out = {}
    names = sorted(per_class)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            dist = [np.abs(wa - wb).sum() for wa, wb in zip(per_class[a], per_class[b])]
            out[(a, b)] = float(np.mean(dist))
    return out


@dataclass
class AblationReport:
    suite: str
    rows: list                # dicts: arm, n, m, motion, held_out, seed, horizon_ms, value
    summary: dict
    gate_separation: dict = field(default_factory=dict)  # (held_out, seed) -> {(a, b): l1}

    def mean_rows(self):
        """Rows averaged over seeds and held-out classes: (arm, n, m, motion, horizon_ms) -> value."""
        acc = {}
        for r in self.rows:
            key = (r["arm"], r["n"], r["m"], r["motion"], r["horizon_ms"])
            acc.setdefault(key, []).append(r["value"])
        return {k: float(np.mean(v)) for k, v in acc.items()}


def _train_arm(ab, seed, windows, n, m, gated, scale, joints, channels, validation=None):
    cfg = _model_config(ab, seed, scale, n, m, gated, joints, channels)
    model = GagcnModel(cfg)
    train(model, windows, replace(ab.train, seed=seed), validation=validation)
    return model, cfg


def run_ablation(suite, ab=None, progress=None, threads=1):
    """Train matched arms on the synthetic suite and report per-horizon errors.

    ``gated_vs_stable_unseen`` trains a gated and a stable model without the
    held-out class, evaluates both on it ("unseen"), and trains one more gated
    model with every class to give the "seen" reference.  With
    ``held_out="all"`` this repeats once per class.  Validation windows come
    only from classes each model trains on.
    ``candidate_sweep`` trains gated models for each (n, m) in ``ab.sweep``.
    """
    ab = ab if ab is not None else AblationConfig()
    if suite not in SUITES:
        raise ConfigurationError(f"unknown ablation suite {suite!r}; choose from {SUITES}")
    rows, separations = [], {}
    say = progress or (lambda msg: None)

    def add_rows(arm, n, m, motion, held_out, seed, report):
        for h, v in zip(report.horizons_ms, report.errors):
            rows.append({"arm": arm, "n": n, "m": m, "motion": motion, "held_out": held_out, "seed": seed,
                         "horizon_ms": h, "value": v})

    for seed in ab.seeds:
        train_all, test_all, val_all = _suite_data(ab, seed)
        joints, channels = train_all.inputs.shape[2], train_all.inputs.shape[3]
        if suite == "candidate_sweep":
            scale = data_scale(train_all)
            for n, m in ab.sweep:
                say(f"seed {seed}: n={n} m={m}")
                model, _ = _train_arm(ab, seed, train_all, n, m, True, scale, joints, channels, val_all)
                add_rows("gated", n, m, "all", "", seed, evaluate_horizons(model, test_all, threads=threads))
            continue
        for held_out in ab.held_out_classes:
            held = test_all.where(label=held_out)
            seen_train = train_all.where(exclude=held_out)
            seen_val = val_all.where(exclude=held_out)
            scale = data_scale(seen_train)
            gated_cfg = _model_config(ab, seed, scale, ab.n, ab.m, True, joints, channels)
            stable_cfg = _model_config(ab, seed, scale, 1, 1, False, joints, channels)
            check_fair(gated_cfg, stable_cfg)
            say(f"seed {seed}, held out {held_out}: stable arm")
            stable, _ = _train_arm(ab, seed, seen_train, 1, 1, False, scale, joints, channels, seen_val)
            add_rows("stable", 1, 1, "unseen", held_out, seed, evaluate_horizons(stable, held, threads=threads))
            say(f"seed {seed}, held out {held_out}: gated arm")
            gated, _ = _train_arm(ab, seed, seen_train, ab.n, ab.m, True, scale, joints, channels, seen_val)
            add_rows("gated", ab.n, ab.m, "unseen", held_out, seed,
                     evaluate_horizons(gated, held, threads=threads))
            separations[(held_out, seed)] = gate_separation(gated, test_all.where(exclude=held_out),
                                                            [c for c in ab.classes if c != held_out])
            say(f"seed {seed}, held out {held_out}: gated arm, all classes")
            seen_model, _ = _train_arm(ab, seed, train_all, ab.n, ab.m, True, scale, joints, channels, val_all)
            add_rows("gated", ab.n, ab.m, "seen", held_out, seed,
                     evaluate_horizons(seen_model, held, threads=threads))

    report = AblationReport(suite, rows, {}, separations)
    means = report.mean_rows()
    if suite == "gated_vs_stable_unseen":
        g = means[("gated", ab.n, ab.m, "unseen", 1000)]
        s = means[("stable", 1, 1, "unseen", 1000)]
        pairs = {}
        for sep in separations.values():
            for k, v in sep.items():
                pairs.setdefault(k, []).append(v)
        best = max(float(np.mean(v)) for v in pairs.values()) if pairs else 0.0
        report.summary = {"suite": suite, "held_out": ab.held_out, "seeds": len(ab.seeds),
                          "gated_unseen_1000ms": g, "stable_unseen_1000ms": s,
                          "gated_le_stable": bool(g <= s), "gate_separation_l1": best}
    else:
        report.summary = {"suite": suite, "seeds": len(ab.seeds), "settings": len(ab.sweep),
                          "best_1000ms": "n{}m{}".format(*min(
                              ab.sweep, key=lambda nm: means[("gated", nm[0], nm[1], "all", 1000)]))}
    return report


def ablation_arms_equal(ab, seed=0, inputs=None):
    """Max abs difference between an n=m=1 gated model and a stable one sharing initial values."""
    joints = 12
    gated = GagcnModel(_model_config(ab, seed, 1.0, 1, 1, True, joints, 3))
    stable = GagcnModel(_model_config(ab, seed, 1.0, 1, 1, False, joints, 3))
    # A zero output layer would make both arms trivially equal.
    out = gated.decoder.out_weight
    out.data[...] = nk.Rng(seed).child(1).normal(0.1, out.shape, out.dtype)
    stable.load_state_dict(gated.state_dict(), strict=False)
    if inputs is None:
        inputs = nk.Rng(seed).normal(100.0, (4, 3, joints, ab.frames_in))
    return float(np.max(np.abs(gated.predict(inputs) - stable.predict(inputs))))


def clone_model(model):
    return copy.deepcopy(model)
