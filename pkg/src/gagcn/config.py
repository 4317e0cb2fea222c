"""Run configuration: a TOML file with one table per concern.

Example::

    [data]
    source = "synthetic"          # or "csv"
    classes = ["walk_cycle"]
    seed = 0

    [model]
    width = 64
    n = 4
    m = 3

    [train]
    epochs = 20
    learning_rate = 1e-3

    [output]
    dir = "runs/walk"

Every table is optional.  Unknown tables or keys, and values of the wrong
type, are rejected with a message naming the offending field.  Validation
runs completely before anything is computed.
"""

import copy
import dataclasses
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .decoder import ModelConfig, RESIDUAL_MODES
from .exceptions import ConfigurationError
from .motiondata import SYNTH_CLASSES
from .trainer import HORIZONS_MS, SUITES, SWEEP_SETTINGS, AblationConfig, TrainConfig
from . import numkernel as nk

DATA_SOURCES = ("synthetic", "csv")


@dataclass
class DataSection:
    source: str = "synthetic"
    classes: list = field(default_factory=lambda: list(SYNTH_CLASSES))
    sequences_per_class: int = 4
    duration_frames: int = 120
    noise_scale: float = 0.02
    seed: int = 0
    paths: list = field(default_factory=list)
    rate_hz: float = 25.0
    frames_in: int = 10
    frames_out: int = 25
    window_stride: int = 1
    validation_sequences_per_class: int = 0

    def check(self):
        if self.source not in DATA_SOURCES:
            _fail("data", "source", f"must be one of {DATA_SOURCES}, got {self.source!r}")
        unknown = [c for c in self.classes if c not in SYNTH_CLASSES]
        if unknown:
            _fail("data", "classes", f"unknown motion classes {unknown}; choose from {list(SYNTH_CLASSES)}")
        if self.source == "synthetic" and not self.classes:
            _fail("data", "classes", "needs at least one class")
        if self.source == "csv" and not self.paths:
            _fail("data", "paths", "needs at least one CSV file when source = 'csv'")
        for name in ("sequences_per_class", "duration_frames", "frames_in", "frames_out", "window_stride"):
            if getattr(self, name) < 1:
                _fail("data", name, "must be >= 1")
        if self.validation_sequences_per_class < 0:
            _fail("data", "validation_sequences_per_class", "must be >= 0")
        if self.noise_scale < 0:
            _fail("data", "noise_scale", "must be >= 0")
        if self.rate_hz <= 0:
            _fail("data", "rate_hz", "must be > 0")


@dataclass
class ModelSection:
    width: int = 64
    depth: int = 6
    widths: list = None
    n: int = 4
    m: int = 3
    gated: bool = True
    activation: str = "tanh"
    kernel: int = 3
    dilations: list = field(default_factory=lambda: [1, 2, 4])
    residual: str = "offset_from_last_frame"
    center_joint: int = 0

    def check(self):
        if self.residual not in RESIDUAL_MODES:
            _fail("model", "residual", f"must be one of {RESIDUAL_MODES}")
        if self.activation not in nk.ACTIVATIONS:
            _fail("model", "activation", f"must be one of {sorted(nk.ACTIVATIONS)}")
        for name in ("width", "depth", "n", "m", "kernel"):
            if getattr(self, name) < 1:
                _fail("model", name, "must be >= 1")
        if not self.gated and (self.n, self.m) != (1, 1):
            _fail("model", "gated", "a stable (ungated) model needs n = m = 1")


@dataclass
class OutputSection:
    dir: str = "runs/default"


@dataclass
class EvalSection:
    horizons: list = field(default_factory=lambda: list(HORIZONS_MS))
    metrics: list = field(default_factory=lambda: ["mpjpe"])
    mode: str = "cumulative"

    def check(self):
        if not self.metrics or any(m not in ("mpjpe", "mae") for m in self.metrics):
            _fail("eval", "metrics", "must list one or more of 'mpjpe', 'mae'")
        if self.mode not in ("cumulative", "at_horizon"):
            _fail("eval", "mode", "must be 'cumulative' or 'at_horizon'")
        if any(h <= 0 for h in self.horizons):
            _fail("eval", "horizons", "must all be > 0 ms")


_ABLATION_KEYS = [f.name for f in fields(AblationConfig) if f.name != "train"]


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    suite: str = "gated_vs_stable_unseen"
    source: str = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def output_dir(self):
        return Path(self.output.dir)

    def model_config(self, joints, channels, scale=1.0):
        md, tr = self.model, self.train
        try:
            return ModelConfig(joints=joints, channels=channels, frames_in=self.data.frames_in,
                               frames_out=self.data.frames_out, width=md.width, depth=md.depth,
                               n=md.n, m=md.m, gated=md.gated, activation=md.activation, kernel=md.kernel,
                               dilations=tuple(md.dilations), residual=md.residual,
                               center_joint=md.center_joint, scale=scale, precision=tr.precision,
                               seed=tr.seed, widths=list(md.widths) if md.widths else None)
        except ConfigurationError as exc:
            raise ConfigurationError(f"[model] {exc}") from None


def _fail(section, key, message):
    raise ConfigurationError(f"[{section}] {key}: {message}")


def _type_ok(value, default, annotation):
    if default is None:
        if annotation is list or annotation == "list":
            return value is None or isinstance(value, list)
        if annotation in (int, "int"):
            return value is None or (isinstance(value, int) and not isinstance(value, bool))
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, (list, tuple)):
        return isinstance(value, (list, tuple))
    return isinstance(value, type(default))


def _defaults(cls):
    out = {}
    for f in fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
        else:
            out[f.name] = None
    return out


def build_section(cls, section, values, allowed=None, base=None):
    """Instantiate ``cls`` from a TOML table, rejecting unknown keys and wrong types."""
    if not isinstance(values, dict):
        raise ConfigurationError(f"[{section}] must be a table")
    allowed = allowed or [f.name for f in fields(cls)]
    defaults = _defaults(cls) if base is None else {k: getattr(base, k) for k in allowed}
    annotations = {f.name: f.type for f in fields(cls)}
    for key, value in values.items():
        if key not in allowed:
            _fail(section, key, f"unknown key (allowed: {', '.join(sorted(allowed))})")
        if not _type_ok(value, defaults[key], annotations.get(key)):
            _fail(section, key, f"expected {type(defaults[key]).__name__}, got {type(value).__name__} {value!r}")
        if isinstance(defaults[key], float) and isinstance(value, int):
            values = {**values, key: float(value)}
    try:
        if base is not None:
            obj = replace(base, **values)
        else:
            obj = cls(**values)
    except ConfigurationError as exc:
        raise ConfigurationError(f"[{section}] {exc}") from None
    if hasattr(obj, "check"):
        obj.check()
    return obj


_SECTIONS = ("data", "model", "train", "eval", "output", "ablation")


def from_dict(raw, source=None):
    """Validate a parsed config mapping into a :class:`RunConfig`."""
    unknown = sorted(set(raw) - set(_SECTIONS) - {"suite"})
    if unknown:
        raise ConfigurationError(f"unknown config table(s) {unknown}; allowed: {', '.join(_SECTIONS)}")
    cfg = RunConfig(source=source, raw=copy.deepcopy(raw))
    cfg.data = build_section(DataSection, "data", raw.get("data", {}))
    cfg.model = build_section(ModelSection, "model", raw.get("model", {}))
    cfg.train = build_section(TrainConfig, "train", raw.get("train", {}))
    cfg.eval = build_section(EvalSection, "eval", raw.get("eval", {}))
    cfg.output = build_section(OutputSection, "output", raw.get("output", {}))
    ab = build_section(AblationConfig, "ablation", raw.get("ablation", {}), allowed=_ABLATION_KEYS)
    # Ablation runs keep their own schedule unless [train] overrides individual fields.
    train_over = raw.get("train", {})
    if train_over:
        ab.train = build_section(TrainConfig, "train", train_over, base=AblationConfig().train)
    cfg.ablation = ab
    suite = raw.get("suite", cfg.suite)
    if suite not in SUITES:
        _fail("suite", "suite", f"must be one of {SUITES}")
    cfg.suite = suite
    if cfg.model.widths is not None and len(cfg.model.widths) < 2:
        _fail("model", "widths", "needs at least two entries")
    cfg.model_config(joints=12, channels=3)  # surfaces model-level errors before compute
    return cfg


def load_config(path):
    """Read and validate a TOML run config; a missing file is a configuration error."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid TOML: {exc}") from None
    return from_dict(raw, source=str(path))


def apply_overrides(cfg, overrides):
    """Apply ``{"section.key": value}`` overrides (from command-line flags) and revalidate.

    ``None`` values are skipped; keys without a dot set top-level entries such as ``suite``.
    """
    raw = copy.deepcopy(cfg.raw)
    for dotted, value in overrides.items():
        if value is None:
            continue
        if "." not in dotted:
            raw[dotted] = value
            continue
        section, key = dotted.split(".", 1)
        raw[section] = {**raw.get(section, {}), key: value}
    return from_dict(raw, source=cfg.source)


def to_dict(cfg):
    def plain(obj, keys=None):
        d = dataclasses.asdict(obj)
        d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items() if v is not None}
        if keys is not None:
            d = {k: v for k, v in d.items() if k in keys}
        return d

    out = {"data": plain(cfg.data), "model": plain(cfg.model), "train": plain(cfg.train),
           "eval": plain(cfg.eval), "output": plain(cfg.output),
           "ablation": plain(cfg.ablation, _ABLATION_KEYS), "suite": cfg.suite}
    out["ablation"]["sweep"] = [list(s) for s in cfg.ablation.sweep]
    return out


__all__ = ["RunConfig", "DataSection", "ModelSection", "EvalSection", "OutputSection", "load_config",
           "from_dict", "apply_overrides", "to_dict", "SWEEP_SETTINGS"]
