"""Skeletons, motion sequences, windowing, synthetic motion, and CSV I/O.

Frames are stored frame-major as ``(F, N, C)`` arrays: coordinates in
millimetres or exponential-map vectors in radians.

Motion CSV layout::

    frame,<joint>_c0,<joint>_c1,<joint>_c2,...
    0,12.5,903.1,-4.0,...

with joints in skeleton order.  Each CSV has a JSON sidecar
``<stem>.skeleton.json``::

    {"schema": "gagcn.skeleton/1",
     "joints": [...], "parents": [...], "channels": 3,
     "rate_hz": 25.0, "representation": "coords3d", "action": "walk_cycle"}
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .exceptions import ConfigurationError, ParseError

SKELETON_SCHEMA = "gagcn.skeleton/1"
REPRESENTATIONS = ("coords3d", "expmap")
SYNTH_CLASSES = ("walk_cycle", "wave_arm", "sit_down", "figure8_drift")


class RepresentationWarning(UserWarning):
    pass


@dataclass
class Skeleton:
    joint_names: list
    parent: list
    channels: int = 3

    def __post_init__(self):
        self.joint_names = list(self.joint_names)
        self.parent = [int(p) for p in self.parent]
        n = len(self.joint_names)
        if len(self.parent) != n:
            raise ConfigurationError("parent list length differs from joint count")
        if len(set(self.joint_names)) != n:
            raise ConfigurationError("joint names must be unique")
        roots = [i for i, p in enumerate(self.parent) if p == -1]
        if len(roots) != 1:
            raise ConfigurationError(f"skeleton needs exactly one root, found {len(roots)}")
        for i, p in enumerate(self.parent):
            if p != -1 and not 0 <= p < n:
                raise ConfigurationError(f"joint {self.joint_names[i]} has parent index {p} out of range")
        # every chain must reach the root without revisiting a joint
        for i in range(n):
            seen, j = set(), i
            while j != -1:
                if j in seen:
                    raise ConfigurationError(f"parent indices contain a cycle through {self.joint_names[j]}")
                seen.add(j)
                j = self.parent[j]
        if self.channels < 1:
            raise ConfigurationError("channels must be positive")

    @property
    def num_joints(self):
        return len(self.joint_names)

    @property
    def root(self):
        return self.parent.index(-1)

    def column_names(self):
        return [f"{name}_c{c}" for name in self.joint_names for c in range(self.channels)]


@dataclass
class MotionSequence:
    skeleton: Skeleton
    frames: np.ndarray
    rate_hz: float
    representation: str = "coords3d"
    action_label: str = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.representation not in REPRESENTATIONS:
            raise ConfigurationError(f"representation must be one of {REPRESENTATIONS}")
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ConfigurationError(f"frames must be a non-empty (F, N, C) array, got {self.frames.shape}")
        if self.frames.shape[1:] != (self.skeleton.num_joints, self.skeleton.channels):
            raise ConfigurationError(
                f"frames {self.frames.shape} do not match skeleton (N={self.skeleton.num_joints}, "
                f"C={self.skeleton.channels})")
        if not self.rate_hz > 0:
            raise ConfigurationError("rate_hz must be positive")

    @property
    def num_frames(self):
        return self.frames.shape[0]


class WindowSet:
    """Contiguous (input, target) windows stacked as arrays.

    ``inputs`` is ``(W, T, N, C)``, ``targets`` is ``(W, t, N, C)``; ``labels``
    holds the action label of the source sequence of each window.
    """

    def __init__(self, inputs, targets, labels=None, starts=None, frames_in=None, frames_out=None):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.frames_in = frames_in if frames_in is not None else self.inputs.shape[1]
        self.frames_out = frames_out if frames_out is not None else self.targets.shape[1]
        self.labels = list(labels) if labels is not None else [None] * len(self.inputs)
        self.starts = list(starts) if starts is not None else [0] * len(self.inputs)

    def __len__(self):
        return len(self.inputs)

    def __iter__(self):
        return iter(zip(self.inputs, self.targets))

    @property
    def windows(self):
        return list(self)

    def subset(self, index):
        index = np.asarray(index, dtype=int)
        return WindowSet(self.inputs[index], self.targets[index], [self.labels[i] for i in index],
                         [self.starts[i] for i in index], self.frames_in, self.frames_out)

    def where(self, label=None, exclude=None):
        keep = [i for i, lab in enumerate(self.labels)
                if (label is None or lab == label) and (exclude is None or lab != exclude)]
        return self.subset(keep)

    @classmethod
    def concatenate(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty(0, 0, 0, 0)
        return cls(np.concatenate([s.inputs for s in sets]), np.concatenate([s.targets for s in sets]),
                   [lab for s in sets for lab in s.labels], [st for s in sets for st in s.starts],
                   sets[0].frames_in, sets[0].frames_out)

    @classmethod
    def empty(cls, frames_in, frames_out, joints, channels):
        return cls(np.zeros((0, frames_in, joints, channels)), np.zeros((0, frames_out, joints, channels)),
                   [], [], frames_in, frames_out)


def downsample(seq, target_hz):
    """Keep every ``rate/target``-th frame; the ratio must be an integer."""
    if target_hz <= 0 or target_hz > seq.rate_hz:
        raise ConfigurationError(f"target rate {target_hz} Hz must be in (0, {seq.rate_hz}] Hz")
    ratio = seq.rate_hz / target_hz
    stride = round(ratio)
    if abs(ratio - stride) > 1e-9:
        raise ConfigurationError(
            f"{seq.rate_hz:g} Hz -> {target_hz:g} Hz needs a non-integer stride {ratio:g}; "
            f"resample the source to a multiple of {target_hz:g} Hz first (e.g. 50 Hz -> 25 Hz is stride 2)")
    return MotionSequence(seq.skeleton, seq.frames[::stride].copy(), float(target_hz), seq.representation,
                          seq.action_label, dict(seq.meta))


def make_windows(seq, frames_in=10, frames_out=25, stride=1):
    if stride < 1:
        raise ConfigurationError("stride must be positive")
    total = frames_in + frames_out
    N, C = seq.skeleton.num_joints, seq.skeleton.channels
    if seq.num_frames < total:
        warnings.warn(f"sequence has {seq.num_frames} frames, fewer than the {total} needed for one window")
        return WindowSet.empty(frames_in, frames_out, N, C)
    starts = list(range(0, seq.num_frames - total + 1, stride))
    block = np.stack([seq.frames[s:s + total] for s in starts])
    return WindowSet(block[:, :frames_in], block[:, frames_in:], [seq.action_label] * len(starts), starts,
                     frames_in, frames_out)


# synthetic motion

SYNTH_SKELETON = Skeleton(
    ["pelvis", "spine", "neck", "head", "l_elbow", "l_hand", "r_elbow", "r_hand",
     "l_knee", "l_foot", "r_knee", "r_foot"],
    [-1, 0, 1, 2, 2, 4, 2, 6, 0, 8, 0, 10],
)

# Rest-pose bone vectors (mm) from parent to joint; y up, z forward, x to the left.
_BONES = np.array([
    [0, 0, 0],
    [0, 250, 0],
    [0, 250, 0],
    [0, 150, 0],
    [200, -250, 0],
    [0, -260, 0],
    [-200, -250, 0],
    [0, -260, 0],
    [100, -420, 0],
    [0, -420, 0],
    [-100, -420, 0],
    [0, -420, 0],
], dtype=np.float64)

_PELVIS_HEIGHT = 900.0


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def forward_kinematics(root, rotations, skeleton=SYNTH_SKELETON, bones=_BONES):
    """Positions ``(F, N, 3)`` from root positions ``(F, 3)`` and per-bone rotations ``(F, N, 3, 3)``.

    A joint's rotation turns the bone leading to it and, through the chain,
    every bone below it.
    """
    F, N = rotations.shape[:2]
    pos = np.zeros((F, N, 3))
    glob = np.zeros((F, N, 3, 3))
    for j in range(N):
        p = skeleton.parent[j]
        if p == -1:
            glob[:, j] = rotations[:, j]
            pos[:, j] = root
        else:
            glob[:, j] = glob[:, p] @ rotations[:, j]
            pos[:, j] = pos[:, p] + glob[:, j] @ bones[j]
    return pos


def _angles_to_rotations(pitch, roll):
    """Per-frame, per-joint rotations from pitch (about x) and roll (about z) angle tracks."""
    F, N = pitch.shape
    rot = np.empty((F, N, 3, 3))
    for f in range(F):
        for j in range(N):
            rot[f, j] = _rot_z(roll[f, j]) @ _rot_x(pitch[f, j])
    return rot


def synth_generate(kind, duration_frames=120, noise_scale=0.0, rng=None, rate_hz=25.0):
    """Animate the 12-joint toy skeleton with a class-specific parametric motion.

    Classes: ``walk_cycle`` and ``wave_arm`` (phase-offset sinusoids with an
    integer period in frames, stored in ``meta["period"]``), ``sit_down``
    (logistic descent), ``figure8_drift`` (root on a figure-eight path).
    ``noise_scale`` is the standard deviation of additive coordinate noise in
    centimetres.  The same ``rng`` seed reproduces the sequence bit for bit.
    """
    if kind not in SYNTH_CLASSES:
        raise ConfigurationError(f"unknown motion class {kind!r}; choose from {SYNTH_CLASSES}")
    if duration_frames < 1:
        raise ConfigurationError("duration_frames must be positive")
    rng = rng if isinstance(rng, nk.Rng) else nk.Rng(0 if rng is None else rng)
    F, N = duration_frames, SYNTH_SKELETON.num_joints
    f = np.arange(F, dtype=np.float64)
    pitch = np.zeros((F, N))
    roll = np.zeros((F, N))
    root = np.zeros((F, 3))
    root[:, 1] = _PELVIS_HEIGHT
    u = lambda lo, hi: float(rng.uniform(lo, hi, ()))  # noqa: E731
    meta = {}

    if kind == "walk_cycle":
        period = int(rng.integers(20, 31))
        phase = u(0, 2 * np.pi)
        swing, arm, knee = u(0.35, 0.55), u(0.2, 0.4), u(0.8, 1.1)
        theta = 2 * np.pi * f / period + phase
        pitch[:, 8] = swing * np.sin(theta)
        pitch[:, 10] = -swing * np.sin(theta)
        pitch[:, 9] = -knee * np.maximum(0, np.sin(theta + np.pi / 2))
        pitch[:, 11] = -knee * np.maximum(0, np.sin(theta - np.pi / 2))
        pitch[:, 4] = -arm * np.sin(theta)
        pitch[:, 6] = arm * np.sin(theta)
        pitch[:, 1] = 0.05
        root[:, 1] += 20 * np.cos(2 * theta)
        meta["period"] = period
    elif kind == "wave_arm":
        period = int(rng.integers(15, 26))
        phase = u(0, 2 * np.pi)
        raise_angle, amp = u(2.0, 2.5), u(0.4, 0.8)
        theta = 2 * np.pi * f / period + phase
        roll[:, 6] = -raise_angle
        roll[:, 7] = -amp * (1 + np.sin(theta)) / 2
        roll[:, 1] = 0.04 * np.sin(theta)
        roll[:, 4] = 0.1
        meta["period"] = period
    elif kind == "sit_down":
        center = u(0.3, 0.7) * F
        tau = u(12.0, 17.0)
        depth, lean = u(350, 450), u(0.25, 0.45)
        s = 1.0 / (1.0 + np.exp(-(f - center) / tau))
        root[:, 1] -= depth * s
        root[:, 2] -= 150 * s
        pitch[:, 8] = -1.4 * s
        pitch[:, 10] = -1.4 * s
        pitch[:, 9] = 1.4 * s
        pitch[:, 11] = 1.4 * s
        pitch[:, 1] = lean * s
        pitch[:, 4] = -0.3 * s
        pitch[:, 6] = -0.3 * s
        meta.update(center=center, tau=tau)
    else:  # figure8_drift
        period = int(rng.integers(40, 61))
        phase = u(0, 2 * np.pi)
        ax, az = u(300, 600), u(200, 400)
        theta = 2 * np.pi * f / period + phase
        root[:, 0] = ax * np.sin(theta)
        root[:, 2] = az * np.sin(2 * theta)
        step = 2 * theta
        pitch[:, 8] = 0.2 * np.sin(step)
        pitch[:, 10] = -0.2 * np.sin(step)
        roll[:, 1] = -0.1 * np.cos(theta)
        meta["period"] = period

    frames = forward_kinematics(root, _angles_to_rotations(pitch, roll))
    if noise_scale > 0:
        frames = frames + rng.normal(10.0 * noise_scale, frames.shape)
    meta["noise_scale"] = noise_scale
    return MotionSequence(SYNTH_SKELETON, frames, rate_hz, "coords3d", kind, meta)


def synth_dataset(classes=SYNTH_CLASSES, sequences_per_class=4, duration_frames=120, noise_scale=0.02,
                  seed=0, rate_hz=25.0):
    """Several sequences per class, each from its own sub-stream of ``seed``."""
    root = nk.Rng(seed)
    out = []
    for ci, kind in enumerate(classes):
        crng = root.child(SYNTH_CLASSES.index(kind) if kind in SYNTH_CLASSES else ci)
        for s in range(sequences_per_class):
            out.append(synth_generate(kind, duration_frames, noise_scale, crng.child(s), rate_hz))
    return out


# CSV and skeleton descriptor I/O


def sidecar_path(csv_path):
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".skeleton.json")


def save_skeleton(path, skeleton, rate_hz=None, representation=None, action=None):
    doc = {"schema": SKELETON_SCHEMA, "joints": skeleton.joint_names, "parents": skeleton.parent,
           "channels": skeleton.channels}
    if rate_hz is not None:
        doc["rate_hz"] = rate_hz
    if representation is not None:
        doc["representation"] = representation
    if action is not None:
        doc["action"] = action
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_skeleton(path):
    """Read a skeleton descriptor; returns ``(skeleton, extra_fields)``."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid skeleton descriptor: {exc.msg}", exc.lineno) from exc
    if doc.get("schema") != SKELETON_SCHEMA:
        raise ParseError(f"{path}: unsupported skeleton schema {doc.get('schema')!r}, expected {SKELETON_SCHEMA}")
    try:
        skeleton = Skeleton(doc["joints"], doc["parents"], int(doc.get("channels", 3)))
    except KeyError as exc:
        raise ParseError(f"{path}: skeleton descriptor lacks {exc.args[0]!r}") from exc
    except ConfigurationError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    extra = {k: doc[k] for k in ("rate_hz", "representation", "action") if k in doc}
    return skeleton, extra


def save_motion_csv(path, seq, write_sidecar=True):
    path = Path(path)
    F = seq.num_frames
    flat = seq.frames.reshape(F, -1)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame"] + seq.skeleton.column_names())
        for i in range(F):
            writer.writerow([i] + [repr(float(v)) for v in flat[i]])
    if write_sidecar:
        save_skeleton(sidecar_path(path), seq.skeleton, seq.rate_hz, seq.representation, seq.action_label)


def _load_motion_csv(path, representation, skeleton_path=None, rate_hz=None):
    path = Path(path)
    skeleton, extra = load_skeleton(skeleton_path or sidecar_path(path))
    expected = ["frame"] + skeleton.column_names()
    width = len(expected)
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file", 1)
        if [h.strip() for h in header] != expected:
            raise ParseError(f"{path}: header does not match the skeleton descriptor "
                             f"(expected {width} columns starting {expected[:4]})", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                raise ParseError(f"{path}: expected {width} fields, found {len(row)}", line)
            try:
                values = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError(f"{path}: non-finite value", line)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no frames")
    frames = np.asarray(rows).reshape(len(rows), skeleton.num_joints, skeleton.channels)
    file_repr = extra.get("representation", representation)
    if file_repr != representation:
        raise ParseError(f"{path}: descriptor says {file_repr!r}, loader expects {representation!r}")
    if representation == "expmap":
        norms = np.linalg.norm(frames, axis=-1)
        if np.any(norms >= np.pi):
            bad = np.argwhere(norms >= np.pi)[0]
            warnings.warn(f"{path}: exponential-map norm {norms[tuple(bad)]:.4f} >= pi at frame {bad[0]}, "
                          f"joint {skeleton.joint_names[bad[1]]}", RepresentationWarning)
    rate = rate_hz if rate_hz is not None else float(extra.get("rate_hz", 25.0))
    return MotionSequence(skeleton, frames, rate, representation, extra.get("action"))


def load_coords_csv(path, skeleton_path=None, rate_hz=None):
    return _load_motion_csv(path, "coords3d", skeleton_path, rate_hz)


def load_expmap_csv(path, skeleton_path=None, rate_hz=None):
    return _load_motion_csv(path, "expmap", skeleton_path, rate_hz)


def load_motion_csv(path, skeleton_path=None, rate_hz=None):
    """Load a motion CSV using the representation recorded in its descriptor."""
    _, extra = load_skeleton(skeleton_path or sidecar_path(path))
    rep = extra.get("representation", "coords3d")
    return _load_motion_csv(path, rep, skeleton_path, rate_hz)
