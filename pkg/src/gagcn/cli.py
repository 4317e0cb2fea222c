"""Command-line entry point: ``gagcn <command> [options]``.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error, 3 I/O error.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, gradcheck
from .config import apply_overrides, from_dict, load_config, to_dict
from .exceptions import (CheckpointError, ConfigurationError, DimensionError, DivergenceError,
                         NumericError, ParseError)
from .motiondata import (SYNTH_CLASSES, MotionSequence, WindowSet, downsample, load_motion_csv,
                         make_windows, save_motion_csv, synth_dataset, synth_generate)
from .decoder import GagcnModel
from .trainer import (SUITES, data_scale, evaluate_horizons, run_ablation, to_frame_layout,
                      to_model_layout, train, zero_velocity)

log = logging.getLogger("gagcn")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --- output helpers ---------------------------------------------------------------------------


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    """UTF-8, LF endings, header row, shortest round-trip float text."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def summary_line(**items):
    return " ".join(f"{k}={_fmt(v)}" for k, v in items.items())


def _outdir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --- data -------------------------------------------------------------------------------------


def check_data_paths(cfg):
    if cfg.data.source == "csv":
        for p in cfg.data.paths:
            if not Path(p).is_file():
                raise ConfigurationError(f"[data] paths: file not found: {p}")


def load_sequences(cfg, seed_offset=0, per_class=None):
    d = cfg.data
    if d.source == "synthetic":
        return synth_dataset(d.classes, per_class or d.sequences_per_class, d.duration_frames,
                             d.noise_scale, d.seed + seed_offset, rate_hz=d.rate_hz)
    seqs = []
    for p in d.paths:
        seq = load_motion_csv(p)
        if seq.rate_hz != d.rate_hz:
            seq = downsample(seq, d.rate_hz)
        seqs.append(seq)
    return seqs


def windows_from(seqs, frames_in, frames_out, stride):
    parts = [make_windows(s, frames_in, frames_out, stride) for s in seqs]
    parts = [p for p in parts if len(p)]
    if not parts:
        raise ConfigurationError(
            f"no sequence is long enough for a {frames_in}+{frames_out} frame window")
    return WindowSet.concatenate(parts)


# --- commands ---------------------------------------------------------------------------------


def _config(args, overrides):
    cfg = load_config(args.config) if getattr(args, "config", None) else from_dict({})
    return apply_overrides(cfg, overrides)


def cmd_train(args):
    cfg = _config(args, {
        "output.dir": args.output, "train.epochs": args.epochs, "train.batch_size": args.batch_size,
        "train.learning_rate": args.learning_rate, "train.lr_decay": args.lr_decay, "train.seed": args.seed,
        "train.max_steps": args.max_steps, "train.precision": args.precision, "model.n": args.n,
        "model.m": args.m, "model.width": args.width, "model.depth": args.depth})
    check_data_paths(cfg)
    d = cfg.data
    windows = windows_from(load_sequences(cfg), d.frames_in, d.frames_out, d.window_stride)
    validation = None
    if d.source == "synthetic" and d.validation_sequences_per_class:
        validation = windows_from(load_sequences(cfg, 10_000, d.validation_sequences_per_class),
                                  d.frames_in, d.frames_out, d.window_stride)
    joints, channels = windows.inputs.shape[2], windows.inputs.shape[3]
    model = GagcnModel(cfg.model_config(joints, channels, scale=data_scale(windows)))
    out = _outdir(cfg.output_dir)
    log.info("training on %d windows (%d joints, %d channels)", len(windows), joints, channels)
    try:
        result = train(model, windows, cfg.train, validation, gate_logging=True)
    except DivergenceError:
        checkpoint.save_model(out / "model.ckpt", model, run=cfg.raw, status="diverged")
        raise

    checkpoint.save_model(out / "model.ckpt", model, run=cfg.raw, windows=len(windows))
    has_val = validation is not None
    header = ["epoch", "train_loss", "lr"] + (["val_loss"] if has_val else [])
    write_csv(out / "loss.csv", header,
              [[h["epoch"], h["train_loss"], h["lr"]] + ([h["val_loss"]] if has_val else [])
               for h in result.history])
    # Wide rows: the spatial and temporal banks differ in size, so shorter rows leave trailing cells empty.
    q = max((len(ws) for *_, ws in result.gate_log), default=0)
    write_csv(out / "gates.csv", ["step", "layer", "axis"] + [f"w{i + 1}" for i in range(q)],
              [[step, layer, axis] + [float(w) for w in ws] + [""] * (q - len(ws))
               for step, layer, axis, ws in result.gate_log])
    with open(out / "train_log.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for h in result.history:
            fh.write(json.dumps({"event": "epoch", "loss_kind": cfg.train.loss_kind, **h}, sort_keys=True) + "\n")
    final = result.history[-1]["train_loss"] if result.history else float("nan")
    print(summary_line(command="train", windows=len(windows), epochs=len(result.history),
                       steps=len(result.steps), final_train_loss=final, output=out))
    return EXIT_OK


def _eval_windows(cfg, args, model_cfg):
    if args.data:
        seqs = []
        for p in args.data:
            if not Path(p).is_file():
                raise ConfigurationError(f"--data: file not found: {p}")
            seqs.append(load_motion_csv(p))
    else:
        check_data_paths(cfg)
        seqs = load_sequences(cfg, seed_offset=10_000)
    return windows_from(seqs, model_cfg.frames_in, model_cfg.frames_out, cfg.data.window_stride)


def cmd_eval(args):
    cfg = _config(args, {"output.dir": args.output, "eval.horizons": args.horizons,
                         "eval.metrics": args.metrics, "eval.mode": args.mode})
    model, _ = checkpoint.load_model(args.checkpoint)
    mc = model.config
    windows = _eval_windows(cfg, args, mc)
    shape = windows.inputs.shape[1:]
    if (shape[1], shape[2]) != (mc.joints, mc.channels):
        raise DimensionError(f"data windows (T, N, C) = {tuple(shape)} do not match checkpoint "
                             f"(T, N, C) = {(mc.frames_in, mc.joints, mc.channels)}")
    predictor = model
    if args.predictor == "zero_velocity":
        predictor = lambda x: zero_velocity(x, mc.frames_out)  # noqa: E731
    rows = []
    for metric in cfg.eval.metrics:
        rep = evaluate_horizons(predictor, windows, cfg.data.rate_hz, cfg.eval.horizons, metric,
                                cfg.eval.mode, threads=args.threads)
        rows += rep.rows()
    out = _outdir(cfg.output_dir)
    write_csv(out / "horizons.csv", ["horizon_ms", "metric", "value"], rows)
    print(summary_line(command="eval", windows=len(windows), predictor=args.predictor,
                       **{f"{m}_{h}ms": v for h, m, v in rows}))
    return EXIT_OK


def cmd_predict(args):
    model, _ = checkpoint.load_model(args.checkpoint)
    mc = model.config
    if not Path(args.input).is_file():
        raise ConfigurationError(f"--input: file not found: {args.input}")
    seq = load_motion_csv(args.input)
    frames = seq.frames
    if frames.shape[1:] != (mc.joints, mc.channels):
        raise DimensionError(f"input frames (N, C) = {frames.shape[1:]} do not match checkpoint "
                             f"(N, C) = {(mc.joints, mc.channels)}")
    if len(frames) < mc.frames_in:
        raise UsageError(f"input has {len(frames)} frames; the model needs at least {mc.frames_in}")
    window = frames[-mc.frames_in:][None]
    pred = to_frame_layout(model.predict(to_model_layout(window).astype(model.dtype)))[0]
    out_seq = MotionSequence(seq.skeleton, pred.astype(np.float64), seq.rate_hz, seq.representation,
                             seq.action_label)
    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_motion_csv(out_path, out_seq)
    print(summary_line(command="predict", frames=len(pred), output=out_path))
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck.run(args.scale, args.seed, args.corrupt)
    failed = [r for r in results if not r.passed]
    width = max(len(r.name) for r in results)
    print(f"{'parameter'.ljust(width)}  {'entries':>7}  {'max_rel_err':>12}  status")
    for r in results:
        print(f"{r.name.ljust(width)}  {r.size:>7}  {r.max_rel_err:12.3e}  {'ok' if r.passed else 'FAIL'}")
    if args.output:
        out = _outdir(args.output)
        write_csv(out / "gradcheck.csv", ["parameter", "entries", "max_rel_err", "passed"],
                  [[r.name, r.size, r.max_rel_err, r.passed] for r in results])
    print(summary_line(command="gradcheck", scale=args.scale, groups=len(results), failed=len(failed),
                       max_rel_err=max(r.max_rel_err for r in results)))
    if failed:
        print("failing parameters: " + ", ".join(r.name for r in failed), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config(args, {"output.dir": args.output, "ablation.held_out": args.held_out, "suite": args.suite,
                         "ablation.seeds": list(range(args.seeds)) if args.seeds is not None else None})
    if cfg.data.source != "synthetic":
        raise ConfigurationError("[data] source: ablations run on the synthetic suite only")
    ab = cfg.ablation
    report = run_ablation(cfg.suite, ab, progress=lambda msg: log.info("%s", msg), threads=args.threads)
    out = _outdir(cfg.output_dir)
    means = report.mean_rows()
    horizons = sorted({k[4] for k in means})
    groups = sorted({k[:4] for k in means}, key=lambda g: (g[3], g[0], g[1], g[2]))
    write_csv(out / "ablation.csv", ["arm", "n", "m", "motion"] + [f"{h}ms" for h in horizons],
              [list(g) + [means[g + (h,)] for h in horizons] for g in groups])
    write_csv(out / "ablation_seeds.csv", ["arm", "n", "m", "motion", "held_out", "seed", "horizon_ms", "value"],
              [[r["arm"], r["n"], r["m"], r["motion"], r["held_out"], r["seed"], r["horizon_ms"], r["value"]]
               for r in report.rows])
    if report.gate_separation:
        write_csv(out / "gate_separation.csv", ["held_out", "seed", "class_a", "class_b", "l1"],
                  [[held, seed, a, b, v] for (held, seed), sep in sorted(report.gate_separation.items())
                   for (a, b), v in sorted(sep.items())])
    line = summary_line(**report.summary)
    (out / "summary.txt").write_text(line + "\n", encoding="utf-8")
    print(line)
    return EXIT_OK


def _read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_plot_data(args):
    run = Path(args.run)
    if not run.is_dir():
        raise ConfigurationError(f"--run: directory not found: {run}")
    out = _outdir(args.output or run)
    written = []
    if (run / "train_log.jsonl").is_file():
        rows = []
        for line in (run / "train_log.jsonl").read_text(encoding="utf-8").splitlines():
            rec = json.loads(line)
            for series in ("train_loss", "val_loss"):
                if series in rec:
                    rows.append([rec["epoch"], series, rec[series]])
        write_csv(out / "loss_curve.csv", ["epoch", "series", "value"], rows)
        written.append("loss_curve.csv")
    if (run / "gates.csv").is_file():
        gates = _read_csv(run / "gates.csv")
        if gates:
            last = max(int(g["step"]) for g in gates)
            rows = [[g["layer"], g["axis"], k[1:], float(v)] for g in gates if int(g["step"]) == last
                    for k, v in g.items() if k.startswith("w") and v != ""]
            write_csv(out / "gate_distribution.csv", ["layer", "axis", "index", "weight"], rows)
            written.append("gate_distribution.csv")
    if (run / "horizons.csv").is_file():
        rows = sorted(([r["metric"], int(r["horizon_ms"]), float(r["value"])] for r in _read_csv(run / "horizons.csv")))
        write_csv(out / "horizon_curve.csv", ["metric", "horizon_ms", "value"], rows)
        written.append("horizon_curve.csv")
    if (run / "ablation_seeds.csv").is_file():
        rows = _read_csv(run / "ablation_seeds.csv")
        acc = {}
        for r in rows:
            key = (f"{r['arm']}_n{r['n']}m{r['m']}_{r['motion']}", int(r["horizon_ms"]))
            acc.setdefault(key, []).append(float(r["value"]))
        write_csv(out / "ablation_curve.csv", ["series", "horizon_ms", "mean", "std"],
                  [[k[0], k[1], float(np.mean(v)), float(np.std(v))] for k, v in sorted(acc.items())])
        written.append("ablation_curve.csv")
    if args.motion:
        seq = load_motion_csv(args.motion)
        names = seq.skeleton.joint_names
        write_csv(out / "trajectory.csv", ["frame", "joint"] + [f"c{c}" for c in range(seq.frames.shape[2])],
                  [[f, names[j]] + list(seq.frames[f, j]) for f in range(len(seq.frames))
                   for j in range(len(names))])
        written.append("trajectory.csv")
    if not written:
        raise FileNotFoundError(f"{run} holds no train, eval or ablation outputs to convert")
    print(summary_line(command="plot-data", files=",".join(written), output=out))
    return EXIT_OK


def cmd_synth(args):
    rng_seed = args.seed
    seq = synth_generate(args.kind, args.frames, args.noise, rng_seed)
    out = _outdir(args.output)
    path = out / f"{args.kind}_{rng_seed}.csv"
    save_motion_csv(path, seq)
    print(summary_line(command="synth", kind=args.kind, frames=args.frames, output=path))
    return EXIT_OK


# --- parser -----------------------------------------------------------------------------------


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Flags that override a config field show the built-in config default instead of None."""

    def _get_help_string(self, action):
        if action.required:
            return f"{action.help} (required)"
        if action.default is None and "config default" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


_DEFAULTS = to_dict(from_dict({}))


def _ov(section, key, text=""):
    value = _DEFAULTS[section][key] if section != "suite" else _DEFAULTS["suite"]
    if isinstance(value, list):
        value = " ".join(map(str, value))
    label = f"[{section}] {key}" if section != "suite" else "the config suite"
    return f"{text}overrides {label} (config default: {value})"


def build_parser():
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="gagcn", formatter_class=fmt,
                                     description="Gating-adjacency GCN motion prediction toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def cmd(name, helptext):
        return sub.add_parser(name, help=helptext, description=helptext, formatter_class=fmt)

    p = cmd("train", "train a model and write model.ckpt, loss.csv, gates.csv and train_log.jsonl")
    p.add_argument("--config", help="TOML run config; built-in defaults when omitted")
    p.add_argument("--output", help=_ov("output", "dir", "output directory; "))
    p.add_argument("--epochs", type=int, help=_ov("train", "epochs"))
    p.add_argument("--batch-size", type=int, help=_ov("train", "batch_size"))
    p.add_argument("--learning-rate", type=float, help=_ov("train", "learning_rate"))
    p.add_argument("--lr-decay", type=float, help=_ov("train", "lr_decay"))
    p.add_argument("--seed", type=int, help=_ov("train", "seed"))
    p.add_argument("--max-steps", type=int, help="caps optimiser steps, overrides [train] max_steps (config default: unlimited)")
    p.add_argument("--precision", choices=["binary32", "binary64"], help=_ov("train", "precision"))
    p.add_argument("--n", type=int, help=_ov("model", "n", "spatial candidates; "))
    p.add_argument("--m", type=int, help=_ov("model", "m", "temporal candidates; "))
    p.add_argument("--width", type=int, help=_ov("model", "width"))
    p.add_argument("--depth", type=int, help=_ov("model", "depth"))
    p.set_defaults(func=cmd_train)

    p = cmd("eval", "evaluate a checkpoint at each horizon and write horizons.csv")
    p.add_argument("--checkpoint", required=True, help="model.ckpt written by train")
    p.add_argument("--config", help="TOML run config supplying [data], [eval] and [output]")
    p.add_argument("--data", nargs="+", help="motion CSV files to evaluate instead of the config's data")
    p.add_argument("--horizons", type=int, nargs="+", default=None,
                   help=_ov("eval", "horizons", "horizons in ms; "))
    p.add_argument("--metrics", nargs="+", choices=["mpjpe", "mae"], help=_ov("eval", "metrics"))
    p.add_argument("--mode", choices=["cumulative", "at_horizon"], help=_ov("eval", "mode"))
    p.add_argument("--predictor", choices=["model", "zero_velocity"], default="model",
                   help="score the checkpoint or the repeat-last-pose baseline")
    p.add_argument("--output", help=_ov("output", "dir", "output directory; "))
    p.add_argument("--threads", type=int, default=1, help="parallel evaluation threads")
    p.set_defaults(func=cmd_eval)

    p = cmd("predict", "predict future frames for the last observed window of a motion CSV")
    p.add_argument("--checkpoint", required=True, help="model.ckpt written by train")
    p.add_argument("--input", required=True, help="motion CSV with at least frames_in frames")
    p.add_argument("--output", required=True, help="motion CSV to write (a skeleton sidecar is written next to it)")
    p.set_defaults(func=cmd_predict)

    p = cmd("gradcheck", "compare reverse-mode gradients with central differences")
    p.add_argument("--scale", choices=list(gradcheck.SCALES), default="model", help="what to check")
    p.add_argument("--seed", type=int, default=0, help="seed for toy parameters and inputs")
    p.add_argument("--corrupt", metavar="PARAM", default=None,
                   help="negative control: inject a wrong gradient into PARAM")
    p.add_argument("--output", default=None, help="directory for gradcheck.csv (table is always printed)")
    p.set_defaults(func=cmd_gradcheck)

    p = cmd("ablate", "run matched ablation arms on the synthetic suite")
    p.add_argument("--config", help="TOML run config with an [ablation] table")
    p.add_argument("--suite", choices=list(SUITES), default=None,
                   help=_ov("suite", "suite", "ablation suite; "))
    p.add_argument("--held-out", choices=["all"] + list(SYNTH_CLASSES), default=None,
                   help=_ov("ablation", "held_out", "class withheld from training, or all to rotate; "))
    p.add_argument("--seeds", type=int, default=None, help=_ov("ablation", "seeds", "use seeds 0..K-1; "))
    p.add_argument("--output", help=_ov("output", "dir", "output directory; "))
    p.add_argument("--threads", type=int, default=1, help="parallel evaluation threads")
    p.set_defaults(func=cmd_ablate)

    p = cmd("plot-data", "turn run outputs into plot-ready CSV series")
    p.add_argument("--run", required=True, help="directory written by train, eval or ablate")
    p.add_argument("--motion", default=None, help="also emit per-joint trajectories of this motion CSV")
    p.add_argument("--output", default=None, help="output directory (defaults to --run)")
    p.set_defaults(func=cmd_plot_data)

    p = cmd("synth", "write one synthetic motion sequence as CSV plus skeleton sidecar")
    p.add_argument("--kind", choices=list(SYNTH_CLASSES), default="walk_cycle", help="motion class")
    p.add_argument("--frames", type=int, default=120, help="sequence length at 25 Hz")
    p.add_argument("--noise", type=float, default=0.0, help="noise scale (1.0 = 10 mm joint jitter)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigurationError, DimensionError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, ParseError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, DivergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
