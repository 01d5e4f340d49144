"""Command-line front end.

Subcommands: pattern, oracle, train, predict, compare, sweep, selftest.
Every option can also come from a `key = value` config file (--config);
explicit flags beat the file, the file beats built-in defaults, and
unknown keys are rejected. Each run echoes its merged configuration once
before doing anything. Exit codes: 0 success, 1 operational failure,
2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .fileio import load_png, save_png, save_rgb_png, write_jsonl
from .oracle import OracleRules, build_dataset, simulate
from .patterns import (FrameConfig, TopographySpec, load_raster_png,
                       load_specs_jsonl, machined_fraction, rasterize,
                       save_raster_png, save_specs_jsonl)
from .stats import compare
from .sweep import SweepConfig, model_predictor, oracle_predictor, sweep_alignment
from .trainer import (TrainConfig, load_checkpoint, load_training_set,
                      save_checkpoint, train)
from .wnet import generate


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


_KIND_FLAGS = {
    "--lines": "parallel_lines",
    "--crossed": "crossed_lines",
    "--circles": "concentric_circles",
    "--filled": "filled_circles",
    "--curves": "curves",
    "--glyphs": "glyphs",
    "--border": "border_box",
    "--blank": "blank",
}

_SPEC_DEFAULTS = {
    "kind": None, "spec": None, "text": "TOPO",
    "width_um": 25.0, "sep_um": 90.0, "angle_deg": 0.0,
    "resolution": 256, "box_um": 500.0,
}

DEFAULTS = {
    "pattern": {**_SPEC_DEFAULTS, "mode": "binary", "out": None, "spec_out": None},
    "oracle": {**_SPEC_DEFAULTS, "day": 8, "density": 0.3, "seed": 0,
               "out_image": None, "out_cells": None,
               "dataset": 0, "out_dir": None},
    "train": {"data": None, "epochs": 25, "lr": 0.0005, "seed": 0, "out": None},
    "predict": {**_SPEC_DEFAULTS, "checkpoint": None, "topo": None,
                "day": 8, "density": 0.3, "seed": 0, "out": None},
    "compare": {"pred": None, "exp": None, "sections": 16, "tau": 0.25,
                "granularity": "sections", "out_composite": None,
                "out_json": None},
    "sweep": {"checkpoint": None, "use_oracle": False, "resolution": 256,
              "widths": "7.5,10,12,25", "seps": "4,6,8,10,12,14,16,20,24,28",
              "day": 8, "density": 0.3, "reps": 3, "threshold": 0.6,
              "seed": 0, "out_json": None},
    "selftest": {},
}


def _add_spec_flags(sub):
    kinds = sub.add_mutually_exclusive_group()
    for flag, const in _KIND_FLAGS.items():
        kinds.add_argument(flag, dest="kind", action="store_const", const=const,
                           default=argparse.SUPPRESS,
                           help=f"topography kind {const}")
    sub.add_argument("--spec", default=argparse.SUPPRESS,
                     help="spec JSONL file (first record wins; overrides kind flags)")
    sub.add_argument("--text", default=argparse.SUPPRESS, help="glyph text")
    sub.add_argument("--width-um", dest="width_um", type=float, default=argparse.SUPPRESS)
    sub.add_argument("--sep-um", dest="sep_um", type=float, default=argparse.SUPPRESS)
    sub.add_argument("--angle-deg", dest="angle_deg", type=float, default=argparse.SUPPRESS)
    sub.add_argument("--resolution", type=int, default=argparse.SUPPRESS)
    sub.add_argument("--box-um", dest="box_um", type=float, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topocell",
                                description="stem cell response prediction on "
                                            "machined topographies")
    p.add_argument("--version", action="version", version=f"topocell {__version__}")
    subs = p.add_subparsers(dest="_command", required=True)

    def new(name, help_text):
        sub = subs.add_parser(name, help=help_text)
        sub.add_argument("--config", default=argparse.SUPPRESS,
                         help="key = value file merged under explicit flags")
        sub.set_defaults(_command=name)
        return sub

    sp = new("pattern", "rasterize a topography to PNG")
    _add_spec_flags(sp)
    sp.add_argument("--mode", choices=("binary", "antialiased"), default=argparse.SUPPRESS)
    sp.add_argument("--out", default=argparse.SUPPRESS, help="output PNG")
    sp.add_argument("--spec-out", dest="spec_out", default=argparse.SUPPRESS,
                    help="also save the spec as JSONL")

    so = new("oracle", "simulate ground-truth cell responses")
    _add_spec_flags(so)
    so.add_argument("--day", type=int, default=argparse.SUPPRESS)
    so.add_argument("--density", type=float, default=argparse.SUPPRESS)
    so.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    so.add_argument("--out-image", dest="out_image", default=argparse.SUPPRESS)
    so.add_argument("--out-cells", dest="out_cells", default=argparse.SUPPRESS)
    so.add_argument("--dataset", type=int, default=argparse.SUPPRESS,
                    help="instead of one run, write this many training pairs")
    so.add_argument("--out-dir", dest="out_dir", default=argparse.SUPPRESS)

    st = new("train", "train the predictor on a simulated corpus")
    st.add_argument("--data", default=argparse.SUPPRESS, help="dataset directory")
    st.add_argument("--epochs", type=int, default=argparse.SUPPRESS)
    st.add_argument("--lr", type=float, default=argparse.SUPPRESS)
    st.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    st.add_argument("--out", default=argparse.SUPPRESS, help="checkpoint path")

    sr = new("predict", "run a trained model on one condition")
    _add_spec_flags(sr)
    sr.add_argument("--checkpoint", default=argparse.SUPPRESS)
    sr.add_argument("--topo", default=argparse.SUPPRESS,
                    help="topography PNG (instead of kind flags)")
    sr.add_argument("--day", type=int, default=argparse.SUPPRESS)
    sr.add_argument("--density", type=float, default=argparse.SUPPRESS)
    sr.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sr.add_argument("--out", default=argparse.SUPPRESS, help="output PNG")

    sc = new("compare", "overlap statistics between two response images")
    sc.add_argument("--pred", default=argparse.SUPPRESS, help="predicted PNG")
    sc.add_argument("--exp", default=argparse.SUPPRESS, help="observed PNG")
    sc.add_argument("--sections", type=int, default=argparse.SUPPRESS)
    sc.add_argument("--tau", type=float, default=argparse.SUPPRESS)
    sc.add_argument("--granularity", choices=("sections", "pixels"),
                    default=argparse.SUPPRESS)
    sc.add_argument("--out-composite", dest="out_composite", default=argparse.SUPPRESS)
    sc.add_argument("--out-json", dest="out_json", default=argparse.SUPPRESS)

    sw = new("sweep", "recover the minimum guiding separation")
    sw.add_argument("--checkpoint", default=argparse.SUPPRESS)
    sw.add_argument("--use-oracle", dest="use_oracle", action="store_true",
                    default=argparse.SUPPRESS, help="sweep the simulator directly")
    sw.add_argument("--resolution", type=int, default=argparse.SUPPRESS)
    sw.add_argument("--widths", default=argparse.SUPPRESS, help="comma list, um")
    sw.add_argument("--seps", default=argparse.SUPPRESS, help="comma list, um")
    sw.add_argument("--day", type=int, default=argparse.SUPPRESS)
    sw.add_argument("--density", type=float, default=argparse.SUPPRESS)
    sw.add_argument("--reps", type=int, default=argparse.SUPPRESS)
    sw.add_argument("--threshold", type=float, default=argparse.SUPPRESS)
    sw.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sw.add_argument("--out-json", dest="out_json", default=argparse.SUPPRESS)

    new("selftest", "quick internal consistency checks")
    return p


# ---------------------------------------------------------------------------
# config handling


def _parse_config_file(path) -> dict:
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from e
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
        key, _, value = text.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _coerce(key, value, default):
    if default is None or value is None:
        return value
    want = type(default)
    if want is bool:
        if isinstance(value, bool):
            return value
        raise UsageError(f"config key {key!r} expects true/false, got {value!r}")
    if want in (int, float, str):
        try:
            return want(value)
        except (TypeError, ValueError) as e:
            raise UsageError(f"config key {key!r}: {e}") from e
    return value


def merge_options(command: str, explicit: dict, config_path=None) -> dict:
    defaults = DEFAULTS[command]
    merged = dict(defaults)
    if config_path:
        file_values = _parse_config_file(config_path)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        for k, v in file_values.items():
            merged[k] = _coerce(k, v, defaults[k])
    merged.update(explicit)
    return merged


def _echo(command: str, opts: dict) -> None:
    print(f"run config [{command}]: {json.dumps(opts, sort_keys=True, default=str)}")


def _require(opts, *keys):
    missing = [k for k in keys if not opts.get(k)]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _floats(csv_text) -> tuple:
    try:
        return tuple(float(tok) for tok in str(csv_text).split(",") if tok.strip())
    except ValueError as e:
        raise UsageError(f"bad number list {csv_text!r}: {e}") from e


def _frame(opts) -> FrameConfig:
    try:
        return FrameConfig(resolution=opts["resolution"], box_side_um=opts["box_um"])
    except ValueError as e:
        raise UsageError(str(e)) from e


def _spec_from_options(opts) -> TopographySpec:
    if opts.get("spec"):
        specs = load_specs_jsonl(opts["spec"])
        if not specs:
            raise UsageError(f"no specs in {opts['spec']}")
        return specs[0]
    if not opts.get("kind"):
        raise UsageError("choose a topography: one of "
                         + ", ".join(sorted(_KIND_FLAGS)) + ", or --spec FILE")
    params = {}
    if opts["kind"] == "glyphs":
        params["text"] = opts["text"]
    try:
        return TopographySpec(opts["kind"], opts["width_um"], opts["sep_um"],
                              opts["angle_deg"], params)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _rasterize(spec, frame, mode="binary"):
    # a stroke the frame cannot resolve is a configuration mistake, not a crash
    try:
        return rasterize(spec, frame, mode=mode)
    except ValueError as e:
        raise UsageError(str(e)) from e


# ---------------------------------------------------------------------------
# commands


def cmd_pattern(opts) -> int:
    _require(opts, "out")
    frame = _frame(opts)
    spec = _spec_from_options(opts)
    raster = _rasterize(spec, frame, mode=opts["mode"])
    save_raster_png(raster, opts["out"])
    if opts.get("spec_out"):
        save_specs_jsonl([spec], opts["spec_out"])
    print(f"wrote {opts['out']} ({frame.resolution} px, "
          f"machined fraction {machined_fraction(raster):.4f})")
    return 0


def cmd_oracle(opts) -> int:
    frame = _frame(opts)
    if opts["dataset"]:
        _require(opts, "out_dir")
        records = build_dataset(opts["out_dir"], int(opts["dataset"]),
                                frame=frame, seed=opts["seed"])
        print(f"wrote {len(records)} training pairs to {opts['out_dir']}")
        return 0
    if not (opts.get("out_image") or opts.get("out_cells")):
        raise UsageError("need --out-image and/or --out-cells (or --dataset N --out-dir D)")
    spec = _spec_from_options(opts)
    raster = _rasterize(spec, frame)
    cells = simulate(raster, opts["day"], opts["density"], seed=opts["seed"])
    if opts.get("out_cells"):
        cells.to_csv(opts["out_cells"])
    if opts.get("out_image"):
        save_png(opts["out_image"], cells.render(frame))
    print(f"simulated {len(cells)} cells (day {opts['day']}, density {opts['density']})")
    return 0


def cmd_train(opts) -> int:
    _require(opts, "data", "out")
    examples = load_training_set(opts["data"])
    cfg = TrainConfig(epochs=opts["epochs"], lr=opts["lr"], seed=opts["seed"],
                      checkpoint_path=opts["out"])
    print(f"training on {len(examples)} images "
          f"({examples[0].topography.shape[0]} px) for {cfg.epochs} epochs")

    def progress(stats):
        print(f"  epoch {stats['epoch'] + 1:3d}/{cfg.epochs}  "
              f"rec {stats['rec']:.4f}  adv {stats['adv']:.3f}  "
              f"disc {stats['disc']:.3f}  lambda {stats['lambda_adv']:.2f}")

    result = train(examples, cfg, callback=progress)
    save_checkpoint(opts["out"], result, epoch=cfg.epochs - 1,
                    iteration=cfg.epochs * len(examples))
    print(f"wrote checkpoint {opts['out']}")
    return 0


def cmd_predict(opts) -> int:
    _require(opts, "checkpoint", "out")
    result, header = load_checkpoint(opts["checkpoint"])
    gen = result.generator
    res = header["net"]["resolution"]
    if opts.get("topo"):
        raster = load_raster_png(opts["topo"])
        if raster.frame.resolution != res:
            raise UsageError(f"topography is {raster.frame.resolution} px "
                             f"but the model expects {res}")
    else:
        frame = FrameConfig(resolution=res, box_side_um=opts["box_um"])
        raster = _rasterize(_spec_from_options(opts), frame)
    pred = generate(gen, raster, opts["day"], opts["density"], seed=opts["seed"])
    save_png(opts["out"], pred.data[0])
    print(f"wrote {opts['out']} (mean intensity {float(pred.data.mean()):.4f})")
    return 0


def cmd_compare(opts) -> int:
    _require(opts, "pred", "exp")
    pred = load_png(opts["pred"])
    exp = load_png(opts["exp"])
    res = compare(pred, exp, sections=opts["sections"], tau=opts["tau"],
                  granularity=opts["granularity"])
    t = res.test
    if opts.get("out_composite"):
        save_rgb_png(opts["out_composite"], res.composite)
    if opts.get("out_json"):
        payload = {"p_value": t.p_value, "method": t.method,
                   "n_total": t.n_total, "n_pred": t.n_a, "n_exp": t.n_b,
                   "n_overlap": t.n_overlap}
        write_jsonl(opts["out_json"], [payload])
    print(f"overlap {t.n_overlap} of {t.n_a}x{t.n_b} occupied "
          f"(N={t.n_total}), P = {t.p_value:.3e} [{t.method}]")
    return 0


def cmd_sweep(opts) -> int:
    if opts.get("checkpoint"):
        result, header = load_checkpoint(opts["checkpoint"])
        frame = FrameConfig(resolution=header["net"]["resolution"])
        predict = model_predictor(result.generator, frame=frame)
    elif opts.get("use_oracle"):
        frame = FrameConfig(resolution=opts["resolution"])
        predict = oracle_predictor(frame=frame)
    else:
        raise UsageError("need --checkpoint PATH or --use-oracle")
    cfg = SweepConfig(widths_um=_floats(opts["widths"]),
                      separations_um=_floats(opts["seps"]),
                      day=opts["day"], density=opts["density"],
                      n_reps=opts["reps"], aligned_threshold=opts["threshold"],
                      seed=opts["seed"])
    res = sweep_alignment(predict, cfg, frame=frame)
    for row in res.rows:
        print(f"  w {row['width_um']:5.1f}  sep {row['separation_um']:5.1f}  "
              f"fraction {row['fraction']:.3f}  ({row['n_valid']} valid)")
    for w, c in res.crossings.items():
        print(f"width {w} um: crossing at "
              + (f"{c} um" if c is not None else "none found"))
    print(f"recovered minimum separation: {res.recovered_separation_um:.2f} um")
    if res.fit:
        print(f"crossing vs width: slope {res.fit[0]:.4f}, intercept {res.fit[1]:.2f}")
    if opts.get("out_json"):
        write_jsonl(opts["out_json"], [{
            "rows": res.rows,
            "crossings": {str(k): v for k, v in res.crossings.items()},
            "recovered_separation_um": res.recovered_separation_um,
            "fit": list(res.fit) if res.fit else None,
        }])
    return 0


def cmd_selftest(opts) -> int:
    from .grid import Grid, conv2d, conv2d_transpose
    from .stats import hypergeom_tail
    from .patterns import snapped_line_px

    checks = []
    rng = np.random.default_rng(0)
    x = Grid(rng.normal(size=(2, 8, 8)))
    y = Grid(rng.normal(size=(3, 4, 4)))
    w = Grid(rng.normal(size=(3, 2, 4, 4)))
    lhs = float((conv2d(x, w).data * y.data).sum())
    rhs = float((x.data * conv2d_transpose(y, w).data).sum())
    checks.append(("conv adjoint identity", abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))))
    checks.append(("hypergeometric tail", abs(hypergeom_tail(3, 10, 5, 5) - 0.5) < 1e-15))
    checks.append(("line raster geometry", snapped_line_px(25.0, 90.0, 500.0 / 256) == (13, 59)))
    a = simulate(rasterize(TopographySpec("parallel_lines", 25.0, 90.0, 0.0)), 8, 0.2, seed=1)
    b = simulate(rasterize(TopographySpec("parallel_lines", 25.0, 90.0, 0.0)), 8, 0.2, seed=1)
    checks.append(("simulator determinism", len(a) == len(b) and bool((a.x_um == b.x_um).all())))
    ok = True
    for name, passed in checks:
        print(f"  {'PASS' if passed else 'FAIL'}  {name}")
        ok &= passed
    return 0 if ok else 1


_COMMANDS = {
    "pattern": cmd_pattern, "oracle": cmd_oracle, "train": cmd_train,
    "predict": cmd_predict, "compare": cmd_compare, "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    explicit = {k: v for k, v in vars(ns).items() if not k.startswith("_")}
    command = ns._command
    config_path = explicit.pop("config", None)
    try:
        opts = merge_options(command, explicit, config_path)
        _echo(command, opts)
        return _COMMANDS[command](opts)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # operational failure
        print(f"error: {e}", file=sys.stderr)
        return 1
