"""Command-line pipeline: simulate, ingest, train, predict, evaluate, study.

Every command reads its inputs, writes data files plus a manifest.json
into its output directory, and prints nothing but diagnostics to stderr.
Exit codes: 0 success, 1 configuration or validation problem, 2 runtime
or numeric failure.
"""

import argparse
import re
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import window_dataset
from .errors import (
    CflViolationError,
    CheckpointError,
    NonFiniteError,
    ScenarioError,
    ShapeMismatchError,
    StepError,
    TapeError,
    TrainingError,
    ValidationError,
)
from .forecast import direct_predict, horizon_study, rolling_predict
from .frames import FRAME_NAME, ThermalFrame, ingest_dir, load_run, write_array_csv
from .manifest import (
    MANIFEST_NAME,
    RunManifest,
    collect_artifacts,
    hash_file,
    hash_tree,
    write_manifest,
)
from .scenario import parse_scenario
from .simulator import mode_for_path, simulate
from .study import format_report, run_study, write_report
from .training import evaluate, train, write_history

PRED_NAME = "pred_{:06d}.csv"

_VALIDATION_ERRORS = (ValidationError, ScenarioError, ShapeMismatchError,
                      CheckpointError)
_RUNTIME_ERRORS = (TrainingError, CflViolationError, StepError,
                   NonFiniteError, TapeError, FloatingPointError)


def _say(msg):
    print(msg, file=sys.stderr)


def _ensure_out(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_bool(text):
    states = {"1": True, "yes": True, "true": True, "on": True,
              "0": False, "no": False, "false": False, "off": False}
    try:
        return states[text.strip().lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_int_list(text):
    try:
        values = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("list is empty")
    return values


def _slug(label):
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_").lower()


def _load_data(data_dir):
    """(frames, fluxes-or-None, states-or-None) from a data directory.

    Simulator run directories come back with their flux and state
    companions; plain CSV directories get all-active masks and no flux.
    """
    d = Path(data_dir)
    if d.is_dir() and any(d.glob("frame_*.csv")):
        frames, fluxes, states = load_run(d)
        if any(f is None for f in fluxes):
            fluxes = None
        if any(s is None for s in states):
            states = None
        return frames, fluxes, states
    arrays, _ = ingest_dir(d)
    frames = [ThermalFrame(i, a, np.ones(a.shape, dtype=bool))
              for i, a in enumerate(arrays)]
    return frames, None, None


def _flux_fields(frames, fluxes, need_real):
    """Per-frame flux arrays; zero fields when none were recorded."""
    if fluxes is not None:
        return fluxes
    if need_real:
        raise ValidationError(
            "data", "no flux fields in the data directory; pass "
            "use_pi_input=false or regenerate the data with a laser")
    return [np.zeros_like(f.values) for f in frames]


def _effective_grid(sc):
    # consecutive recorded frames are record_every solver steps apart, so
    # the residual between them lives on the coarser time grid
    if sc.record_every == 1:
        return sc.grid
    return replace(sc.grid, dt=sc.grid.dt * sc.record_every)


def _scenario_input(path):
    return {"scenario": {"path": str(path), "sha256": hash_file(path)}}


def _data_input(path):
    return {"data": {"path": str(path), "sha256": hash_tree(path)}}


def cmd_simulate(args):
    sc = parse_scenario(args.scenario)
    out = _ensure_out(args.out)
    path = sc.build_path()
    result = simulate(sc.material, sc.grid, path, sc.laser,
                      n_steps=path.n_steps + sc.extra_steps,
                      record_every=sc.record_every)
    result.save(out)
    manifest = RunManifest(command="simulate", config=sc.resolved,
                           inputs=_scenario_input(args.scenario),
                           artifacts=collect_artifacts(out),
                           defaulted=sc.defaulted)
    write_manifest(manifest, out)
    _say(f"simulate: wrote {len(result.frames)} frames to {out}")
    return 0


def cmd_ingest(args):
    manifest_out = Path(args.manifest_out)
    out = _ensure_out(manifest_out.parent)
    arrays, files = ingest_dir(args.frames_dir, downsample=args.downsample)
    if args.downsample != 1:
        for i, arr in enumerate(arrays):
            write_array_csv(out / FRAME_NAME.format(i), arr)
    config = {"downsample": args.downsample, "source_files": len(files),
              "frame_shape": list(arrays[0].shape)}
    manifest = RunManifest(
        command="ingest", config=config,
        inputs={"frames_dir": {"path": str(args.frames_dir),
                               "sha256": hash_tree(args.frames_dir)}},
        artifacts=collect_artifacts(out, exclude=(manifest_out.name,)))
    write_manifest(manifest, out, name=manifest_out.name)
    _say(f"ingest: {len(files)} frames of shape {arrays[0].shape}"
         + (f", downsampled x{args.downsample}" if args.downsample != 1 else ""))
    return 0


def _train_configs(sc, args):
    mc = sc.model_config
    if args.window is not None:
        mc = replace(mc, window=args.window)
    if args.horizon is not None:
        mc = replace(mc, horizon=args.horizon)
    tc = sc.train_config
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.use_pi_loss is not None:
        overrides["use_pi_loss"] = args.use_pi_loss
    if args.use_pi_input is not None:
        overrides["use_pi_input"] = args.use_pi_input
    if overrides:
        tc = replace(tc, **overrides)
    return mc, tc


def cmd_train(args):
    sc = parse_scenario(args.config)
    out = _ensure_out(args.out)
    mc, tc = _train_configs(sc, args)
    frames, fluxes, states = _load_data(args.data)
    flux_fields = _flux_fields(frames, fluxes, tc.use_pi_input)
    dataset = window_dataset(frames, flux_fields, mc.window, mc.horizon,
                             states=states)
    ckpt, history = train(dataset, mc, tc, sc.material, _effective_grid(sc),
                          mode_for_path(sc.path_kind))
    save_checkpoint(ckpt.params, mc, out / "model.ckpt", seed=ckpt.seed,
                    epochs=ckpt.epochs)
    write_history(out / "history.csv", history)
    manifest = RunManifest(
        command="train",
        config={"scenario": sc.resolved, "model": asdict(mc),
                "training": asdict(tc)},
        inputs={**_scenario_input(args.config), **_data_input(args.data)},
        artifacts=collect_artifacts(out), defaulted=sc.defaulted)
    write_manifest(manifest, out)
    _say(f"train: {len(dataset)} samples, {tc.epochs} epochs, "
         f"final l_total={history[-1].l_total:.6g}")
    return 0


def cmd_predict(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    out = _ensure_out(args.out)
    frames, fluxes, _ = _load_data(args.data)
    if args.use_pi_input:
        flux_fields = _flux_fields(frames, fluxes, True)
    else:
        # the prediction helpers take flux sequences directly, so turning
        # the physics input off means feeding them zero fields
        flux_fields = [np.zeros_like(f.values) for f in frames]
    values = [f.values for f in frames]
    w, h = cfg.window, cfg.horizon

    preds = {}
    if args.mode == "single":
        if len(frames) < w + h:
            raise ValidationError(
                "data", f"single prediction needs {w + h} frames, found {len(frames)}")
        t_target = len(frames) - 1
        window = values[t_target - h - w + 1:t_target - h + 1]
        preds[t_target] = direct_predict(ckpt, window, flux_fields[t_target])
    elif args.mode == "rolling":
        limit = len(frames) - w
        if limit < 1:
            raise ValidationError("data", f"rolling needs more than {w} frames")
        steps = limit if args.steps is None else args.steps
        if not 1 <= steps <= limit:
            raise ValidationError(
                "steps", f"recorded flux covers 1..{limit} steps, got {steps}")
        outputs = rolling_predict(ckpt, values[:w], flux_fields[w:w + steps],
                                  steps)
        preds = {w + k: arr for k, arr in enumerate(outputs)}
    else:
        count = len(frames) - w - h + 1
        if count < 1:
            raise ValidationError(
                "data", f"direct prediction needs at least {w + h} frames")
        if args.steps is not None:
            count = min(count, args.steps)
        for s in range(count):
            t = s + w - 1 + h
            preds[t] = direct_predict(ckpt, values[s:s + w], flux_fields[t])

    for t, arr in sorted(preds.items()):
        write_array_csv(out / PRED_NAME.format(t), arr)
    manifest = RunManifest(
        command="predict",
        config={"mode": args.mode, "steps": args.steps,
                "use_pi_input": args.use_pi_input, "model": asdict(cfg)},
        inputs={"checkpoint": {"path": str(args.checkpoint),
                               "sha256": hash_file(args.checkpoint)},
                **_data_input(args.data)},
        artifacts=collect_artifacts(out))
    write_manifest(manifest, out)
    _say(f"predict: wrote {len(preds)} frames to {out}")
    return 0


def cmd_evaluate(args):
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    out = _ensure_out(args.out)
    frames, fluxes, states = _load_data(args.data)
    flux_fields = _flux_fields(frames, fluxes, args.use_pi_input)
    dataset = window_dataset(frames, flux_fields, cfg.window, cfg.horizon,
                             states=states)
    metrics = evaluate(ckpt, dataset, use_pi_input=args.use_pi_input)
    with open(out / "metrics.csv", "w") as fh:
        fh.write("mse,mae,mape\n")
        fh.write(f"{metrics.mse!r},{metrics.mae!r},{metrics.mape!r}\n")
    manifest = RunManifest(
        command="evaluate",
        config={"use_pi_input": args.use_pi_input, "model": asdict(cfg)},
        inputs={"checkpoint": {"path": str(args.checkpoint),
                               "sha256": hash_file(args.checkpoint)},
                **_data_input(args.data)},
        artifacts=collect_artifacts(out))
    write_manifest(manifest, out)
    _say(f"evaluate: {len(dataset)} samples, mse={metrics.mse:.6g} "
         f"mae={metrics.mae:.6g} mape={metrics.mape:.6g}%")
    return 0


def _write_curve_csv(path, curve):
    with open(path, "w") as fh:
        fh.write("horizon,mse,mae,mape\n")
        for h, m in curve.points:
            fh.write(f"{h},{m.mse!r},{m.mae!r},{m.mape!r}\n")


def cmd_study(args):
    sc = parse_scenario(args.config)
    out = _ensure_out(args.out)
    frames, fluxes, states = _load_data(args.data)
    tc = sc.train_config
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    # studies exercise PI configurations, so real flux fields are required
    flux_fields = _flux_fields(frames, fluxes, True)
    grid_eff = _effective_grid(sc)
    mode = mode_for_path(sc.path_kind)

    if args.kind == "horizon":
        rolling, direct = horizon_study(frames, flux_fields, args.horizons,
                                        sc.model_config, tc, sc.material,
                                        grid_eff, mode)
        _write_curve_csv(out / "horizon_rolling.csv", rolling)
        _write_curve_csv(out / "horizon_direct.csv", direct)
        with open(out / "report.txt", "w") as fh:
            fh.write("study: horizon\n")
            for curve in (rolling, direct):
                fh.write(f"[{curve.mode}]\n")
                for h, m in curve.points:
                    fh.write(f"  h={h}: mse={m.mse:.6g} mae={m.mae:.6g} "
                             f"mape={m.mape:.6g}%\n")
        n_rows = len(rolling.points) + len(direct.points)
    else:
        kind = {"window": "window_sweep", "ablation": "ablation",
                "datasize": "data_size_sweep"}[args.kind]
        report = run_study(kind, frames, flux_fields, sc.model_config, tc,
                           sc.material, grid_eff, mode, windows=args.windows,
                           sizes=args.sizes, n_seeds=args.seeds, states=states)
        write_report(report, out / "report.txt", out / "report.csv")
        for label, seed, hist in report.histories:
            write_history(out / f"history_{_slug(label)}_s{seed}.csv", hist)
        _say(format_report(report).rstrip())
        n_rows = len(report.rows)

    manifest = RunManifest(
        command="study",
        config={"kind": args.kind, "seeds": args.seeds,
                "windows": list(args.windows), "sizes": list(args.sizes),
                "horizons": list(args.horizons), "scenario": sc.resolved},
        inputs={**_scenario_input(args.config), **_data_input(args.data)},
        artifacts=collect_artifacts(out, unhashed=("report.txt",)),
        defaulted=sc.defaulted)
    write_manifest(manifest, out)
    _say(f"study: {args.kind}, {n_rows} rows written to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="thermocast",
        description="Simulate layered-deposition temperature fields and "
                    "train physics-informed forecasting models on them.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and record frames")
    p.add_argument("--scenario", required=True, help="scenario INI file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="validate and describe a CSV frame directory")
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--manifest-out", required=True,
                   help="manifest file path; downsampled frames are written "
                        "next to it")
    p.add_argument("--downsample", type=int, default=1, metavar="N",
                   help="block-mean reduction factor (default 1)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit a model on recorded frames")
    p.add_argument("--data", required=True, help="frame directory")
    p.add_argument("--config", required=True, help="scenario INI file")
    p.add_argument("--out", required=True)
    p.add_argument("--use-pi-loss", type=_parse_bool, default=None, metavar="BOOL")
    p.add_argument("--use-pi-input", type=_parse_bool, default=None, metavar="BOOL")
    p.add_argument("--window", type=int, default=None, metavar="W")
    p.add_argument("--horizon", type=int, default=None, metavar="I")
    p.add_argument("--seed", type=int, default=None, metavar="S")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict frames with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", required=True, choices=("single", "rolling", "direct"))
    p.add_argument("--steps", type=int, default=None, metavar="N")
    p.add_argument("--use-pi-input", type=_parse_bool, default=True, metavar="BOOL")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a model on recorded frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--use-pi-input", type=_parse_bool, default=True, metavar="BOOL")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="run an experiment grid")
    p.add_argument("--kind", required=True,
                   choices=("window", "ablation", "datasize", "horizon"))
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=3, metavar="N",
                   help="seed repeats per grid point (default 3)")
    p.add_argument("--windows", type=_parse_int_list, default=(1, 2, 3, 4, 5, 6))
    p.add_argument("--sizes", type=_parse_int_list, default=(200, 800, 1600))
    p.add_argument("--horizons", type=_parse_int_list, default=(1, 2, 5, 10))
    p.add_argument("--seed", type=int, default=None, metavar="S")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as err:
        _say(f"error: {err}")
        return 1
    except _RUNTIME_ERRORS as err:
        _say(f"runtime error: {err}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
