"""Experiment harnesses: window sweep, ablation grid, data-size sweep.

Each harness retrains the model from scratch at every grid point, repeats
the run under a small set of seeds, and reports the field-wise median of
the validation metrics. Repeat r runs under seed ^ r for every grid
point, so the comparisons across points are paired.
"""

import csv
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import split_dataset, window_dataset
from .errors import TrainingError, ValidationError
from .training import Metrics, evaluate, train

STUDY_KINDS = ("window_sweep", "ablation", "data_size_sweep")

# (label, use_pi_loss, use_pi_input); labels are the conventional names
# for the four framework configurations
ABLATION_GRID = (
    ("ML Only", False, False),
    ("PI input", False, True),
    ("PI loss", True, False),
    ("PI input + PI loss", True, True),
)

REPORT_COLUMNS = ("label", "mse", "mae", "mape")


@dataclass(frozen=True)
class StudyRow:
    label: str
    metrics: Metrics
    seconds: float


@dataclass(frozen=True)
class StudyReport:
    kind: str
    rows: tuple
    histories: tuple  # (label, run seed, per-epoch EpochStats tuple) per run

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValidationError("kind", f"unknown study kind {self.kind!r}")
        if not self.rows:
            raise ValidationError("rows", "report needs at least one row")


def _median_metrics(per_seed):
    arr = np.asarray([(m.mse, m.mae, m.mape) for m in per_seed])
    med = np.median(arr, axis=0)
    return Metrics(mse=float(med[0]), mae=float(med[1]), mape=float(med[2]))


def _int_grid(name, values):
    out = sorted(set(int(v) for v in values))
    if not out:
        raise ValidationError(name, "grid is empty")
    if out[0] < 1:
        raise ValidationError(name, f"grid values must be >= 1, got {out[0]}")
    return out


def run_study(kind, frames, fluxes, model_config, train_config, material,
              grid, mode, windows=(1, 2, 3, 4, 5, 6), sizes=(200, 800, 1600),
              n_seeds=3, states=None):
    """Train one model per grid point and seed, return a StudyReport.

    window_sweep retrains across window lengths, ablation runs the four
    physics-flag configurations, data_size_sweep truncates the training
    split to each requested sample count while keeping the validation
    split fixed.
    """
    if kind not in STUDY_KINDS:
        raise ValidationError("kind", f"unknown study kind {kind!r}")
    if not isinstance(n_seeds, (int, np.integer)) or n_seeds < 1:
        raise ValidationError("n_seeds", f"need a positive count, got {n_seeds!r}")

    if kind == "window_sweep":
        points = [(f"w={w}", replace(model_config, window=w), None)
                  for w in _int_grid("windows", windows)]
    elif kind == "ablation":
        points = [(label, model_config, flags)
                  for label, *flags in ABLATION_GRID]
    else:
        points = [(f"n={s}", model_config, s)
                  for s in _int_grid("sizes", sizes)]

    rows = []
    histories = []
    for label, cfg_run, extra in points:
        samples = window_dataset(frames, fluxes, cfg_run.window,
                                 cfg_run.horizon, states=states)
        train_part, val_part = split_dataset(samples, train_config.split)
        if kind == "data_size_sweep":
            if extra > len(train_part):
                raise ValidationError(
                    "sizes", f"grid point {label}: only {len(train_part)} "
                    "training samples available")
            train_part = train_part[:extra]
        if not val_part:
            raise ValidationError(
                "dataset", f"grid point {label}: no validation samples")

        start = time.perf_counter()
        per_seed = []
        for r in range(n_seeds):
            tc_run = replace(train_config, seed=train_config.seed ^ r)
            if kind == "ablation":
                tc_run = replace(tc_run, use_pi_loss=extra[0],
                                 use_pi_input=extra[1])
            try:
                ckpt, hist = train(train_part + val_part, cfg_run, tc_run,
                                   material, grid, mode,
                                   n_train=len(train_part))
                per_seed.append(evaluate(ckpt, val_part,
                                         use_pi_input=tc_run.use_pi_input))
            except ValidationError as exc:
                raise ValidationError(
                    "study", f"grid point {label!r} (seed {tc_run.seed}): {exc}"
                ) from exc
            except TrainingError as exc:
                raise TrainingError(
                    f"study grid point {label!r} (seed {tc_run.seed}): {exc}"
                ) from exc
            histories.append((label, tc_run.seed, tuple(hist)))
        rows.append(StudyRow(label=label, metrics=_median_metrics(per_seed),
                             seconds=time.perf_counter() - start))
    return StudyReport(kind=kind, rows=tuple(rows), histories=tuple(histories))


def format_report(report):
    """Human-readable table, wall-clock column included."""
    header = ("label", "mse", "mae", "mape", "seconds")
    cells = [[r.label, f"{r.metrics.mse:.6g}", f"{r.metrics.mae:.6g}",
              f"{r.metrics.mape:.6g}", f"{r.seconds:.3f}"] for r in report.rows]
    widths = [max(len(h), *(len(row[j]) for row in cells))
              for j, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_report(report, text_path, csv_path):
    """Table with timings for reading, timing-free CSV for plotting.

    Wall clock is never reproducible, so it stays out of the CSV; the CSV
    is the artifact covered by the reproducibility contract.
    """
    with open(text_path, "w") as fh:
        fh.write(f"study: {report.kind}\n")
        fh.write(format_report(report))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            writer.writerow([row.label, repr(row.metrics.mse),
                             repr(row.metrics.mae), repr(row.metrics.mape)])


def read_report_csv(path):
    """Rows of (label, mse, mae, mape) from a report CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(REPORT_COLUMNS):
            raise ValidationError("report", f"unexpected header {header!r}")
        return [(label, float(mse), float(mae), float(mape))
                for label, mse, mae, mape in reader]
