"""Temperature frames and their on-disk CSV layout.

A simulation run directory holds one file per recorded step:

    frame_000000.csv   temperatures, degC, one row per grid row
    state_000000.csv   integer cell codes, same shape
    flux_000000.csv    absorbed laser flux, W/m^2 (written when a laser is present)

State codes are bit flags: bit 0 = cell active, bit 1 = cell was (re)activated
by deposition during the step that produced this frame, bit 2 = cell received
laser flux through its exposed face during that step.

Values use repr-exact formatting so a write/read round trip reproduces the
arrays to within 1e-12 (in fact bit-exactly).
"""

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

FRAME_NAME = "frame_{:06d}.csv"
STATE_NAME = "state_{:06d}.csv"
FLUX_NAME = "flux_{:06d}.csv"

STATE_ACTIVE = 1
STATE_DEPOSITED = 2
STATE_FLUXED = 4


@dataclass
class ThermalFrame:
    t: int                    # step index the frame belongs to
    values: np.ndarray        # (rows, cols) float64, degC
    active_mask: np.ndarray   # (rows, cols) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.active_mask = np.asarray(self.active_mask, dtype=bool)
        if self.values.ndim != 2:
            raise ValidationError("values", f"expected 2-D field, got shape {self.values.shape}")
        if self.active_mask.shape != self.values.shape:
            raise ValidationError(
                "active_mask", f"shape {self.active_mask.shape} does not match values {self.values.shape}")

    def validate(self, t_ambient):
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("values", f"non-finite temperatures at step {self.t}")
        if np.any(self.values < -273.15):
            raise ValidationError("values", f"temperature below absolute zero at step {self.t}")
        off = self.values[~self.active_mask]
        if off.size and np.any(off != t_ambient):
            raise ValidationError("values", f"inactive cells deviate from ambient at step {self.t}")

    def copy(self):
        return ThermalFrame(self.t, self.values.copy(), self.active_mask.copy())


def write_array_csv(path, values):
    values = np.asarray(values, dtype=np.float64)
    buf = io.StringIO()
    np.savetxt(buf, values, fmt="%.17g", delimiter=",")
    Path(path).write_text(buf.getvalue())


def read_array_csv(path):
    arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return arr


def write_state_csv(path, codes):
    codes = np.asarray(codes, dtype=np.int64)
    buf = io.StringIO()
    np.savetxt(buf, codes, fmt="%d", delimiter=",")
    Path(path).write_text(buf.getvalue())


def read_state_csv(path):
    return np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)


def frame_indices(run_dir):
    """Sorted recorded step indices found in a run directory."""
    pat = re.compile(r"frame_(\d{6})\.csv$")
    out = []
    for p in Path(run_dir).iterdir():
        m = pat.match(p.name)
        if m:
            out.append(int(m.group(1)))
    return sorted(out)


def block_mean(values, factor):
    """Downsample a 2-D field by averaging factor x factor blocks."""
    values = np.asarray(values, dtype=np.float64)
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValidationError("downsample", f"factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return values.copy()
    m, n = values.shape
    if m % factor or n % factor:
        raise ValidationError(
            "downsample", f"factor {factor} does not divide frame shape ({m}, {n})")
    return values.reshape(m // factor, factor, n // factor, factor).mean(axis=(1, 3))


def ingest_dir(frames_dir, downsample=1):
    """Temperature frames from a directory of CSV files.

    frame_NNNNNN.csv files are preferred when present (a simulator run
    directory, whose state_/flux_ companions must not be mistaken for
    frames); otherwise every *.csv is taken, in lexicographic filename
    order. Returns (arrays, filenames).
    """
    d = Path(frames_dir)
    if not d.is_dir():
        raise ValidationError("frames_dir", f"not a directory: {d}")
    files = sorted(p.name for p in d.glob("frame_*.csv"))
    if not files:
        files = sorted(p.name for p in d.glob("*.csv"))
    if not files:
        raise ValidationError("frames_dir", f"no frames found in {d}")
    arrays = []
    for name in files:
        arr = read_array_csv(d / name)
        if arrays and arr.shape != arrays[0].shape:
            raise ValidationError(
                "frames_dir", f"{name} has shape {arr.shape}, expected {arrays[0].shape}")
        arrays.append(arr)
    if downsample != 1:
        arrays = [block_mean(a, downsample) for a in arrays]
    return arrays, files


def load_run(run_dir):
    """Read every recorded frame of a run, in step order.

    Returns (frames, fluxes, states). fluxes entries are None when no flux
    file was written for that step; states likewise.
    """
    run_dir = Path(run_dir)
    idx = frame_indices(run_dir)
    if not idx:
        raise ValidationError("run_dir", f"no frames found in {run_dir}")
    frames, fluxes, states = [], [], []
    for i in idx:
        values = read_array_csv(run_dir / FRAME_NAME.format(i))
        spath = run_dir / STATE_NAME.format(i)
        code = read_state_csv(spath) if spath.exists() else None
        mask = (code & STATE_ACTIVE).astype(bool) if code is not None else np.ones(values.shape, dtype=bool)
        frames.append(ThermalFrame(i, values, mask))
        fpath = run_dir / FLUX_NAME.format(i)
        fluxes.append(read_array_csv(fpath) if fpath.exists() else None)
        states.append(code)
    return frames, fluxes, states
