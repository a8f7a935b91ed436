"""Windowing recorded frame sequences into supervised samples.

A sample pairs w consecutive input frames with the target frame i steps
past the window, the frame just before the target (the conduction residual
is defined against it), and the laser flux at the target time. Splits are
chronological: models never train on frames recorded after their
validation data.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ValidationError
from .frames import STATE_DEPOSITED, ThermalFrame
from .physics import FluxField


@dataclass(frozen=True)
class WindowedSample:
    """inputs are plain value arrays; target and prev keep their activity
    masks; exclude marks cells whose target values bypassed conduction
    (re-deposition into already-active cells)."""

    inputs: tuple
    target: ThermalFrame
    prev: ThermalFrame
    flux: FluxField
    indices: tuple
    exclude: object = None

    def __post_init__(self):
        shape = self.target.values.shape
        for arr in self.inputs:
            if arr.shape[-2:] != shape:
                raise ShapeMismatchError("sample inputs", arr.shape, shape)
        if self.prev.values.shape != shape or self.flux.values.shape != shape:
            raise ShapeMismatchError("sample frames", self.prev.values.shape, shape)
        idx = self.indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError("indices", f"not strictly increasing: {idx}")


def _values(frame):
    return frame.values if isinstance(frame, ThermalFrame) else np.asarray(frame, float)


def window_dataset(frames, flux_fields, w, i, states=None):
    """Slide a length-w window over the recording; one sample per placement.

    frames: recorded ThermalFrames (or arrays) in time order. flux_fields:
    matching flux per frame. states: optional per-frame cell-state codes;
    when given, cells re-deposited at the target step are marked for
    exclusion from conduction-residual training.
    Yields N - w - i + 1 samples for N frames.
    """
    if w < 1 or i < 1:
        raise ValidationError("window", f"need w >= 1 and i >= 1, got w={w}, i={i}")
    n = len(frames)
    if len(flux_fields) != n:
        raise ValidationError("flux_fields", f"{len(flux_fields)} fields for {n} frames")
    if states is not None and len(states) != n:
        raise ValidationError("states", f"{len(states)} state grids for {n} frames")
    if n < w + i:
        raise ValidationError("frames", f"need at least {w + i} frames, got {n}")
    samples = []
    for start in range(n - w - i + 1):
        t_in = start + w - 1
        t_target = t_in + i
        target = frames[t_target]
        prev = frames[t_target - 1]
        if not isinstance(target, ThermalFrame) or not isinstance(prev, ThermalFrame):
            raise ValidationError("frames", "target and prev frames need activity masks")
        flux = flux_fields[t_target]
        if not isinstance(flux, FluxField):
            flux = FluxField(np.asarray(flux, dtype=np.float64))
        exclude = None
        if states is not None:
            redeposited = (np.asarray(states[t_target]) & STATE_DEPOSITED).astype(bool)
            exclude = redeposited & prev.active_mask
        samples.append(WindowedSample(
            inputs=tuple(np.asarray(_values(frames[s]), dtype=np.float64)
                         for s in range(start, start + w)),
            target=target,
            prev=prev,
            flux=flux,
            indices=tuple(range(start, start + w)) + (t_target,),
            exclude=exclude,
        ))
    return samples


def split_dataset(samples, fraction):
    """Chronological split: the first fraction of samples trains, the rest
    validates."""
    if not 0 < fraction < 1:
        raise ValidationError("fraction", f"need 0 < fraction < 1, got {fraction}")
    if not samples:
        raise ValidationError("samples", "empty dataset")
    n_train = min(len(samples), max(1, int(round(len(samples) * fraction))))
    return list(samples[:n_train]), list(samples[n_train:])


def add_target_noise(samples, fraction, rng):
    """Corrupt target values with zero-mean Gaussian noise scaled to the
    given fraction of the dataset's dynamic range. Masks, inputs, and flux
    stay untouched; returns new samples."""
    if fraction < 0:
        raise ValidationError("fraction", f"noise fraction must be >= 0, got {fraction}")
    if not samples:
        return []
    lo = min(float(s.target.values.min()) for s in samples)
    hi = max(float(s.target.values.max()) for s in samples)
    sigma = fraction * (hi - lo)
    noisy = []
    for s in samples:
        values = s.target.values + rng.normal(0.0, sigma, s.target.values.shape)
        # inactive cells must stay at ambient for the frame to stay valid
        values[~s.target.active_mask] = s.target.values[~s.target.active_mask]
        target = ThermalFrame(s.target.t, values, s.target.active_mask.copy())
        noisy.append(WindowedSample(inputs=s.inputs, target=target, prev=s.prev,
                                    flux=s.flux, indices=s.indices, exclude=s.exclude))
    return noisy
