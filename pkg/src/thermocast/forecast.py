"""Multi-step forecasting.

Rolling prediction feeds each prediction back as the newest window frame
and walks forward one step at a time with a horizon-1 model; direct
prediction jumps straight to t+i with a model trained for that offset.
Future flux fields come from the deposition plan, which is a program
input, so rolling always uses the true flux for the step it predicts.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .data import split_dataset, window_dataset
from .errors import ValidationError
from .model import forward, from_named_arrays, leaf_params, named_arrays
from .physics import FluxField
from .training import Metrics, TrainConfig, evaluate, frame_metrics, train


@dataclass(frozen=True)
class HorizonCurve:
    mode: str
    points: tuple  # (horizon step, Metrics) pairs, steps strictly increasing

    def __post_init__(self):
        if self.mode not in ("rolling", "direct"):
            raise ValidationError("mode", f"unknown curve mode {self.mode!r}")
        steps = [s for s, _ in self.points]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValidationError("points", f"horizon steps not increasing: {steps}")


def _flux_values(f):
    return f.values if isinstance(f, FluxField) else np.asarray(f, dtype=np.float64)


def _one_shot_forward(checkpoint, window, flux_values):
    """Forward pass on a throwaway tape, returning the raw field.

    The tape is reset before returning: prediction never needs gradients,
    and the graph would otherwise sit in cyclic garbage until collected.
    """
    tape = ad.Tape()
    params = leaf_params(tape, checkpoint.params)
    pred = forward(params, checkpoint.config, window, flux_values).data
    tape.reset()
    return pred


def rolling_predict(checkpoint, seed_window, flux_sequence, steps, below_sequence=None):
    """Predict `steps` consecutive frames, feeding each prediction back.

    seed_window: the window.config most recent true frames (values only).
    flux_sequence: flux for each predicted timestamp, at least `steps` long.
    For two-channel models the predicted channel is fed back while the
    second channel continues from below_sequence (ground truth).
    """
    cfg = checkpoint.config
    if cfg.horizon != 1:
        raise ValidationError(
            "horizon", f"rolling prediction needs a horizon-1 model, got {cfg.horizon}")
    if steps < 0:
        raise ValidationError("steps", f"must be >= 0, got {steps}")
    if len(flux_sequence) < steps:
        raise ValidationError(
            "flux_sequence", f"{len(flux_sequence)} flux fields for {steps} steps")
    window = [np.asarray(f, dtype=np.float64) for f in seed_window]
    if cfg.input_channels == 2:
        if below_sequence is None or len(below_sequence) < steps:
            raise ValidationError(
                "below_sequence", "two-channel rolling needs the layer-below frames")
    elif cfg.input_channels != 1:
        raise ValidationError(
            "input_channels", f"rolling supports 1 or 2 channels, got {cfg.input_channels}")
    out = []
    for s in range(steps):
        pred = _one_shot_forward(checkpoint, window, _flux_values(flux_sequence[s]))
        out.append(pred)
        if cfg.input_channels == 2:
            below = np.asarray(below_sequence[s], dtype=np.float64)
            newest = np.stack([pred, below])
        else:
            newest = pred if window[0].ndim == 2 else pred[None]
        window = window[1:] + [newest]
    return out


def direct_predict(checkpoint, window, flux_at_target):
    """Single forward pass to the checkpoint's trained horizon."""
    return _one_shot_forward(checkpoint, window, _flux_values(flux_at_target))


def _rolling_metrics(checkpoint, frames, fluxes, horizon, split):
    """Roll from every validation window start and score step `horizon`."""
    cfg = checkpoint.config
    values = [f.values for f in frames]
    samples = window_dataset(frames, fluxes, cfg.window, 1)
    _, val = split_dataset(samples, split)
    if not val:
        raise ValidationError("dataset", "no validation samples for rolling")
    per_sample = []
    for smp in val:
        t_in = smp.indices[cfg.window - 1]
        if t_in + horizon >= len(frames):
            continue
        preds = rolling_predict(
            checkpoint, list(smp.inputs),
            [fluxes[t_in + 1 + k] for k in range(horizon)], horizon)
        per_sample.append(frame_metrics(preds[-1], values[t_in + horizon]))
    if not per_sample:
        raise ValidationError("horizon", f"no window reaches horizon {horizon}")
    arr = np.asarray(per_sample)
    return Metrics(mse=float(arr[:, 0].mean()), mae=float(arr[:, 1].mean()),
                   mape=float(arr[:, 2].mean()))


def horizon_study(frames, fluxes, horizons, model_config, train_config,
                  material, grid, mode):
    """Error-vs-horizon curves: one rolling model walked out to each
    horizon, plus one directly-trained model per horizon.

    Returns (rolling HorizonCurve, direct HorizonCurve).
    """
    horizons = sorted(set(int(h) for h in horizons))
    if not horizons or horizons[0] < 1:
        raise ValidationError("horizons", f"need positive horizons, got {horizons}")
    base = window_dataset(frames, fluxes, model_config.window, 1)
    if model_config.horizon != 1:
        raise ValidationError("horizon", "model_config.horizon must be 1; "
                              "direct models derive their own horizon")
    ckpt_roll, _ = train(base, model_config, train_config, material, grid, mode)
    rolling_points = []
    for h in horizons:
        try:
            rolling_points.append((h, _rolling_metrics(
                ckpt_roll, frames, fluxes, h, train_config.split)))
        except ValidationError as exc:
            raise ValidationError("horizons", f"rolling at horizon {h}: {exc}") from exc

    direct_points = []
    for k, h in enumerate(horizons):
        cfg_h = replace(model_config, horizon=h)
        # xor-derived seeds keep the runs independent; index 0 keeps the base
        # seed so a lone horizon of 1 reproduces the rolling model exactly
        tc_h = replace(train_config, seed=train_config.seed ^ k)
        try:
            ds_h = window_dataset(frames, fluxes, cfg_h.window, h)
            ckpt_h, _ = train(ds_h, cfg_h, tc_h, material, grid, mode)
            _, val_h = split_dataset(ds_h, train_config.split)
            direct_points.append((h, evaluate(ckpt_h, val_h,
                                              use_pi_input=tc_h.use_pi_input)))
        except ValidationError as exc:
            raise ValidationError("horizons", f"direct at horizon {h}: {exc}") from exc
    return (HorizonCurve("rolling", tuple(rolling_points)),
            HorizonCurve("direct", tuple(direct_points)))
