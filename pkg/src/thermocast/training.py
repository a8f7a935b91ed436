"""Minibatch Adam training of the forecaster and evaluation metrics.

The loss couples the data term with conduction, boundary, and initial
residuals (physics terms computed on the same minibatch). Loss weights are
either given explicitly or balanced once against the first batch and
frozen, so per-epoch histories stay comparable. Two ablation switches
mirror the reference protocol: use_pi_loss drops the physics gradients
entirely, use_pi_input feeds the network a zero flux channel.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import VERSION, Checkpoint
from .data import split_dataset
from .errors import TrainingError, ValidationError
from .model import forward, from_named_arrays, init_params, named_arrays
from .optim import adam_step, init_adam_state
from .physics import LossWeights, composite_loss

HISTORY_COLUMNS = ("epoch", "l_data", "l_pde", "l_bc", "l_ic", "l_total")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 8
    seed: int = 0
    weights: object = None  # LossWeights, or None to balance on the first batch
    use_pi_loss: bool = True
    use_pi_input: bool = True
    split: float = 0.8

    def __post_init__(self):
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise ValidationError("lr", f"must be finite and >= 0, got {self.lr}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ValidationError("epochs", f"must be a positive integer, got {self.epochs}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ValidationError("batch_size", f"must be a positive integer, got {self.batch_size}")
        if not 0 < self.split < 1:
            raise ValidationError("split", f"need 0 < split < 1, got {self.split}")
        if self.weights is not None and not isinstance(self.weights, LossWeights):
            raise ValidationError("weights", "expected LossWeights or None")


@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float
    mape: float

    def __post_init__(self):
        if min(self.mse, self.mae, self.mape) < 0:
            raise ValidationError("metrics", "negative metric value")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    l_data: float
    l_pde: float
    l_bc: float
    l_ic: float
    l_total: float


def _stack_batch(samples, model_config):
    """Window position -> [B, C, m, n] arrays, plus the flux stack."""
    frames = []
    for s in range(model_config.window):
        layer = np.stack([np.asarray(smp.inputs[s]) for smp in samples])
        if layer.ndim == 3:
            layer = layer[:, None]
        frames.append(layer)
    flux = np.stack([smp.flux.values for smp in samples])
    return frames, flux


def _batch_loss(arrays, samples, model_config, material, grid, mode, weights,
                detach_physics, use_pi_input):
    """Build the loss graph for one minibatch on a fresh tape."""
    tape = ad.Tape()
    tensors = {name: tape.leaf(arr) for name, arr in arrays.items()}
    params = from_named_arrays(model_config, tensors)
    frames, flux = _stack_batch(samples, model_config)
    net_flux = np.zeros_like(flux) if not use_pi_input else flux
    preds_b = forward(params, model_config, frames, net_flux)
    m, n = samples[0].target.values.shape
    preds = [ad.reshape(ad.narrow(preds_b, 0, b, 1), (m, n))
             for b in range(len(samples))]
    out = composite_loss(
        preds, [s.target for s in samples], [s.prev for s in samples],
        [s.flux for s in samples], material, grid, weights, mode,
        exclude=[s.exclude for s in samples], detach_physics=detach_physics)
    return out, tensors


def _balance_weights(arrays, first_batch, model_config, material, grid, mode):
    """One throwaway pass; aux weights put every term on the data term's
    scale (structurally zero terms get weight zero).

    The probe always feeds the recorded flux: it measures the natural scale
    of each term, and the input toggle only shapes the trained forward. A
    fluxless probe sees an untrained model that is accidentally smooth and
    near-ambient, reads tiny boundary and ambient residuals, and hands those
    terms weights large enough to stall the data fit entirely."""
    probe, _ = _batch_loss(arrays, first_batch, model_config, material, grid,
                           mode, LossWeights(1.0, 1.0, 1.0, 1.0), True, True)
    probe.total.tape.reset()
    ratio = lambda term: probe.l_data / term if term > 0 else 0.0
    return LossWeights(w_p=ratio(probe.l_pde), w_i=ratio(probe.l_ic),
                       w_b=ratio(probe.l_bc), w_d=1.0)


def train(dataset, model_config, train_config, material, grid, mode,
          n_train=None):
    """Fit the model on the chronological training split of dataset.

    Returns (Checkpoint, per-epoch EpochStats list). The history records
    unweighted loss terms; l_total stays the weighted combination of them.
    Deterministic for a fixed TrainConfig. n_train overrides the split
    fraction with an explicit chronological cut, which the data-size
    sweep needs to vary the training set under a fixed validation set.
    """
    cfg = train_config
    if n_train is None:
        train_split, _ = split_dataset(dataset, cfg.split)
    else:
        if not isinstance(n_train, (int, np.integer)) or not 1 <= n_train <= len(dataset):
            raise ValidationError(
                "n_train", f"need 1 <= n_train <= {len(dataset)}, got {n_train!r}")
        train_split = list(dataset[:n_train])
    if not train_split:
        raise TrainingError("empty training split")
    for smp in train_split:
        if len(smp.inputs) != model_config.window:
            raise ValidationError(
                "dataset", f"sample has {len(smp.inputs)} input frames, "
                f"model expects {model_config.window}")

    arrays = {k: np.asarray(v, dtype=np.float64)
              for k, v in named_arrays(init_params(model_config, cfg.seed)).items()}
    if not cfg.use_pi_loss:
        weights = LossWeights(0.0, 0.0, 0.0, 1.0)
    elif cfg.weights is not None:
        weights = cfg.weights
    else:
        weights = _balance_weights(arrays, train_split[:cfg.batch_size],
                                   model_config, material, grid, mode)

    state = init_adam_state(arrays)
    rng = np.random.default_rng(cfg.seed)
    history = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_split))
        sums = np.zeros(5)
        n_batches = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_split[j] for j in order[lo:lo + cfg.batch_size]]
            out, tensors = _batch_loss(arrays, batch, model_config, material,
                                       grid, mode, weights,
                                       not cfg.use_pi_loss, cfg.use_pi_input)
            if not np.isfinite(out.l_total):
                raise TrainingError("loss diverged to a non-finite value",
                                    epoch=epoch, batch=n_batches)
            out.total.backward()
            grads = {name: t.grad for name, t in tensors.items()}
            # the graph is cyclic (tape <-> tensors), so drop it here instead
            # of leaving gigabytes of batch graphs to the garbage collector
            out.total.tape.reset()
            step += 1
            try:
                arrays = adam_step(arrays, grads, state, step, lr=cfg.lr)
            except TrainingError as exc:
                raise TrainingError(str(exc), epoch=epoch, batch=n_batches) from exc
            # sample-weighted so the epoch row is the plain per-sample mean,
            # independent of how the shuffle grouped the batches
            sums += len(batch) * np.array(
                [out.l_data, out.l_pde, out.l_bc, out.l_ic, out.l_total])
            n_batches += 1
        avg = sums / len(train_split)
        history.append(EpochStats(epoch, *avg))
    ckpt = Checkpoint(version=VERSION, config=model_config,
                      params=from_named_arrays(model_config, arrays),
                      seed=cfg.seed, epochs=cfg.epochs)
    return ckpt, history


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row.epoch] + [repr(getattr(row, c))
                                           for c in HISTORY_COLUMNS[1:]])


def frame_metrics(pred, target, mape_floor=0.5):
    """MSE, MAE, MAPE (percent) for one frame pair. Cells whose target
    magnitude sits under mape_floor are left out of the percentage (they
    would blow it up); if none survive, the percentage is undefined."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError("metrics", f"shape mismatch {pred.shape} vs {target.shape}")
    err = pred - target
    keep = np.abs(target) >= mape_floor
    if not keep.any():
        raise ValidationError("mape", "no target cell clears the magnitude floor")
    mape = 100.0 * float(np.mean(np.abs(err[keep]) / np.abs(target[keep])))
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err))), mape


def evaluate(checkpoint, dataset, use_pi_input=True, batch_size=32):
    """Per-sample metrics averaged over the dataset (prediction vs target)."""
    if not dataset:
        raise ValidationError("dataset", "empty dataset")
    cfg = checkpoint.config
    per_sample = []
    for lo in range(0, len(dataset), batch_size):
        batch = dataset[lo:lo + batch_size]
        tape = ad.Tape()
        params = from_named_arrays(
            cfg, {k: tape.leaf(np.asarray(v, dtype=np.float64))
                  for k, v in named_arrays(checkpoint.params).items()})
        frames, flux = _stack_batch(batch, cfg)
        if not use_pi_input:
            flux = np.zeros_like(flux)
        preds = forward(params, cfg, frames, flux)
        for b, smp in enumerate(batch):
            per_sample.append(frame_metrics(preds.data[b], smp.target.values))
        tape.reset()
    arr = np.asarray(per_sample)
    return Metrics(mse=float(arr[:, 0].mean()), mae=float(arr[:, 1].mean()),
                   mape=float(arr[:, 2].mean()))
