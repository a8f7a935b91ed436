"""Laser flux model, differentiable physics residuals, and the composite loss.

The PDE residual evaluates, per cell, the same finite-volume balance the
simulator solves (see stencil.py), as a tape expression in the predicted
frame. Constant coefficients come from the previous frame, so the residual
is linear in the prediction and a true simulator step is an exact root.
The laser flux term is deliberately not part of the residual (the governing
equation carries no interior source; the flux acts through the deposition
face). Cells whose face absorbed flux during a step are therefore excluded
from the PDE loss, as are cells whose activation state changed.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatchError, ValidationError
from .stencil import _OFFSETS, exposed_top_mask, stencil_parts

K0 = 273.15  # degC -> K offset


@dataclass(frozen=True)
class LaserSpec:
    power: float        # W
    efficiency: float   # absorbed fraction
    beam_radius: float  # m, 1/e^2 Gaussian radius

    def __post_init__(self):
        if self.power < 0:
            raise ValidationError("power", "must be non-negative")
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValidationError("efficiency", f"must be in [0, 1], got {self.efficiency}")
        if self.beam_radius <= 0:
            raise ValidationError("beam_radius", "must be positive")

    @property
    def peak_flux(self):
        return 2.0 * self.efficiency * self.power / (math.pi * self.beam_radius**2)


@dataclass(frozen=True)
class LaserState:
    position: tuple  # (x, y) metres in grid coordinates
    on: bool


@dataclass(frozen=True)
class FluxField:
    values: np.ndarray  # (rows, cols) W/m^2, >= 0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if np.any(self.values < 0.0):
            raise ValidationError("values", "flux magnitudes must be non-negative")


def gaussian_flux(spec, state, grid):
    """Absorbed-flux matrix q = (2 eta P / pi r^2) exp(-2 d^2 / r^2).

    d is the distance from each cell centre to the beam centre. The paper's
    leading minus (flux directed into the surface) is carried by the boundary
    sign convention instead; values here are magnitudes. Distances are formed
    in cell units before scaling so moving the beam by a whole cell shifts
    the matrix exactly. Values below 1e-12 of the peak are clamped to zero,
    which gives the flux finite support: "received flux" is then a meaningful
    per-cell predicate for state codes and loss masking.
    """
    if not state.on:
        return FluxField(np.zeros(grid.shape, dtype=np.float64))
    x, y = float(state.position[0]), float(state.position[1])
    rows = np.arange(grid.rows, dtype=np.float64) - y / grid.dx
    cols = np.arange(grid.cols, dtype=np.float64) - x / grid.dx
    d2 = (rows[:, None] ** 2 + cols[None, :] ** 2) * grid.dx**2
    q = spec.peak_flux * np.exp(-2.0 * d2 / spec.beam_radius**2)
    q[q < 1e-12 * spec.peak_flux] = 0.0
    return FluxField(q)


def _flux_values(flux, grid):
    if flux is None:
        return None
    v = flux.values if isinstance(flux, FluxField) else np.asarray(flux, dtype=np.float64)
    if v.shape != grid.shape:
        raise ShapeMismatchError("flux", v.shape, grid.shape)
    return v


def pde_residual(t_pred, prev_frame, material, grid, mode):
    """Residual matrix of the discrete heat balance, differentiable in t_pred.

    R = -rho*cp/dt*(T - T_prev) + k/dx^2 * sum_faces m_f*(T_nbr - T) + src,
    coefficients and src lagged at T_prev. src carries boundary convection
    and radiation through the same ghost handling as the simulator, plus the
    thin-wall through-thickness sink; it carries no laser flux. Rows of
    inactive cells are identically zero.
    """
    if not isinstance(t_pred, ad.Tensor):
        raise ValidationError("t_pred", "expected a tape Tensor")
    if t_pred.data.shape != prev_frame.values.shape:
        raise ShapeMismatchError("pde_residual", t_pred.data.shape, prev_frame.values.shape)
    parts = stencil_parts(prev_frame.values, prev_frame.active_mask, material, grid, mode)
    r = ad.mul(ad.sub(t_pred, prev_frame.values), -parts["ct"])
    for d, (dr, dc) in _OFFSETS.items():
        coef = parts["ck"] * parts["nb"][d]
        diff = ad.sub(ad.shift2d(t_pred, dr, dc), t_pred)
        r = ad.add(r, ad.mul(diff, coef))
    return ad.add(r, parts["src"])


def _kelvin4(t):
    return ad.power4(ad.add(t, K0))


def bc_residuals(t_pred, material, flux, grid):
    """Boundary-condition residual vectors along the grid edges.

    top (length n): k*(T_s - T_i)/dx - [h_c*(T-Ta) + sig*eps*(K^4-Ka^4) - q],
    one-sided normal derivative into row 1, absorbed flux sampled on row 0.
    lateral (length 2*(m-1) + (n-2)): same with h_conv and no flux, for the
    left and right columns (rows 1..m-1) and the bottom row (cols 1..n-2);
    each corner belongs to exactly one vector. Conductivity is evaluated at
    the surface temperature, so the residuals stay differentiable in t_pred.
    """
    if not isinstance(t_pred, ad.Tensor):
        raise ValidationError("t_pred", "expected a tape Tensor")
    m, n = grid.shape
    if t_pred.data.shape != (m, n):
        raise ShapeMismatchError("bc_residuals", t_pred.data.shape, (m, n))
    fv = _flux_values(flux, grid)
    ta = material.t_ambient
    # squared twice, same arithmetic as the tape's fourth power, so the
    # residual vanishes identically at ambient equilibrium
    ka4 = ((ta + K0) * (ta + K0)) * ((ta + K0) * (ta + K0))
    see = material.sigma_sb * material.emissivity

    def one_sided(surface, inner, h, q):
        k_s = ad.add(ad.scale(surface, material.k1), material.k0)
        cond = ad.scale(ad.mul(k_s, ad.sub(surface, inner)), 1.0 / grid.dx)
        out = ad.add(ad.scale(ad.sub(surface, ta), h),
                     ad.scale(ad.sub(_kelvin4(surface), ka4), see))
        r = ad.sub(cond, out)
        if q is not None:
            r = ad.add(r, q)
        return r

    top_s = ad.reshape(ad.narrow(t_pred, 0, 0, 1), (n,))
    top_i = ad.reshape(ad.narrow(t_pred, 0, 1, 1), (n,))
    q_top = fv[0, :] if fv is not None else None
    top = one_sided(top_s, top_i, material.h_c_top, q_top)

    body = ad.narrow(t_pred, 0, 1, m - 1)  # rows 1..m-1
    left_s = ad.reshape(ad.narrow(body, 1, 0, 1), (m - 1,))
    left_i = ad.reshape(ad.narrow(body, 1, 1, 1), (m - 1,))
    right_s = ad.reshape(ad.narrow(body, 1, n - 1, 1), (m - 1,))
    right_i = ad.reshape(ad.narrow(body, 1, n - 2, 1), (m - 1,))
    bot = ad.narrow(t_pred, 1, 1, n - 2)  # cols 1..n-2
    bot_s = ad.reshape(ad.narrow(bot, 0, m - 1, 1), (n - 2,))
    bot_i = ad.reshape(ad.narrow(bot, 0, m - 2, 1), (n - 2,))
    h = material.h_conv
    lateral = ad.concat([one_sided(left_s, left_i, h, None),
                         one_sided(right_s, right_i, h, None),
                         one_sided(bot_s, bot_i, h, None)], axis=0)
    return top, lateral


def ic_residual(t_pred_initial, t_init):
    """Elementwise deviation of the predicted initial state from the known one."""
    init = t_init.values if hasattr(t_init, "values") else t_init
    shp = init.data.shape if isinstance(init, ad.Tensor) else np.asarray(init).shape
    if t_pred_initial.data.shape != shp:
        raise ShapeMismatchError("ic_residual", t_pred_initial.data.shape, shp)
    return ad.sub(t_pred_initial, init)


@dataclass(frozen=True)
class LossWeights:
    w_p: float = 1.0
    w_i: float = 1.0
    w_b: float = 1.0
    w_d: float = 1.0

    def __post_init__(self):
        vals = (self.w_p, self.w_i, self.w_b, self.w_d)
        if any(w < 0 for w in vals):
            raise ValidationError("weights", "must be non-negative")
        if all(w == 0 for w in vals):
            raise ValidationError("weights", "at least one weight must be positive")


@dataclass
class LossBreakdown:
    l_pde: float
    l_ic: float
    l_bc: float
    l_data: float
    l_total: float
    total: object = None  # tape Tensor backing l_total, when built on a tape


def activation_exclusion(target_mask, prev_mask):
    """Cells whose PDE residual is structurally wrong because deposition
    changed the active set between the frames: the fresh cells and their
    4-neighbourhood (their face masks changed too)."""
    fresh = np.asarray(target_mask, dtype=bool) & ~np.asarray(prev_mask, dtype=bool)
    out = fresh.copy()
    out[1:, :] |= fresh[:-1, :]
    out[:-1, :] |= fresh[1:, :]
    out[:, 1:] |= fresh[:, :-1]
    out[:, :-1] |= fresh[:, 1:]
    return out


def composite_loss(preds, targets, prev_frames, flux_fields, material, grid,
                   weights, mode, exclude=None, detach_physics=False):
    """Weighted physics-informed loss over a batch of prediction samples.

    preds: tape Tensors (m, n), denormalized degC. targets/prev_frames:
    ThermalFrames. flux_fields: per-sample FluxField (or None) active during
    the step that produced the target; fluxed and freshly-activated cells are
    excluded from the PDE term. exclude: optional extra per-sample bool masks
    (True = drop from the PDE mean), e.g. re-melted cells from state codes.

    detach_physics evaluates the physics terms off-tape (reported in the
    breakdown but contributing constants to the total), so the gradient and
    the recorded op sequence match a purely data-driven loss.
    """
    n_s = len(preds)
    if not (len(targets) == len(prev_frames) == len(flux_fields) == n_s) or n_s == 0:
        raise ValidationError(
            "composite_loss",
            f"sequence lengths differ or empty: preds={n_s}, targets={len(targets)}, "
            f"prev={len(prev_frames)}, flux={len(flux_fields)}")
    if exclude is not None and len(exclude) != n_s:
        raise ValidationError("exclude", f"expected {n_s} masks, got {len(exclude)}")

    tape = preds[0].tape
    inv_n = 1.0 / n_s

    def physics_terms(work_preds):
        pde_t, bc_t, ic_t = None, None, None
        for s in range(n_s):
            p = work_preds[s]
            tgt, prev = targets[s], prev_frames[s]
            fv = _flux_values(flux_fields[s], grid)

            r = pde_residual(p, prev, material, grid, mode)
            keep = ~activation_exclusion(tgt.active_mask, prev.active_mask)
            if fv is not None:
                keep &= ~(exposed_top_mask(prev.active_mask, mode) & (fv > 0.0))
            if exclude is not None:
                keep &= ~np.asarray(exclude[s], dtype=bool)
            keep_act = keep & prev.active_mask
            cnt = max(1, int(np.count_nonzero(keep_act)))
            term = ad.scale(ad.reduce_sum(ad.mul(ad.square(r), keep_act.astype(np.float64))),
                            1.0 / cnt)
            pde_t = term if pde_t is None else ad.add(pde_t, term)

            top, lat = bc_residuals(p, material, flux_fields[s], grid)
            ss = ad.add(ad.reduce_sum(ad.square(top)), ad.reduce_sum(ad.square(lat)))
            term = ad.scale(ss, 1.0 / (top.size + lat.size))
            bc_t = term if bc_t is None else ad.add(bc_t, term)

            inact = ~tgt.active_mask
            cnt_i = int(np.count_nonzero(inact))
            if cnt_i:
                ri = ic_residual(p, np.full((grid.rows, grid.cols), material.t_ambient))
                term = ad.scale(ad.reduce_sum(ad.mul(ad.square(ri), inact.astype(np.float64))),
                                1.0 / cnt_i)
            else:
                term = ad.scale(ad.reduce_sum(ad.square(ad.sub(p, p))), 0.0)
            ic_t = term if ic_t is None else ad.add(ic_t, term)
        return ad.scale(pde_t, inv_n), ad.scale(bc_t, inv_n), ad.scale(ic_t, inv_n)

    data_t = None
    for s in range(n_s):
        term = ad.reduce_mean(ad.square(ad.sub(preds[s], targets[s].values)))
        data_t = term if data_t is None else ad.add(data_t, term)
    data_t = ad.scale(data_t, inv_n)

    if detach_physics:
        side = ad.Tape()
        twins = [side.leaf(p.data) for p in preds]
        pde_t, bc_t, ic_t = physics_terms(twins)
        l_pde, l_bc, l_ic = float(pde_t.data), float(bc_t.data), float(ic_t.data)
        side.reset()  # reporting only; free the cyclic side graph now
        total = ad.add(ad.scale(data_t, weights.w_d),
                       weights.w_p * l_pde + weights.w_b * l_bc + weights.w_i * l_ic)
    else:
        pde_t, bc_t, ic_t = physics_terms(preds)
        l_pde, l_bc, l_ic = float(pde_t.data), float(bc_t.data), float(ic_t.data)
        total = ad.add(ad.add(ad.scale(pde_t, weights.w_p), ad.scale(ic_t, weights.w_i)),
                       ad.add(ad.scale(bc_t, weights.w_b), ad.scale(data_t, weights.w_d)))
    return LossBreakdown(l_pde=l_pde, l_ic=l_ic, l_bc=l_bc, l_data=float(data_t.data),
                         l_total=float(total.data), total=total)
