"""Transient 2-D heat conduction with deposition activation and a moving laser.

One step advances the field so that the discrete balance assembled in
stencil.py holds exactly at the new time: coefficients and sources are lagged
at the previous frame, the conduction operator acts on the new frame, and the
resulting sparse linear system is solved directly (one iterative-refinement
pass keeps the solve residual at rounding level). The physics residual in
physics.py evaluates the same balance, which makes a simulator step an exact
root of it - the property the residual tests lean on.

The classical explicit stability bound is still enforced as a precondition:
data generated here must make sense for a residual formulated on consecutive
frames, and time steps beyond the FTCS bound would be too coarse for that
regardless of solver stability.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import CflViolationError, NonFiniteError, StepError, ValidationError
from .frames import (FLUX_NAME, FRAME_NAME, STATE_ACTIVE, STATE_DEPOSITED,
                     STATE_FLUXED, STATE_NAME, ThermalFrame, write_array_csv,
                     write_state_csv)
from .materials import check_cfl
from .physics import LaserState, gaussian_flux
from .stencil import exposed_top_mask, stencil_parts


def _solve_balance(parts, active, t_old, material, grid, dirichlet=None):
    """Solve ct*(T - T_old) = ck*conduction(T) + src for T.

    Inactive cells are pinned at ambient via identity rows; with dirichlet
    set, grid-edge cells are pinned at that value instead (analytic tests).
    """
    m, n = grid.shape
    N = m * n
    actf = active.astype(np.float64).ravel()
    ct = parts["ct"].ravel()
    ck = parts["ck"].ravel()
    nb = {d: (parts["ck"] * parts["nb"][d]).ravel() for d in ("N", "S", "W", "E")}

    pinned = ~active.ravel()
    pin_value = np.full(N, material.t_ambient)
    if dirichlet is not None:
        edge = np.zeros((m, n), dtype=bool)
        edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
        pinned = pinned | edge.ravel()
        pin_value = np.where(edge.ravel(), float(dirichlet), pin_value)

    keep = (~pinned).astype(np.float64)
    deg = nb["N"] + nb["S"] + nb["W"] + nb["E"]
    d0 = np.where(pinned, 1.0, ct + deg)
    dE = -(nb["E"] * keep)[:-1]
    dW = -(nb["W"] * keep)[1:]
    dS = -(nb["S"] * keep)[:-n]
    dN = -(nb["N"] * keep)[n:]
    A = sp.diags([d0, dE, dW, dS, dN], [0, 1, -1, n, -n], format="csc")
    b = np.where(pinned, pin_value, ct * t_old.ravel() + parts["src"].ravel())

    lu = splu(A)
    x = lu.solve(b)
    x += lu.solve(b - A @ x)
    return x.reshape(m, n)


def step_frame(frame, material, grid, mode, flux=None, dirichlet=None):
    """Advance one frame by grid.dt.

    flux: FluxField absorbed through exposed top faces during this step, or
    None. dirichlet pins the grid edge at a fixed temperature (used by the
    analytic verification cases) instead of the convection/radiation edges.
    """
    frame.validate(material.t_ambient)
    check_cfl(material, grid, (float(frame.values.min()), float(frame.values.max())))
    flux_values = None
    if flux is not None:
        flux_values = flux.values if hasattr(flux, "values") else np.asarray(flux, dtype=np.float64)

    parts = stencil_parts(frame.values, frame.active_mask, material, grid, mode,
                          flux_values=flux_values)
    if dirichlet is not None:
        # analytic configuration: pure interior conduction, pinned edge
        parts["src"][:] = 0.0
    new_values = _solve_balance(parts, frame.active_mask, frame.values, material, grid,
                                dirichlet=dirichlet)
    if not np.all(np.isfinite(new_values)):
        bad = np.argwhere(~np.isfinite(new_values))[0]
        raise NonFiniteError("step_frame", f"cell ({bad[0]}, {bad[1]}) after step {frame.t}")
    return ThermalFrame(frame.t + 1, new_values, frame.active_mask.copy())


@dataclass
class SimulationResult:
    grid: object
    material: object
    mode: str
    record_every: int
    path_kind: str
    frames: list = field(default_factory=list)      # ThermalFrame per recorded step
    fluxes: list = field(default_factory=list)      # (m,n) flux during the producing step
    states: list = field(default_factory=list)      # (m,n) int codes, see frames.py

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for fr, fx, st in zip(self.frames, self.fluxes, self.states):
            write_array_csv(out_dir / FRAME_NAME.format(fr.t), fr.values)
            write_state_csv(out_dir / STATE_NAME.format(fr.t), st)
            write_array_csv(out_dir / FLUX_NAME.format(fr.t), fx)
        return out_dir


def mode_for_path(kind):
    """Physics mode implied by a deposition pattern: the raster wall is a
    thin 2-D section losing heat through its faces, the layer patterns are
    horizontal slices of a solid."""
    return "thin_wall" if kind == "thin_wall_raster" else "interior_2d"


def simulate(material, grid, path, laser_spec=None, n_steps=None, record_every=1,
             mode=None, apply_flux=None):
    """Run a deposition scenario from an all-ambient, all-inactive start.

    Per step: deposit the path's cells at the process temperature, build the
    laser flux field, advance the frame, and record every record_every steps
    (the initial frame is always recorded). The flux stored with a frame is
    the one acting during the step that produced it; layer-mode scenarios
    record the flux as a model input without applying it in-plane, since
    their heat enters through activation (apply_flux defaults accordingly).
    """
    if n_steps is None:
        n_steps = path.n_steps
    if n_steps < 0:
        raise ValidationError("n_steps", "must be >= 0")
    if record_every < 1:
        raise ValidationError("record_every", "must be >= 1")
    if mode is None:
        mode = mode_for_path(path.kind)
    if apply_flux is None:
        apply_flux = path.kind == "thin_wall_raster"
    path.validate(grid)
    material.validate_range((material.t_ambient, path.process_temperature))

    m, n = grid.shape
    values = np.full((m, n), material.t_ambient)
    mask = np.zeros((m, n), dtype=bool)
    frame = ThermalFrame(0, values, mask)

    result = SimulationResult(grid, material, mode, record_every, path.kind)
    result.frames.append(frame.copy())
    result.fluxes.append(np.zeros((m, n)))
    result.states.append(np.zeros((m, n), dtype=np.int64))

    for s in range(n_steps):
        ev = path.event_at(s)
        deposited = np.zeros((m, n), dtype=bool)
        vals = frame.values.copy()
        msk = frame.active_mask.copy()
        for (r, c) in ev.activations:
            vals[r, c] = path.process_temperature
            msk[r, c] = True
            deposited[r, c] = True
        frame = ThermalFrame(frame.t, vals, msk)

        state = LaserState(position=ev.position, on=ev.laser_on)
        if laser_spec is not None:
            flux_field = gaussian_flux(laser_spec, state, grid)
        else:
            flux_field = None
        try:
            new_frame = step_frame(frame, material, grid, mode,
                                   flux=flux_field if apply_flux else None)
        except (ValidationError, NonFiniteError, CflViolationError) as e:
            raise StepError(str(e), step=s) from e
        frame = new_frame

        if (s + 1) % record_every == 0:
            codes = msk.astype(np.int64) * STATE_ACTIVE
            codes |= deposited.astype(np.int64) * STATE_DEPOSITED
            if flux_field is not None and apply_flux:
                fluxed = exposed_top_mask(msk, mode) & (flux_field.values > 0.0)
                codes |= fluxed.astype(np.int64) * STATE_FLUXED
            result.frames.append(frame.copy())
            result.fluxes.append(flux_field.values.copy() if flux_field is not None
                                 else np.zeros((m, n)))
            result.states.append(codes)
    return result
