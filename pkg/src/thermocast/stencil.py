"""Finite-volume coefficients shared by the time stepper and the residual.

Both the implicit solver and the physics residual evaluate the same balance
at every active cell,

    rho*cp/dt * (T_new - T_old)
        = k/dx^2 * sum_faces m_f * (T_new[nbr] - T_new)  +  src

where m_f masks faces whose neighbour is in-grid and active, and src collects
everything evaluated at the old temperatures: boundary convection and
radiation, absorbed laser flux, and (in thin-wall mode) through-thickness
losses. Coefficients rho, cp, k are evaluated at T_old as well, so one step
of the simulator is, by construction, an exact root of the residual.

Face rules:
  - inactive or out-of-grid neighbour, generic face: convection h_conv plus
    grey-body radiation to ambient (out-of-grid), or adiabatic (inactive
    neighbour, the cell borders not-yet-deposited powder/void);
  - the exposed top face (row 0 of the grid, or in thin-wall mode the upward
    face of the topmost active cell in each column): convection h_c_top plus
    radiation, plus the absorbed laser flux when a flux field is supplied;
  - thin-wall mode adds a volumetric sink h_conv/w*(T-Ta) plus radiative
    equivalent for the two out-of-plane faces of a wall of thickness w.

Radiation uses absolute temperatures, (T+273.15)^4 - (Ta+273.15)^4.
"""

import numpy as np

from .errors import ValidationError

MODES = ("interior_2d", "thin_wall")

_OFFSETS = {"N": (-1, 0), "S": (1, 0), "W": (0, -1), "E": (0, 1)}


def shift_array(a, dr, dc):
    """out[i, j] = a[i+dr, j+dc], zero where that falls outside. Mirrors the
    autodiff shift op so masks built here line up with tape-side shifts."""
    out = np.zeros_like(a)
    rows, cols = a.shape
    rs = slice(max(0, -dr), min(rows, rows - dr))
    cs = slice(max(0, -dc), min(cols, cols - dc))
    rs_src = slice(max(0, dr), min(rows, rows + dr))
    cs_src = slice(max(0, dc), min(cols, cols + dc))
    out[rs, cs] = a[rs_src, cs_src]
    return out


def neighbor_masks(active):
    """Per-direction 0/1 arrays: cell is active and its neighbour in that
    direction is in-grid and active (conduction happens across that face)."""
    act = active.astype(np.float64)
    masks = {}
    for d, (dr, dc) in _OFFSETS.items():
        masks[d] = act * shift_array(act, dr, dc)
    return masks


def exposed_top_mask(active, mode):
    """Cells whose upward face is exposed and treated as deposition surface."""
    act = active.astype(bool)
    if mode == "thin_wall":
        above_active = np.zeros_like(act)
        above_active[1:, :] = act[:-1, :]
        return act & ~above_active
    top = np.zeros_like(act)
    top[0, :] = act[0, :]
    return top


def radiation_out(material, t):
    """Net grey-body exchange with ambient, W/m^2, positive = heat leaving."""
    ta = material.t_ambient
    return material.sigma_sb * material.emissivity * (
        (t + 273.15) ** 4 - (ta + 273.15) ** 4)


def stencil_parts(t_old, active, material, grid, mode, flux_values=None):
    """Coefficients of the balance equation, all lagged at t_old.

    Returns dict with:
      ct        rho*cp/dt, per cell
      ck        k/dx^2, per cell
      nb        {'N','S','W','E'} conduction face masks (0/1 floats)
      src       constant source term, W/m^3 equivalents folded to degC/s*ct units
      fluxed    bool mask of cells whose exposed face absorbed laser flux
    Inactive cells get ct=ck=0, all masks 0, src 0; the caller pins them.
    """
    if mode not in MODES:
        raise ValidationError("mode", f"unknown mode {mode!r}, expected one of {MODES}")
    t_old = np.asarray(t_old, dtype=np.float64)
    act = np.asarray(active, dtype=bool)
    if t_old.shape != (grid.rows, grid.cols):
        raise ValidationError("t_old", f"shape {t_old.shape} does not match grid {grid.shape}")
    if act.shape != t_old.shape:
        raise ValidationError("active", "mask shape does not match field")
    actf = act.astype(np.float64)
    dx = grid.dx

    ct = material.rho(t_old) * material.cp(t_old) / grid.dt * actf
    ck = material.k(t_old) / dx**2 * actf
    nb = neighbor_masks(act)

    src = np.zeros_like(t_old)
    rad = radiation_out(material, t_old)
    ta = material.t_ambient

    # exposed top faces: h_c_top + radiation, plus laser flux in
    top = exposed_top_mask(act, mode)
    q_top = material.h_c_top * (t_old - ta) + rad
    src -= np.where(top, q_top, 0.0) / dx
    fluxed = np.zeros_like(act)
    if flux_values is not None:
        fv = np.asarray(flux_values, dtype=np.float64)
        if fv.shape != t_old.shape:
            raise ValidationError("flux_values", f"shape {fv.shape} does not match grid {grid.shape}")
        src += np.where(top, fv, 0.0) / dx
        fluxed = top & (fv > 0.0)

    # remaining out-of-grid faces lose by h_conv + radiation: bottom, left and
    # right grid edges (the top edge is always a deposition face, handled
    # above). Faces against inactive cells are adiabatic and need no term.
    q_side = material.h_conv * (t_old - ta) + rad
    edge = np.zeros_like(t_old)
    edge[-1, :] += 1.0
    edge[:, 0] += 1.0
    edge[:, -1] += 1.0
    src -= actf * edge * q_side / dx

    if mode == "thin_wall":
        w = grid.wall_thickness
        sink = material.h_conv * (t_old - ta) + rad
        src -= actf * sink / w

    src *= actf
    return {"ct": ct, "ck": ck, "nb": nb, "src": src, "fluxed": fluxed}
