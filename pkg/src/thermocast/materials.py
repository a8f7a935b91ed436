"""Material property models and grid geometry.

Properties are linear in temperature, rho(T) = rho0 + rho1*T and likewise
for k and Cp, which matches how alloy data is usually tabulated for this
temperature span. Units: SI with temperatures in degrees C; radiation
converts to K internally where the fourth power is taken.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CflViolationError, ValidationError

STEFAN_BOLTZMANN = 5.670374419e-8  # W/m^2 K^4


@dataclass(frozen=True)
class MaterialModel:
    rho0: float = 7915.0     # kg/m^3
    rho1: float = -0.59      # kg/m^3 per degC
    k0: float = 12.6         # W/m degC
    k1: float = 0.015
    cp0: float = 496.5       # J/kg degC
    cp1: float = 0.133
    h_conv: float = 10.0     # W/m^2 degC, lateral surfaces
    h_c_top: float = 10.0    # W/m^2 degC, deposition surface
    emissivity: float = 0.3
    t_ambient: float = 23.0  # degC
    sigma_sb: float = field(default=STEFAN_BOLTZMANN)

    def __post_init__(self):
        if not 0.0 <= self.emissivity <= 1.0:
            raise ValidationError("emissivity", f"must be within [0, 1], got {self.emissivity}")
        if self.sigma_sb <= 0:
            raise ValidationError("sigma_sb", "must be positive")
        if self.h_conv < 0 or self.h_c_top < 0:
            raise ValidationError("h_conv/h_c_top", "convection coefficients must be >= 0")
        if self.t_ambient < -273.15:
            raise ValidationError("t_ambient", "below absolute zero")

    def rho(self, t):
        return self.rho0 + self.rho1 * np.asarray(t, dtype=np.float64)

    def k(self, t):
        return self.k0 + self.k1 * np.asarray(t, dtype=np.float64)

    def cp(self, t):
        return self.cp0 + self.cp1 * np.asarray(t, dtype=np.float64)

    def validate_range(self, t_range):
        """Properties are linear in T, so positivity at both ends covers the span."""
        lo, hi = float(t_range[0]), float(t_range[1])
        if lo > hi:
            raise ValidationError("t_range", f"empty range ({lo}, {hi})")
        for name, fn in (("rho", self.rho), ("k", self.k), ("cp", self.cp)):
            for t in (lo, hi):
                v = float(fn(t))
                if not np.isfinite(v) or v <= 0.0:
                    raise ValidationError(name, f"{name}({t:g} degC) = {v:g} is not positive")


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    dx: float                     # m, uniform square spacing
    dt: float                     # s
    wall_thickness: float = 1e-3  # m, out-of-plane thickness for thin-wall sink terms

    def __post_init__(self):
        if self.rows < 3 or self.cols < 3:
            raise ValidationError("rows/cols", f"grid must be at least 3x3, got {self.rows}x{self.cols}")
        if self.dx <= 0:
            raise ValidationError("dx", "must be positive")
        if self.dt <= 0:
            raise ValidationError("dt", "must be positive")
        if self.wall_thickness <= 0:
            raise ValidationError("wall_thickness", "must be positive")

    @property
    def shape(self):
        return (self.rows, self.cols)


def cfl_max_dt(material, grid, t_range):
    """Largest stable timestep of the classical explicit 2-D scheme.

    Returns min over the range of rho(T)*Cp(T)*dx^2 / (4*k(T)), sampled
    densely (the ratio of a quadratic to a linear has at most one interior
    extremum, so sampling is plenty at the safety margins used).
    """
    material.validate_range(t_range)
    lo, hi = float(t_range[0]), float(t_range[1])
    ts = np.linspace(lo, hi, 513) if hi > lo else np.array([lo])
    bound = material.rho(ts) * material.cp(ts) * grid.dx**2 / (4.0 * material.k(ts))
    return float(np.min(bound))


def check_cfl(material, grid, t_range):
    limit = cfl_max_dt(material, grid, t_range)
    if grid.dt > limit:
        raise CflViolationError(grid.dt, limit)
    return limit
