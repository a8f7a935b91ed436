"""Deposition paths: where material appears and where the laser points.

A path is a dense per-step event list. Event s describes everything that
happens between frame s and frame s+1: cells newly deposited (set to the
process temperature and activated), whether the beam is on, and the beam
centre position in metres. Patterns are built as polylines traversed at the
scan speed, so consecutive on-positions never move more than scan_speed*dt
apart; repositioning between passes happens with the beam off.

Grid convention: rows increase downward, row r spans y in [r*dx - dx/2,
r*dx + dx/2), i.e. cell centres sit at integer multiples of dx. Positive
y is down; "up" (towards smaller row index) is the build direction for the
thin-wall pattern.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

PATH_KINDS = ("thin_wall_raster", "cylinder_spiral", "cube_zigzag")


@dataclass(frozen=True)
class PathEvent:
    step: int
    laser_on: bool
    position: tuple          # (x, y) metres; beam centre (meaningful while on)
    activations: tuple = ()  # cells (row, col) deposited during this step


@dataclass(frozen=True)
class DepositionPath:
    kind: str
    scan_speed: float        # m/s
    process_temperature: float  # degC of freshly deposited material
    events: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in PATH_KINDS:
            raise ValidationError("kind", f"unknown path kind {self.kind!r}, expected one of {PATH_KINDS}")
        if self.scan_speed <= 0:
            raise ValidationError("scan_speed", "must be positive")

    @property
    def n_steps(self):
        return len(self.events)

    def event_at(self, step):
        """Event for step s; past the end the beam is off and nothing deposits."""
        if step < len(self.events):
            return self.events[step]
        last = self.events[-1].position if self.events else (0.0, 0.0)
        return PathEvent(step, False, last, ())

    def validate(self, grid):
        limit = self.scan_speed * grid.dt * (1.0 + 1e-6)
        prev = None
        for ev in self.events:
            for (r, c) in ev.activations:
                if not (0 <= r < grid.rows and 0 <= c < grid.cols):
                    raise ValidationError("activations", f"cell ({r}, {c}) outside {grid.rows}x{grid.cols} grid")
            if ev.laser_on and prev is not None and prev.laser_on:
                dxm = ev.position[0] - prev.position[0]
                dy = ev.position[1] - prev.position[1]
                if math.hypot(dy, dxm) > limit:
                    raise ValidationError(
                        "events", f"beam jumped {math.hypot(dy, dxm):g} m in one step at step {ev.step}, "
                        f"limit {limit:g}")
            prev = ev


def _cell_of(pos, dx):
    # position is (x, y); cell index is (row, col) = (y/dx, x/dx)
    return (int(round(pos[1] / dx)), int(round(pos[0] / dx)))


def _traverse(grid, scan_speed, segments):
    """Walk a list of (polyline, laser_on, dwell_after) segments at scan speed.

    polyline is a list of (y, x) waypoints in metres. One event is emitted per
    timestep. While the beam is on, entering a new cell deposits it (cells are
    re-deposited when revisited on a later pass, which models remelting and
    layer stacking in the 2-D section). dwell_after inserts that many off
    steps at the final position.
    """
    dt = grid.dt
    events = []
    step = 0
    pos = None
    current_cell = None

    def emit(p, on, acts):
        nonlocal step
        events.append(PathEvent(step, on, (float(p[0]), float(p[1])), tuple(acts)))
        step += 1

    for polyline, on, dwell_after in segments:
        pts = [np.asarray(p, dtype=np.float64) for p in polyline]
        if not on:
            # beam off: jump instantly, spend dwell steps parked
            pos = pts[-1] if pts else pos
            for _ in range(dwell_after):
                emit(pos, False, ())
            current_cell = None
            continue
        # arc-length walk along the polyline
        pos = pts[0]
        acts = []
        cell = _cell_of(pos, grid.dx)
        if cell != current_cell:
            acts.append(cell)
            current_cell = cell
        remaining = scan_speed * dt
        seg_i = 0
        while True:
            # advance `remaining` metres along the polyline, depositing every
            # cell whose centre region the beam centre passes through
            while seg_i < len(pts) - 1 and remaining > 0:
                a, b = pos, pts[seg_i + 1]
                seg_len = float(np.hypot(*(b - a)))
                if seg_len <= remaining + 1e-15:
                    # crossing to next waypoint: sample cells along the hop
                    _collect_cells(a, b, grid.dx, acts, current_cell)
                    if acts:
                        current_cell = acts[-1]
                    remaining -= seg_len
                    pos = b
                    seg_i += 1
                else:
                    b2 = a + (b - a) * (remaining / seg_len)
                    _collect_cells(a, b2, grid.dx, acts, current_cell)
                    if acts:
                        current_cell = acts[-1]
                    pos = b2
                    remaining = 0.0
            emit(pos, True, acts)
            acts = []
            if seg_i >= len(pts) - 1:
                break
            remaining = scan_speed * dt
        for _ in range(dwell_after):
            emit(pos, False, ())
        current_cell = None
    return events


def _collect_cells(a, b, dx, acts, current):
    """Append every grid cell the straight hop a->b enters, in order."""
    n_sub = max(1, int(math.ceil(float(np.hypot(*(b - a))) / (0.25 * dx))))
    last = current if not acts else acts[-1]
    for j in range(1, n_sub + 1):
        p = a + (b - a) * (j / n_sub)
        cell = _cell_of(p, dx)
        if cell != last:
            acts.append(cell)
            last = cell


def generate_path(kind, grid, scan_speed, process_temperature, n_layers=None,
                  dwell_steps=None, margin=2):
    """Build one of the three canned deposition patterns.

    thin_wall_raster: a single-track wall built bottom-up, one row per layer,
    each pass left to right with an off-beam dwell between layers.
    cylinder_spiral: the beam sweeps a circle (the 2-D section of a cylinder
    wall), one revolution per layer, re-melting the same ring of cells.
    cube_zigzag: boustrophedon fill of a square region, one full fill per
    layer, re-melting on every layer.
    """
    if kind not in PATH_KINDS:
        raise ValidationError("kind", f"unknown path kind {kind!r}, expected one of {PATH_KINDS}")
    if process_temperature <= 0:
        raise ValidationError("process_temperature", "must be positive (degC)")
    if scan_speed <= 0:
        # checked here, not just in DepositionPath: a zero speed would walk
        # the arc-length loop below forever
        raise ValidationError("scan_speed", "must be positive")
    m, n, dx = grid.rows, grid.cols, grid.dx
    if dwell_steps is None:
        dwell_steps = max(1, int(round(0.05 / grid.dt)))  # 50 ms reposition pause

    segments = []
    if kind == "thin_wall_raster":
        c0, c1 = margin, n - 1 - margin
        base_row = m - 1 - margin
        if c1 <= c0 or base_row < margin:
            raise ValidationError("grid", "grid too small for thin_wall_raster margins")
        max_layers = base_row - margin + 1
        if n_layers is None:
            n_layers = max_layers
        if n_layers > max_layers:
            raise ValidationError("n_layers", f"{n_layers} layers exceed available height {max_layers}")
        for layer in range(n_layers):
            r = base_row - layer
            y = r * dx
            segments.append(([(c0 * dx, y), (c1 * dx, y)], True, 0))
            segments.append(([(c1 * dx, y)], False, dwell_steps))
    elif kind == "cylinder_spiral":
        cy, cx = (m - 1) / 2.0 * dx, (n - 1) / 2.0 * dx
        radius = (min(m, n) / 2.0 - 1 - margin) * dx
        if radius < dx:
            raise ValidationError("grid", "grid too small for cylinder_spiral margins")
        if n_layers is None:
            n_layers = 3
        # enough chord points that the polyline stays within a tenth cell of
        # the true circle
        n_pts = max(64, int(math.ceil(2 * math.pi * radius / (0.2 * dx))))
        for layer in range(n_layers):
            ring = [(cx + radius * math.cos(2 * math.pi * j / n_pts),
                     cy + radius * math.sin(2 * math.pi * j / n_pts))
                    for j in range(n_pts + 1)]
            segments.append((ring, True, 0))
            segments.append(([ring[-1]], False, dwell_steps))
    else:  # cube_zigzag
        side = min(m, n) - 2 * margin
        if side < 2:
            raise ValidationError("grid", "grid too small for cube_zigzag margins")
        r0 = (m - side) // 2
        c0 = (n - side) // 2
        if n_layers is None:
            n_layers = 2
        for layer in range(n_layers):
            line = []
            for i in range(side):
                r = r0 + i
                cols = (c0, c0 + side - 1) if i % 2 == 0 else (c0 + side - 1, c0)
                line.append((cols[0] * dx, r * dx))
                line.append((cols[1] * dx, r * dx))
            segments.append((line, True, 0))
            segments.append(([line[-1]], False, dwell_steps))

    events = _traverse(grid, scan_speed, segments)
    path = DepositionPath(kind, scan_speed, process_temperature, tuple(events))
    path.validate(grid)
    return path
