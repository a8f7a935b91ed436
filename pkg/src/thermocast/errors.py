"""Exception types shared across the package.

Every error raised by the library carries enough structure (fields, not just
a message) for callers to react programmatically; the CLI maps them onto
exit codes.
"""


class ThermocastError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(ThermocastError):
    def __init__(self, what, shape_a, shape_b):
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{what}: shapes {self.shape_a} and {self.shape_b} are incompatible")


class TapeError(ThermocastError):
    """Misuse of the autodiff tape (stale backward, foreign tensors, non-scalar loss)."""


class NonFiniteError(ThermocastError):
    def __init__(self, where, detail=""):
        self.where = where
        msg = f"non-finite value in {where}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ValidationError(ThermocastError):
    """A domain object or configuration value violates its contract."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class CflViolationError(ThermocastError):
    def __init__(self, dt, max_dt):
        self.dt = dt
        self.max_dt = max_dt
        super().__init__(f"dt={dt:g} exceeds stability bound {max_dt:g}")


class StepError(ThermocastError):
    """Raised when a simulator step produces an invalid frame."""

    def __init__(self, message, step=None, cell=None):
        self.step = step
        self.cell = cell
        prefix = f"step {step}: " if step is not None else ""
        suffix = f" at cell {cell}" if cell is not None else ""
        super().__init__(prefix + message + suffix)


class ScenarioError(ThermocastError):
    """Scenario file cannot be parsed or fails validation."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(ThermocastError):
    """Checkpoint file is malformed, truncated, or inconsistent with its config."""


class TrainingError(ThermocastError):
    """Raised when training diverges or receives unusable inputs."""

    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        where = ""
        if epoch is not None:
            where = f"epoch {epoch}"
            if batch is not None:
                where += f", batch {batch}"
            where = f" ({where})"
        super().__init__(message + where)
