"""Scenario files: one INI document describing a whole run.

A scenario bundles the material model, grid, laser, deposition path, and
the model/training settings used downstream. Every key has a documented
default, so the minimal useful file is just:

    [path]
    kind = thin_wall_raster

Unknown sections or keys are rejected, and each defaulted key is reported
so run manifests can record where values came from.
"""

import configparser
from dataclasses import dataclass

from .errors import ScenarioError, ValidationError
from .materials import GridSpec, MaterialModel, cfl_max_dt
from .model import ModelConfig
from .paths import PATH_KINDS, generate_path
from .physics import LaserSpec
from .training import TrainConfig

_AUTO = object()     # resolved by the consumer (path defaults)
_DERIVED = object()  # resolved from other scenario values


def _to_bool(text):
    states = {"1": True, "yes": True, "true": True, "on": True,
              "0": False, "no": False, "false": False, "off": False}
    try:
        return states[text.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}")


def _to_optional_int(text):
    if text.strip().lower() in ("", "auto", "none"):
        return None
    return int(text)


# section -> key -> (converter, default)
_SCHEMA = {
    "material": {
        "rho0": (float, 7915.0), "rho1": (float, -0.59),
        "k0": (float, 12.6), "k1": (float, 0.015),
        "cp0": (float, 496.5), "cp1": (float, 0.133),
        "h_conv": (float, 10.0), "h_c_top": (float, 10.0),
        "emissivity": (float, 0.3), "t_ambient": (float, 23.0),
    },
    "grid": {
        "rows": (int, 32), "cols": (int, 32),
        "dx": (float, 1e-3), "dt": (float, 0.02),
        "wall_thickness": (float, 1e-3), "record_every": (int, 1),
    },
    "laser": {
        "power": (float, 350.0), "efficiency": (float, 0.4),
        "beam_radius": (float, 1.5e-3),
    },
    "path": {
        "kind": (str, "thin_wall_raster"),
        "scan_speed": (float, 0.01),
        "process_temperature": (float, 1700.0),
        "n_layers": (_to_optional_int, _AUTO),
        "dwell_steps": (_to_optional_int, _AUTO),
        "margin": (int, 2),
        "extra_steps": (int, 0),
    },
    "normalization": {
        "lo": (float, _DERIVED), "hi": (float, _DERIVED),
    },
    "model": {
        "filters": (int, 10), "kernel_size": (int, 3),
        "n_convlstm_layers": (int, 3), "n_conv_layers": (int, 2),
        "window": (int, 3), "horizon": (int, 1),
    },
    "training": {
        "lr": (float, 1e-3), "epochs": (int, 40),
        "batch_size": (int, 8), "seed": (int, 0), "split": (float, 0.8),
        "use_pi_loss": (_to_bool, True), "use_pi_input": (_to_bool, True),
    },
}


@dataclass(frozen=True)
class Scenario:
    material: MaterialModel
    grid: GridSpec
    laser: LaserSpec
    record_every: int
    path_kind: str
    scan_speed: float
    process_temperature: float
    n_layers: object
    dwell_steps: object
    margin: int
    extra_steps: int
    model_config: ModelConfig
    train_config: TrainConfig
    defaulted: tuple  # "section.key" for every value not present in the file
    resolved: dict    # plain snapshot of every key after defaulting

    def build_path(self):
        return generate_path(self.path_kind, self.grid, self.scan_speed,
                             self.process_temperature, n_layers=self.n_layers,
                             dwell_steps=self.dwell_steps, margin=self.margin)


def _read_ini(path):
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        with open(path) as fh:
            cp.read_file(fh, source=str(path))
    except OSError as err:
        raise ScenarioError(f"cannot read scenario: {err}")
    except configparser.ParsingError as err:
        # MissingSectionHeaderError carries lineno instead of an errors list
        errors = getattr(err, "errors", None)
        line = errors[0][0] if errors else getattr(err, "lineno", None)
        raise ScenarioError(f"malformed scenario: {err}", line=line)
    except configparser.Error as err:
        raise ScenarioError(f"malformed scenario: {err}")
    if cp.defaults():
        raise ScenarioError("[DEFAULT] section is not supported; "
                            "put keys under their own sections")
    return cp


def parse_scenario(path):
    """Read, default-fill, and validate a scenario file.

    Raises ScenarioError for syntax problems (with a line number where
    one is known) and ValidationError when a resolved value violates a
    domain contract.
    """
    cp = _read_ini(path)

    for sect in cp.sections():
        if sect not in _SCHEMA:
            raise ScenarioError(f"unknown section [{sect}]")
        for key in cp[sect]:
            if key not in _SCHEMA[sect]:
                raise ScenarioError(f"unknown key {sect}.{key}")

    values = {}
    defaulted = []
    for sect, keys in _SCHEMA.items():
        values[sect] = {}
        for key, (conv, default) in keys.items():
            if cp.has_option(sect, key):
                raw = cp.get(sect, key)
                try:
                    values[sect][key] = conv(raw)
                except ValueError as err:
                    raise ScenarioError(f"bad value for {sect}.{key}: {err}")
            else:
                values[sect][key] = default
                defaulted.append(f"{sect}.{key}")

    mat = values["material"]
    material = MaterialModel(**mat)

    g = values["grid"]
    record_every = g["record_every"]
    if record_every < 1:
        raise ValidationError("grid.record_every", f"must be >= 1, got {record_every}")
    grid = GridSpec(g["rows"], g["cols"], g["dx"], g["dt"],
                    wall_thickness=g["wall_thickness"])

    las = values["laser"]
    laser = LaserSpec(las["power"], las["efficiency"], las["beam_radius"])

    p = values["path"]
    if p["kind"] not in PATH_KINDS:
        raise ValidationError(
            "path.kind", f"unknown path kind {p['kind']!r}, expected one of {PATH_KINDS}")
    if p["extra_steps"] < 0:
        raise ValidationError("path.extra_steps", "must be >= 0")
    for opt in ("n_layers", "dwell_steps"):
        if p[opt] is _AUTO:
            p[opt] = None

    norm = values["normalization"]
    if norm["lo"] is _DERIVED:
        norm["lo"] = material.t_ambient
    if norm["hi"] is _DERIVED:
        norm["hi"] = 1.1 * p["process_temperature"]

    mdl = values["model"]
    model_config = ModelConfig(
        normalization=(norm["lo"], norm["hi"]),
        flux_scale=laser.peak_flux if laser.peak_flux > 0 else 1.0,
        n_convlstm_layers=mdl["n_convlstm_layers"],
        n_conv_layers=mdl["n_conv_layers"], filters=mdl["filters"],
        kernel_size=mdl["kernel_size"], window=mdl["window"],
        horizon=mdl["horizon"])

    tr = values["training"]
    train_config = TrainConfig(lr=tr["lr"], epochs=tr["epochs"],
                               batch_size=tr["batch_size"], seed=tr["seed"],
                               use_pi_loss=tr["use_pi_loss"],
                               use_pi_input=tr["use_pi_input"],
                               split=tr["split"])

    t_span = (min(material.t_ambient, p["process_temperature"]),
              max(material.t_ambient, p["process_temperature"]))
    limit = cfl_max_dt(material, grid, t_span)
    if grid.dt > limit:
        raise ValidationError(
            "grid.dt", f"{grid.dt!r} exceeds cfl_max_dt = {limit!r} "
            f"for temperatures in {t_span}")

    # building the path validates that it fits the grid
    generate_path(p["kind"], grid, p["scan_speed"], p["process_temperature"],
                  n_layers=p["n_layers"], dwell_steps=p["dwell_steps"],
                  margin=p["margin"])

    return Scenario(
        material=material, grid=grid, laser=laser, record_every=record_every,
        path_kind=p["kind"], scan_speed=p["scan_speed"],
        process_temperature=p["process_temperature"], n_layers=p["n_layers"],
        dwell_steps=p["dwell_steps"], margin=p["margin"],
        extra_steps=p["extra_steps"], model_config=model_config,
        train_config=train_config, defaulted=tuple(defaulted),
        resolved=values)
