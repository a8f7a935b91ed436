import numpy as np
import pytest

from thermocast.materials import GridSpec, MaterialModel
from thermocast.model import ModelConfig
from thermocast.paths import generate_path
from thermocast.physics import LaserSpec
from thermocast.simulator import simulate


@pytest.fixture(scope="session")
def micro_run():
    """Small thin-wall deposition used across training and forecast tests:
    8x8 grid, three deposited layers, ~70 recorded frames."""
    material = MaterialModel()
    grid = GridSpec(8, 8, 1e-3, 0.02)
    laser = LaserSpec(power=350.0, efficiency=0.4, beam_radius=1.5e-3)
    path = generate_path("thin_wall_raster", grid, scan_speed=0.01,
                         process_temperature=1700.0, n_layers=3)
    result = simulate(material, grid, path, laser, n_steps=path.n_steps + 10,
                      record_every=1)
    return {
        "material": material,
        "grid": grid,
        "laser": laser,
        "mode": result.mode,
        "frames": result.frames,
        "fluxes": result.fluxes,
        "states": result.states,
    }


@pytest.fixture(scope="session")
def micro_model_config(micro_run):
    return ModelConfig(normalization=(micro_run["material"].t_ambient, 1870.0),
                       flux_scale=micro_run["laser"].peak_flux,
                       n_convlstm_layers=1, n_conv_layers=1, filters=3,
                       kernel_size=3, window=2, horizon=1)
