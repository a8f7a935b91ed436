import numpy as np
import pytest

from thermocast import autodiff as ad
from thermocast.checkpoint import Checkpoint
from thermocast.data import split_dataset, window_dataset
from thermocast.errors import ValidationError
from thermocast.forecast import (
    HorizonCurve,
    direct_predict,
    horizon_study,
    rolling_predict,
)
from thermocast.model import (
    ModelConfig,
    expected_shapes,
    forward,
    from_named_arrays,
    leaf_params,
    named_arrays,
)
from thermocast.training import TrainConfig, train


@pytest.fixture(scope="module")
def micro_ckpt(micro_run, micro_model_config):
    dataset = window_dataset(micro_run["frames"], micro_run["fluxes"], 2, 1,
                             states=micro_run["states"])
    ckpt, _ = train(dataset, micro_model_config,
                    TrainConfig(lr=1e-3, epochs=1, batch_size=8, seed=0),
                    micro_run["material"], micro_run["grid"], micro_run["mode"])
    return ckpt


def zero_checkpoint(config, tweak=None):
    arrays = {name: np.zeros(shape) for name, shape in
              expected_shapes(config).items()}
    if tweak:
        tweak(arrays)
    return Checkpoint(version=1, config=config,
                      params=from_named_arrays(config, arrays), seed=0, epochs=0)


def tap_config(**kw):
    base = dict(normalization=(10.0, 20.0), flux_scale=2.0,
                n_convlstm_layers=1, n_conv_layers=0, filters=2,
                kernel_size=3, window=2, horizon=1)
    base.update(kw)
    return ModelConfig(**base)


def flux_tap(arrays):
    # zero gates keep the hidden state at zero, so the output conv sees
    # only the flux channel; a unit centre tap copies it straight through
    arrays["out.kernel"][0, -1, 1, 1] = 1.0


class TestRolling:
    def test_zero_steps(self, micro_ckpt, micro_run):
        window = [f.values for f in micro_run["frames"][:2]]
        assert rolling_predict(micro_ckpt, window, [], 0) == []

    def test_one_step_matches_direct_and_forward(self, micro_ckpt, micro_run):
        frames, fluxes = micro_run["frames"], micro_run["fluxes"]
        window = [frames[10].values, frames[11].values]
        flux = fluxes[12]
        rolled = rolling_predict(micro_ckpt, window, [flux], 1)[0]
        direct = direct_predict(micro_ckpt, window, flux)
        params = leaf_params(ad.Tape(), micro_ckpt.params)
        plain = forward(params, micro_ckpt.config, window,
                        np.asarray(flux, dtype=np.float64)).data
        assert np.array_equal(rolled, direct)
        assert np.array_equal(rolled, plain)

    def test_prediction_tracks_flux_sequence(self):
        cfg = tap_config()
        ckpt = zero_checkpoint(cfg, flux_tap)
        rng = np.random.default_rng(7)
        window = [rng.uniform(10, 20, (5, 5)) for _ in range(2)]
        fluxes = [rng.uniform(0, 4, (5, 5)) for _ in range(3)]
        preds = rolling_predict(ckpt, window, fluxes, 3)
        # denormalised tap: t_min + span * flux / flux_scale
        for pred, flux in zip(preds, fluxes):
            assert np.allclose(pred, 10.0 + 5.0 * flux, rtol=0, atol=1e-12)

    def test_checkpoint_not_mutated(self, micro_ckpt, micro_run):
        before = {k: v.copy() for k, v in named_arrays(micro_ckpt.params).items()}
        window = [f.values for f in micro_run["frames"][:2]]
        rolling_predict(micro_ckpt, window, micro_run["fluxes"][2:6], 4)
        after = named_arrays(micro_ckpt.params)
        for name in before:
            assert np.array_equal(before[name], after[name]), name

    def test_two_channel_feedback(self):
        cfg = tap_config(input_channels=2)
        ckpt = zero_checkpoint(cfg, flux_tap)
        rng = np.random.default_rng(3)
        window = [rng.uniform(10, 20, (2, 5, 5)) for _ in range(2)]
        fluxes = [rng.uniform(0, 4, (5, 5)) for _ in range(2)]
        below = [rng.uniform(10, 20, (5, 5)) for _ in range(2)]
        preds = rolling_predict(ckpt, window, fluxes, 2, below_sequence=below)
        assert len(preds) == 2 and preds[0].shape == (5, 5)
        assert np.allclose(preds[1], 10.0 + 5.0 * fluxes[1], atol=1e-12)
        with pytest.raises(ValidationError, match="below"):
            rolling_predict(ckpt, window, fluxes, 2)

    def test_bad_inputs(self, micro_ckpt, micro_run):
        window = [f.values for f in micro_run["frames"][:2]]
        fluxes = micro_run["fluxes"]
        with pytest.raises(ValidationError, match="steps"):
            rolling_predict(micro_ckpt, window, fluxes[:3], -1)
        with pytest.raises(ValidationError, match="flux"):
            rolling_predict(micro_ckpt, window, fluxes[:2], 3)
        from dataclasses import replace
        far = replace(micro_ckpt.config, horizon=4)
        ckpt4 = Checkpoint(1, far, micro_ckpt.params, 0, 0)
        with pytest.raises(ValidationError, match="horizon"):
            rolling_predict(ckpt4, window, fluxes[:2], 2)


class TestDirect:
    def test_bias_field_any_horizon(self):
        cfg = tap_config(horizon=5)

        def bias(arrays):
            arrays["out.bias"][0] = 0.37

        ckpt = zero_checkpoint(cfg, bias)
        window = [np.full((4, 6), 15.0) for _ in range(2)]
        pred = direct_predict(ckpt, window, np.zeros((4, 6)))
        assert pred.shape == (4, 6)
        assert np.allclose(pred, 10.0 + 0.37 * 10.0, atol=1e-13)


class TestHorizonStudy:
    def test_degenerate_single_horizon(self, micro_run, micro_model_config):
        tc = TrainConfig(lr=1e-3, epochs=1, batch_size=8, seed=0)
        rolling, direct = horizon_study(
            micro_run["frames"], micro_run["fluxes"], {1},
            micro_model_config, tc, micro_run["material"], micro_run["grid"],
            micro_run["mode"])
        assert [s for s, _ in rolling.points] == [1]
        assert [s for s, _ in direct.points] == [1]
        # shared seed, identical dataset: the two curves describe the same
        # model, so they may differ only by batching round-off
        mr, md = rolling.points[0][1], direct.points[0][1]
        assert mr.mse == pytest.approx(md.mse, rel=1e-9)
        assert mr.mae == pytest.approx(md.mae, rel=1e-9)
        assert mr.mape == pytest.approx(md.mape, rel=1e-9)

    def test_two_horizons(self, micro_run, micro_model_config):
        tc = TrainConfig(lr=1e-3, epochs=1, batch_size=8, seed=1)
        rolling, direct = horizon_study(
            micro_run["frames"], micro_run["fluxes"], [2, 1],
            micro_model_config, tc, micro_run["material"], micro_run["grid"],
            micro_run["mode"])
        assert [s for s, _ in rolling.points] == [1, 2]
        assert [s for s, _ in direct.points] == [1, 2]
        for _, m in rolling.points + direct.points:
            assert m.mse >= 0 and m.mape >= 0

    def test_bad_arguments(self, micro_run, micro_model_config):
        tc = TrainConfig(epochs=1)
        args = (micro_run["frames"], micro_run["fluxes"])
        tail = (micro_run["material"], micro_run["grid"], micro_run["mode"])
        with pytest.raises(ValidationError):
            horizon_study(*args, [], micro_model_config, tc, *tail)
        with pytest.raises(ValidationError):
            horizon_study(*args, [0, 1], micro_model_config, tc, *tail)
        from dataclasses import replace
        with pytest.raises(ValidationError):
            horizon_study(*args, [1], replace(micro_model_config, horizon=2),
                          tc, *tail)


def test_curve_validation():
    m = dict(mse=1.0, mae=1.0, mape=1.0)
    from thermocast.training import Metrics
    with pytest.raises(ValidationError):
        HorizonCurve("sideways", ((1, Metrics(**m)),))
    with pytest.raises(ValidationError):
        HorizonCurve("rolling", ((2, Metrics(**m)), (2, Metrics(**m))))
