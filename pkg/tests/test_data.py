import numpy as np
import pytest

from thermocast.data import add_target_noise, split_dataset, window_dataset
from thermocast.errors import ValidationError
from thermocast.frames import STATE_ACTIVE, STATE_DEPOSITED, ThermalFrame
from thermocast.physics import FluxField


def toy_frames(n, shape=(4, 4), t_ambient=23.0):
    frames, fluxes = [], []
    for t in range(n):
        vals = np.full(shape, t_ambient) + t
        frames.append(ThermalFrame(t, vals, np.ones(shape, bool)))
        fluxes.append(np.full(shape, float(t)))
    return frames, fluxes


class TestWindowDataset:
    def test_sample_count(self):
        frames, fluxes = toy_frames(10)
        assert len(window_dataset(frames, fluxes, 5, 1)) == 5
        assert len(window_dataset(frames, fluxes, 3, 2)) == 6

    def test_boundary_single_sample(self):
        frames, fluxes = toy_frames(6)
        samples = window_dataset(frames, fluxes, 4, 2)
        assert len(samples) == 1

    def test_target_index_rule(self):
        frames, fluxes = toy_frames(12)
        for s in window_dataset(frames, fluxes, 3, 4):
            *inputs_idx, target_idx = s.indices
            assert target_idx == inputs_idx[-1] + 4
            assert list(inputs_idx) == list(range(inputs_idx[0], inputs_idx[0] + 3))

    def test_members_line_up(self):
        frames, fluxes = toy_frames(8)
        s = window_dataset(frames, fluxes, 2, 3)[1]
        # window starts at 1: inputs 1,2; target 5; prev 4; flux at 5
        assert np.array_equal(s.inputs[0], frames[1].values)
        assert np.array_equal(s.inputs[1], frames[2].values)
        assert s.target is frames[5]
        assert s.prev is frames[4]
        assert isinstance(s.flux, FluxField)
        assert np.array_equal(s.flux.values, fluxes[5])

    def test_insufficient_frames(self):
        frames, fluxes = toy_frames(4)
        with pytest.raises(ValidationError):
            window_dataset(frames, fluxes, 4, 1)
        with pytest.raises(ValidationError):
            window_dataset(frames, fluxes[:-1], 2, 1)
        with pytest.raises(ValidationError):
            window_dataset(frames, fluxes, 0, 1)

    def test_redeposition_exclusion_from_states(self):
        frames, fluxes = toy_frames(5)
        states = [np.full((4, 4), STATE_ACTIVE, dtype=np.int64) for _ in range(5)]
        # frame 3: cell (2, 2) re-deposited while already active
        states[3][2, 2] |= STATE_DEPOSITED
        samples = window_dataset(frames, fluxes, 2, 1, states=states)
        marked = samples[0]   # target index 2: nothing marked
        assert marked.exclude is not None and not marked.exclude.any()
        hit = samples[1]      # target index 3
        assert hit.exclude[2, 2]
        assert hit.exclude.sum() == 1

    def test_fresh_deposition_not_marked(self):
        # deposited into a previously inactive cell: handled by the mask
        # machinery, not the exclusion channel
        frames, fluxes = toy_frames(4)
        mask = np.ones((4, 4), bool)
        mask[0, 0] = False
        vals = frames[1].values.copy()
        vals[0, 0] = 23.0
        frames[1] = ThermalFrame(1, vals, mask)
        states = [np.full((4, 4), STATE_ACTIVE, dtype=np.int64) for _ in range(4)]
        states[2][0, 0] |= STATE_DEPOSITED
        samples = window_dataset(frames, fluxes, 1, 1, states=states)
        assert not samples[1].exclude.any()


class TestSplit:
    def test_chronological_split(self):
        frames, fluxes = toy_frames(13)
        samples = window_dataset(frames, fluxes, 2, 1)
        train, val = split_dataset(samples, 0.8)
        assert len(train) + len(val) == len(samples)
        assert len(train) == round(len(samples) * 0.8)
        assert max(s.indices[-1] for s in train) < min(s.indices[-1] for s in val)

    def test_bad_fraction(self):
        frames, fluxes = toy_frames(5)
        samples = window_dataset(frames, fluxes, 2, 1)
        for frac in (0.0, 1.0, -0.5):
            with pytest.raises(ValidationError):
                split_dataset(samples, frac)
        with pytest.raises(ValidationError):
            split_dataset([], 0.8)


class TestTargetNoise:
    def test_zero_fraction_identity(self):
        frames, fluxes = toy_frames(6)
        samples = window_dataset(frames, fluxes, 2, 1)
        noisy = add_target_noise(samples, 0.0, np.random.default_rng(0))
        for a, b in zip(samples, noisy):
            assert np.array_equal(a.target.values, b.target.values)

    def test_noise_scale_and_masks(self):
        rng = np.random.default_rng(1)
        shape = (16, 16)
        mask = np.ones(shape, bool)
        mask[0, :] = False
        frames = []
        for t in range(40):
            vals = rng.uniform(100.0, 300.0, shape)
            vals[0, :] = 23.0
            frames.append(ThermalFrame(t, vals, mask.copy()))
        fluxes = [np.zeros(shape) for _ in range(40)]
        samples = window_dataset(frames, fluxes, 2, 1)
        lo = min(s.target.values.min() for s in samples)
        hi = max(s.target.values.max() for s in samples)
        noisy = add_target_noise(samples, 0.02, np.random.default_rng(2))
        diffs = np.concatenate([(n.target.values - s.target.values)[mask]
                                for s, n in zip(samples, noisy)])
        sigma = 0.02 * (hi - lo)
        assert abs(diffs.std() - sigma) < 0.15 * sigma
        assert abs(diffs.mean()) < 0.05 * sigma
        for s, n in zip(samples, noisy):
            assert np.array_equal(n.target.values[~mask], s.target.values[~mask])
            assert np.array_equal(n.target.active_mask, s.target.active_mask)
            assert n.inputs is s.inputs and n.flux is s.flux

    def test_deterministic_given_rng(self):
        frames, fluxes = toy_frames(6)
        samples = window_dataset(frames, fluxes, 2, 1)
        a = add_target_noise(samples, 0.1, np.random.default_rng(5))
        b = add_target_noise(samples, 0.1, np.random.default_rng(5))
        for x, y in zip(a, b):
            assert np.array_equal(x.target.values, y.target.values)
        with pytest.raises(ValidationError):
            add_target_noise(samples, -0.1, np.random.default_rng(0))
