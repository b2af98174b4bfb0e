import itertools
import math

import numpy as np
import pytest

from speccal.calibrators import (
    GpScalingMap,
    IMaxBins,
    TemperatureParam,
    _coordinate_ascent,
    apply_temperature,
    fit_gp_scaling,
    fit_imax,
    fit_temperature,
    load_calibrator,
    one_vs_rest_log_odds,
    save_calibrator,
)
from speccal.core import ENV1_VALID, softmax
from speccal.metrics import compute_nll
from tests.conftest import calibrated_logits, make_logit_dataset

# several tests use deliberately tiny gradient budgets
pytestmark = pytest.mark.filterwarnings("ignore:GP scaling fit still improving")

# ---------------------------------------------------------------------------
# independent oracles


def nll_oracle(z, y, t):
    zt = z / t
    zt = zt - zt.max(axis=1, keepdims=True)
    logp = zt - np.log(np.exp(zt).sum(axis=1, keepdims=True))
    return -np.mean(logp[np.arange(len(y)), y])


def temperature_grid_oracle(z, y, points=4000):
    ts = np.exp(np.linspace(math.log(0.05), math.log(20.0), points))
    vals = [nll_oracle(z, y, t) for t in ts]
    return float(ts[int(np.argmin(vals))])


def mi_oracle(s, t, boundaries):
    """Plain-python empirical MI between bin index and binary target."""
    idx = np.searchsorted(boundaries, s)
    n = len(s)
    total = 0.0
    for b in range(len(boundaries) + 1):
        mask = idx == b
        nb = int(mask.sum())
        if nb == 0:
            continue
        for tv in (0, 1):
            c = int(((t == tv) & mask).sum())
            if c == 0:
                continue
            p_joint = c / n
            total += p_joint * math.log(p_joint / ((nb / n) * ((t == tv).sum() / n)))
    return total


def best_mi_exhaustive(s, t, num_bins):
    distinct = np.unique(s)
    mids = 0.5 * (distinct[:-1] + distinct[1:])
    best = -1.0
    for combo in itertools.combinations(range(len(mids)), num_bins - 1):
        best = max(best, mi_oracle(s, t, mids[list(combo)]))
    return best


# ---------------------------------------------------------------------------
# temperature scaling


class TestTemperature:
    @pytest.mark.parametrize("scale", [0.5, 2.0, 3.0])
    def test_recovery_vs_grid_oracle(self, scale):
        rng = np.random.default_rng(int(scale * 10))
        z, y = calibrated_logits(rng, 600, 5, scale=scale)
        ds = make_logit_dataset(z, y)
        fitted = fit_temperature(ds).temperature
        oracle = temperature_grid_oracle(z, y)
        assert fitted == pytest.approx(oracle, rel=0.02)
        assert fitted == pytest.approx(scale, rel=0.35)

    def test_nll_no_worse_than_unit(self, small_valid_ds):
        ts = fit_temperature(small_valid_ds)
        z, y = small_valid_ds.logit_matrix(), small_valid_ds.labels()
        assert nll_oracle(z, y, ts.temperature) <= nll_oracle(z, y, 1.0) + 1e-12

    def test_argmax_preserved(self, rng, small_valid_ds):
        ts = fit_temperature(small_valid_ds)
        z = rng.normal(0, 3, (500, 5))
        assert np.array_equal(ts.apply_matrix(z).argmax(1), z.argmax(1))

    def test_apply_closed_form(self):
        p = apply_temperature(TemperatureParam(k=2, temperature=2.0), np.array([2.0, 0.0]))
        np.testing.assert_allclose(p.ravel(), [0.73106, 0.26894], atol=1e-5)

    def test_unit_temperature_is_softmax(self, rng):
        z = rng.normal(0, 2, (20, 4))
        np.testing.assert_array_equal(TemperatureParam(k=4, temperature=1.0).apply_matrix(z), softmax(z))

    def test_infinite_temperature_limit(self, rng):
        z = rng.normal(0, 2, (10, 5))
        p = TemperatureParam(k=5, temperature=1e4).apply_matrix(z)
        np.testing.assert_allclose(p, 0.2, atol=1e-3)

    def test_high_temperature_reduces_confidence(self, rng):
        z = rng.normal(0, 2, (50, 5))
        base = softmax(z).max(axis=1)
        cooled = TemperatureParam(k=5, temperature=2.0).apply_matrix(z).max(axis=1)
        assert np.all(cooled < base)

    def test_single_class_rejected(self, rng):
        z = rng.normal(0, 1, (20, 3))
        ds = make_logit_dataset(z, np.zeros(20, dtype=int))
        with pytest.raises(ValueError, match="single class"):
            fit_temperature(ds)

    def test_fit_split_enforced(self, rng):
        z, y = calibrated_logits(rng, 50, 3)
        ds = make_logit_dataset(z, y, split_tag="Env1-Test")
        with pytest.raises(ValueError, match="Env1-Valid"):
            fit_temperature(ds)

    def test_invalid_temperature_rejected(self):
        with pytest.raises(ValueError):
            TemperatureParam(k=3, temperature=0.0)


# ---------------------------------------------------------------------------
# I-Max binning


class TestIMax:
    def test_separable_saturates_label_entropy(self):
        s = np.concatenate([np.linspace(-9, -3, 20), np.linspace(2, 7, 12)])
        z = np.stack([s, -s], axis=1)
        y = np.array([1] * 20 + [0] * 12)
        ds = make_logit_dataset(z, y)
        bins = fit_imax(ds, num_bins=2)
        # pooled one-vs-rest targets are balanced by construction; the
        # separable case saturates their entropy, ln 2
        assert bins.mi[0] == pytest.approx(math.log(2.0), abs=1e-9)
        # positives sit at log-odds >= 4, negatives at <= -4
        assert -4 < bins.boundaries[0][0] < 4

    def test_matches_exhaustive_search_small(self):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(12, 30))
            s = rng.normal(0, 2, n)
            t = (rng.uniform(size=n) < 1 / (1 + np.exp(-s))).astype(float)
            if t.sum() in (0, n):
                continue
            for num_bins in (2, 3):
                _, mi, _ = _coordinate_ascent(s, t, num_bins)
                assert mi == pytest.approx(best_mi_exhaustive(s, t, num_bins), abs=1e-9)

    def test_mi_never_decreases_across_sweeps(self, rng):
        for _ in range(10):
            n = int(rng.integers(30, 120))
            s = rng.normal(0, 3, n)
            t = (rng.uniform(size=n) < 1 / (1 + np.exp(-s / 2))).astype(float)
            _, _, sweep_mis = _coordinate_ascent(s, t, 6)
            assert np.all(np.diff(sweep_mis) >= -1e-12)

    def test_constant_targets_zero_information(self, rng):
        # degenerate binning problem: any boundary placement carries zero
        # information, so the ascent returns the equal-mass start
        s = np.sort(rng.normal(0, 2, 30))
        t = np.zeros(30)
        boundaries, mi, trace = _coordinate_ascent(s, t, 3)
        assert mi == 0.0 and trace == [0.0]
        sizes = np.bincount(np.searchsorted(boundaries, s), minlength=3)
        assert sizes.tolist() == [10, 10, 10]

    def test_apply_matches_manual_lookup(self, rng):
        z, y = calibrated_logits(rng, 80, 3, scale=2.0)
        ds = make_logit_dataset(z, y)
        bins = fit_imax(ds, num_bins=4)
        sample = rng.normal(0, 2, (5, 3))
        expected = np.empty((5, 3))
        for i in range(5):
            for cls in range(3):
                s = one_vs_rest_log_odds(sample[i][None, :], cls)[0]
                b = int(np.searchsorted(np.array(bins.boundaries[cls]), s))
                expected[i, cls] = bins.representatives[cls][b]
        expected /= expected.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(bins.apply_matrix(sample), expected, atol=1e-12)

    def test_identical_inputs_identical_outputs(self, rng):
        z, y = calibrated_logits(rng, 60, 3)
        bins = fit_imax(make_logit_dataset(z, y), num_bins=5)
        row = rng.normal(0, 2, (1, 3))
        np.testing.assert_array_equal(bins.apply_matrix(row), bins.apply_matrix(row.copy()))

    def test_equal_representatives_uniform_output(self):
        bins = IMaxBins(k=3, num_bins=2, boundaries=((0.0,),) * 3,
                        representatives=((0.4, 0.4),) * 3, fit_split=ENV1_VALID)
        p = bins.apply_matrix(np.array([[5.0, -2.0, 1.0]]))
        np.testing.assert_allclose(p, 1 / 3)

    def test_few_distinct_values_reduces_bins_with_warning(self):
        z = np.array([[1.0, 0.0]] * 10 + [[0.0, 1.0]] * 10)
        y = np.array([0] * 10 + [1] * 10)
        ds = make_logit_dataset(z, y)
        with pytest.warns(UserWarning, match="reducing bins"):
            bins = fit_imax(ds, num_bins=8)
        assert all(len(b) + 1 <= 2 for b in bins.boundaries)

    def test_refit_bit_identical(self, rng):
        z, y = calibrated_logits(rng, 100, 4, scale=1.5)
        ds = make_logit_dataset(z, y)
        a, b = fit_imax(ds, 6), fit_imax(ds, 6)
        assert a.boundaries == b.boundaries and a.representatives == b.representatives

    def test_representative_invariants_enforced(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            IMaxBins(k=2, num_bins=3, boundaries=((1.0, 0.5),) * 2,
                     representatives=((0.1, 0.2, 0.3),) * 2)
        with pytest.raises(ValueError, match="non-decreasing"):
            IMaxBins(k=2, num_bins=2, boundaries=((0.0,),) * 2,
                     representatives=((0.6, 0.2),) * 2)

    def test_accuracy_change_bounded(self, rng):
        z, y = calibrated_logits(rng, 800, 5, scale=2.5)
        ds = make_logit_dataset(z, y)
        bins = fit_imax(ds, num_bins=10)
        z2, y2 = calibrated_logits(np.random.default_rng(99), 800, 5, scale=2.5)
        base_acc = float((softmax(z2).argmax(1) == y2).mean())
        imax_acc = float((bins.apply_matrix(z2).argmax(1) == y2).mean())
        assert abs(imax_acc - base_acc) < 0.02


# ---------------------------------------------------------------------------
# latent-GP scaling


class TestGpScaling:
    def test_prior_only_is_plain_softmax(self, rng):
        z, y = calibrated_logits(rng, 300, 5, scale=2.0)
        ds = make_logit_dataset(z, y)
        gp = fit_gp_scaling(ds, steps=0, init="prior")
        sample = z[:50]
        p = gp.apply_matrix(sample, num_samples=1000)
        np.testing.assert_allclose(p, softmax(sample), atol=0.01)

    def test_nll_close_to_temperature_solution(self, rng):
        z, y = calibrated_logits(rng, 500, 5, scale=3.0)
        ds = make_logit_dataset(z, y)
        gp = fit_gp_scaling(ds, steps=400, seed=0)
        ts = fit_temperature(ds)
        nll_gp = compute_nll(gp.apply_matrix(z), y)
        nll_ts = compute_nll(ts.apply_matrix(z), y)
        assert nll_gp <= nll_ts + 1e-3
        assert nll_gp <= nll_ts * 1.02  # within 2% of the T=3 solution

    def test_argmax_always_preserved(self, rng, small_valid_ds):
        gp = fit_gp_scaling(small_valid_ds, steps=100, seed=3)
        z = rng.normal(0, 4, (1000, 5))
        p = gp.apply_matrix(z)
        assert np.array_equal(p.argmax(1), z.argmax(1))

    def test_zero_variance_single_sample_deterministic(self, small_valid_ds):
        gp = fit_gp_scaling(small_valid_ds, steps=0)
        frozen = GpScalingMap(
            k=gp.k, knots=gp.knots, mean=gp.mean,
            log_std=np.full(len(gp.knots), -60.0),  # exp(-60) ~ 0 posterior std
            length_scale=gp.length_scale, signal_var=gp.signal_var,
            num_samples=1, seed=0, standardize_mean=gp.standardize_mean,
            standardize_std=gp.standardize_std,
        )
        z = np.array([[1.0, 0.0, -1.0, 0.5, 2.0]])
        a = frozen.apply_matrix(z, seed=1)
        b = frozen.apply_matrix(z, seed=2)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_monte_carlo_noise_shrinks_with_samples(self, rng, small_valid_ds):
        gp = fit_gp_scaling(small_valid_ds, steps=50, seed=0, init_std=0.1)
        z = rng.normal(0, 2, (100, 5))

        def spread(num_samples):
            outs = np.stack([gp.apply_matrix(z, num_samples=num_samples, seed=s)
                             for s in range(12)])
            return outs.std(axis=0).mean()

        s_small, s_big = spread(8), spread(32)
        assert s_big < s_small  # ~1/sqrt(S) shrinkage
        assert s_big < s_small / 1.4

    def test_too_many_knots_rejected(self):
        z = np.repeat(np.array([[1.0, 0.0, -1.0]]), 30, axis=0)
        y = np.array([0, 1, 2] * 10)
        ds = make_logit_dataset(z, y)
        with pytest.raises(ValueError, match="knots"):
            fit_gp_scaling(ds, num_knots=20)

    def test_monotone_projection_sorted(self, small_valid_ds):
        gp = fit_gp_scaling(small_valid_ds, steps=0, init_std=0.5)
        v = gp.sample_knot_values(np.random.default_rng(0), 20)
        assert np.all(np.diff(v, axis=1) >= 0)

    def test_fit_determinism(self, small_valid_ds):
        a = fit_gp_scaling(small_valid_ds, steps=60, seed=5)
        b = fit_gp_scaling(small_valid_ds, steps=60, seed=5)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.log_std, b.log_std)


# ---------------------------------------------------------------------------
# serialization


class TestSerialization:
    def test_all_kinds_round_trip(self, tmp_path, small_valid_ds):
        z = small_valid_ds.logit_matrix()
        fitted = [
            fit_temperature(small_valid_ds),
            fit_imax(small_valid_ds, num_bins=6),
            fit_gp_scaling(small_valid_ds, steps=30, seed=2),
        ]
        for cal in fitted:
            path = tmp_path / f"{cal.kind}.json"
            save_calibrator(cal, path)
            back = load_calibrator(path)
            assert type(back) is type(cal)
            assert back.k == cal.k and back.fit_split == cal.fit_split
            np.testing.assert_array_equal(back.apply_matrix(z[:20]), cal.apply_matrix(z[:20]))

    def test_kind_field_in_json(self, tmp_path, small_valid_ds):
        import json

        ts = fit_temperature(small_valid_ds)
        save_calibrator(ts, tmp_path / "ts.json")
        obj = json.loads((tmp_path / "ts.json").read_text())
        assert obj["kind"] == "ts" and obj["K"] == 5

    def test_unknown_kind_rejected(self):
        from speccal.calibrators import calibrator_from_jsonable

        with pytest.raises(ValueError, match="kind"):
            calibrator_from_jsonable({"kind": "mystery"})
