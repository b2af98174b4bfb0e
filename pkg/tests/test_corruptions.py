import numpy as np
import pytest

from speccal.core import ENV1_TEST, LabeledDataset
from speccal.corruptions import (
    KINDS,
    PARAMS,
    SEVERITIES,
    CorruptionSpec,
    corrupt,
    corrupt_dataset,
    severity_sweep,
)
from speccal.simulate import DB_CEIL, DB_FLOOR, SpectrumROI


def make_roi(rng=None, sample_id="roi-0", level=-20.0):
    rng = rng or np.random.default_rng(0)
    mag = np.clip(rng.normal(level, 8.0, (32, 32)), DB_FLOOR, DB_CEIL)
    return SpectrumROI(sample_id, 2, mag.astype(np.float32), 1, 0, 12.0)


class TestCorruptOperator:
    def test_severity_zero_identity(self):
        roi = make_roi()
        out = corrupt(roi, CorruptionSpec("speckle", 0, seed=1))
        assert out is roi

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown corruption kind"):
            CorruptionSpec("melt", 1)
        with pytest.raises(ValueError, match="severity"):
            CorruptionSpec("speckle", 4)

    @pytest.mark.parametrize("severity,offset", [(1, 3.0), (2, 6.0), (3, 12.0)])
    def test_attenuation_closed_form(self, severity, offset):
        roi = make_roi(level=-10.0)
        out = corrupt(roi, CorruptionSpec("attenuation", severity))
        expected = np.clip(roi.magnitude.astype(np.float64) - offset, DB_FLOOR, DB_CEIL)
        np.testing.assert_allclose(out.magnitude, expected, atol=1e-4)

    @pytest.mark.parametrize("severity,frac", [(1, 0.05), (2, 0.15), (3, 0.30)])
    def test_bin_dropout_exact_count(self, severity, frac):
        roi = make_roi(level=-5.0)
        out = corrupt(roi, CorruptionSpec("bin-dropout", severity))
        dropped = int(np.sum(out.magnitude == DB_FLOOR))
        assert dropped == round(frac * 32 * 32)

    def test_bin_dropout_nested_across_severity(self):
        roi = make_roi(level=-5.0)
        cells = [set(zip(*np.where(corrupt(roi, CorruptionSpec("bin-dropout", s)).magnitude == DB_FLOOR)))
                 for s in SEVERITIES]
        assert cells[0] <= cells[1] <= cells[2]

    def test_additive_noise_power_additivity(self):
        # on a noise-floor-only ROI the mean power should rise by the
        # injected fraction; Monte-Carlo over 100 trials
        rng = np.random.default_rng(7)
        frac = PARAMS["additive-noise"][2]["frac"]
        ratios = []
        for i in range(100):
            roi = make_roi(np.random.default_rng(1000 + i), sample_id=f"mc-{i}", level=-20.0)
            p_in = np.mean(10.0 ** (roi.magnitude.astype(np.float64) / 10.0))
            out = corrupt(roi, CorruptionSpec("additive-noise", 3, seed=3))
            p_out = np.mean(10.0 ** (out.magnitude.astype(np.float64) / 10.0))
            ratios.append(p_out / p_in)
        assert np.mean(ratios) == pytest.approx(1.0 + frac, rel=0.05)

    @pytest.mark.parametrize("kind", KINDS)
    def test_deterministic_and_metadata_preserving(self, kind):
        roi = make_roi()
        spec = CorruptionSpec(kind, 2, seed=9)
        a, b = corrupt(roi, spec), corrupt(roi, spec)
        assert np.array_equal(a.magnitude, b.magnitude)
        assert a.label == roi.label and a.sample_id == roi.sample_id
        assert a.magnitude.shape == roi.magnitude.shape
        assert (a.scene_id, a.frame_id, a.range_m) == (roi.scene_id, roi.frame_id, roi.range_m)

    @pytest.mark.parametrize("kind", KINDS)
    def test_severity_orders_mean_abs_change(self, kind):
        rng = np.random.default_rng(17)
        rois = [make_roi(rng, sample_id=f"p-{i}") for i in range(25)]
        changes = []
        for severity in SEVERITIES:
            spec = CorruptionSpec(kind, severity, seed=2)
            deltas = [np.abs(corrupt(r, spec).magnitude.astype(np.float64)
                             - r.magnitude.astype(np.float64)).mean() for r in rois]
            changes.append(np.mean(deltas))
        assert changes[0] <= changes[1] + 1e-9 and changes[1] <= changes[2] + 1e-9

    def test_params_dominate_componentwise(self):
        for kind in KINDS:
            for a, b in zip(PARAMS[kind], PARAMS[kind][1:]):
                for key in a:
                    assert b[key] >= a[key]

    def test_dataset_tagging(self):
        rois = tuple(make_roi(np.random.default_rng(i), sample_id=f"r{i}") for i in range(4))
        ds = LabeledDataset(rois, ENV1_TEST)
        out = corrupt_dataset(ds, CorruptionSpec("speckle", 3, seed=0))
        assert out.split_tag == "Corrupted(speckle,3)"
        assert out.sample_ids() == ds.sample_ids()


class TestSweepGuards:
    def test_rejects_calibrator_fitted_off_validation(self):
        class FakeCal:
            k = 7
            fit_split = ENV1_TEST

        rois = tuple(make_roi(np.random.default_rng(i), sample_id=f"r{i}") for i in range(3))
        test = LabeledDataset(rois, ENV1_TEST)
        with pytest.raises(ValueError, match="Env1-Valid"):
            severity_sweep({0: object()}, test, {"ts": {0: FakeCal()}})
