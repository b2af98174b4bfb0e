import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as npst

from speccal.core import (
    ENV1_TEST,
    ENV1_TRAIN,
    ENV1_VALID,
    OOD_LABEL,
    LabeledDataset,
    LogitRecord,
    check_prob_matrix,
    corrupted_tag,
    dumps_json17,
    is_valid_split_tag,
    load_logit_dataset,
    save_logit_dataset,
    softmax,
    split_disjointness_check,
)
from tests.conftest import make_logit_dataset


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])

    def test_closed_form(self):
        np.testing.assert_allclose(softmax([1.0, 0.0]), [0.73106, 0.26894], atol=1e-5)

    def test_large_logits_no_overflow(self):
        p = softmax([1000.0, 0.0])
        assert p[0] == pytest.approx(1.0)
        assert np.isfinite(p).all()

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            softmax([np.inf, 0.0])

    @given(npst.arrays(np.float64, st.integers(2, 10),
                       elements=st.floats(-1e4, 1e4, allow_nan=False)))
    def test_output_is_prob_vector(self, z):
        p = softmax(z)
        check_prob_matrix(p)
        top = np.sort(z)[-2:]
        if top[1] - top[0] > 1e-9:  # sub-epsilon gaps underflow to a tie
            assert np.argmax(p) == np.argmax(z)

    @given(
        npst.arrays(np.float64, st.integers(2, 8), elements=st.floats(-100, 100)),
        st.floats(-50, 50),
    )
    def test_shift_invariance(self, z, c):
        np.testing.assert_allclose(softmax(z + c), softmax(z), atol=1e-9)


class TestRecordsAndDatasets:
    def test_non_finite_logits_name_the_sample(self):
        with pytest.raises(ValueError, match="bad-one"):
            LogitRecord("bad-one", 0, np.array([np.nan, 1.0]))

    def test_duplicate_ids_rejected(self):
        r = LogitRecord("a", 0, np.array([1.0, 2.0]))
        with pytest.raises(ValueError, match="duplicate"):
            LabeledDataset((r, r), ENV1_VALID)

    def test_mixed_k_rejected(self):
        a = LogitRecord("a", 0, np.array([1.0, 2.0]))
        b = LogitRecord("b", 0, np.array([1.0, 2.0, 3.0]))
        with pytest.raises(ValueError, match="mixed"):
            LabeledDataset((a, b), ENV1_VALID)

    def test_label_range_checked(self):
        r = LogitRecord("a", 5, np.array([1.0, 2.0]))
        with pytest.raises(ValueError, match="label"):
            LabeledDataset((r,), ENV1_VALID)

    def test_ood_sentinel_allowed(self):
        r = LogitRecord("a", OOD_LABEL, np.array([1.0, 2.0]))
        ds = LabeledDataset((r,), "OOD")
        assert ds.labels()[0] == OOD_LABEL

    def test_records_immutable(self):
        r = LogitRecord("a", 0, np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            r.logits[0] = 5.0

    def test_split_tags(self):
        assert is_valid_split_tag(ENV1_TRAIN)
        assert is_valid_split_tag(corrupted_tag("speckle", 2))
        assert not is_valid_split_tag("Env3-Test")


class TestDisjointness:
    def test_disjoint_sets(self, rng):
        a = make_logit_dataset(rng.normal(size=(4, 3)), [0, 1, 2, 0], ENV1_TRAIN, prefix="a")
        b = make_logit_dataset(rng.normal(size=(4, 3)), [0, 1, 2, 0], ENV1_TEST, prefix="b")
        assert split_disjointness_check([a, b]) == set()

    def test_shared_id_reported(self, rng):
        a = make_logit_dataset(rng.normal(size=(2, 3)), [0, 1], ENV1_TRAIN, prefix="s1")
        recs = (LogitRecord("s17", 0, np.array([0.0, 1.0, 2.0])),)
        b = LabeledDataset(recs, ENV1_TEST)
        c = LabeledDataset((LogitRecord("s17", 1, np.array([1.0, 0.0, 2.0])),), ENV1_VALID)
        assert split_disjointness_check([a, b, c]) == {"s17"}

    def test_needs_two_datasets(self, rng):
        a = make_logit_dataset(rng.normal(size=(2, 3)), [0, 1])
        with pytest.raises(ValueError):
            split_disjointness_check([a])


class TestLogitSerialization:
    def test_round_trip_is_identity(self, rng, tmp_path):
        z = rng.normal(0, 5, (20, 4)) * 10.0 ** rng.integers(-3, 3, (20, 1))
        y = rng.integers(0, 4, 20)
        y[3] = OOD_LABEL
        ds = make_logit_dataset(z, y, ENV1_TEST, seed_id=3)
        path = tmp_path / "logits.csv"
        save_logit_dataset(ds, path, generator_seed=3)
        back = load_logit_dataset(path)
        assert back.split_tag == ds.split_tag
        assert back.sample_ids() == ds.sample_ids()
        assert np.array_equal(back.labels(), ds.labels())
        assert np.array_equal(back.seed_ids(), ds.seed_ids())
        # 17 significant digits keep float64 bit-exact
        assert np.array_equal(back.logit_matrix(), ds.logit_matrix())

    def test_header_checked(self, rng, tmp_path):
        ds = make_logit_dataset(rng.normal(size=(2, 3)), [0, 1])
        path = tmp_path / "logits.csv"
        save_logit_dataset(ds, path)
        text = path.read_text().replace("z_0", "w_0")
        path.write_text(text)
        with pytest.raises(ValueError, match="header"):
            load_logit_dataset(path)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_logit_dataset(tmp_path / "nope.csv")

    def test_json17_round_trips_floats(self, rng):
        import json

        vals = list(rng.normal(0, 1, 10) * 10.0 ** rng.integers(-300, 300, 10))
        text = dumps_json17({"v": vals})
        back = json.loads(text)["v"]
        assert back == [float(v) for v in vals]
