import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline

from rvhash import RvssdhHasher


def blob_images(n=120, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, n)
    base = np.zeros((3, 8, 8, 1))
    base[0, :3] = 1.0
    base[1, 3:6] = 1.0
    base[2, :, :4] = 0.7
    x = base[labels] + rng.normal(0, 0.08, (n, 8, 8, 1))
    return x, labels + 5   # offset labels: estimator must map them back


def fast_hasher(**kw):
    defaults = dict(
        n_clusters=2, code_bits=16, d1=16, d2=16, epochs=15,
        learning_rate=0.02, random_state=0,
    )
    defaults.update(kw)
    return RvssdhHasher(**defaults)


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = fast_hasher()
        params = est.get_params()
        assert params["n_clusters"] == 2 and params["code_bits"] == 16
        est.set_params(code_bits=24)
        assert est.code_bits == 24

    def test_clone(self):
        est = fast_hasher(loss_beta=0.5)
        twin = clone(est)
        assert twin.loss_beta == 0.5
        assert not hasattr(twin, "params_")

    def test_not_fitted_error(self):
        with pytest.raises(NotFittedError):
            fast_hasher().transform(np.zeros((1, 8, 8, 1)))


class TestFitTransformPredict:
    def test_end_to_end(self):
        x, y = blob_images()
        est = fast_hasher().fit(x, y)
        codes = est.transform(x)
        assert codes.shape == (len(x), 16) and codes.dtype == np.uint8
        assert set(np.unique(codes)) <= {0, 1}
        cont = est.hash_continuous(x)
        assert np.all((cont > 0) & (cont < 1))
        np.testing.assert_array_equal(codes, (cont >= 0.5).astype(np.uint8))
        preds = est.predict(x)
        assert set(np.unique(preds)) <= {5, 6, 7}
        assert est.score(x, y) >= 0.9

    def test_determinism(self):
        x, y = blob_images()
        a = fast_hasher().fit(x, y).transform(x)
        b = fast_hasher().fit(x, y).transform(x)
        np.testing.assert_array_equal(a, b)

    def test_grayscale_3d_input_accepted(self):
        x, y = blob_images()
        est = fast_hasher(epochs=2).fit(x[..., 0], y)
        assert est.transform(x[..., 0]).shape == (len(x), 16)

    def test_feature_vectors_via_input_kind(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(60, 12)).astype(np.float64)
        y = (x[:, 0] > 0).astype(int)
        est = fast_hasher(input_kind="features", epochs=4, d1=8, d2=8).fit(x, y)
        assert est.transform(x).shape == (60, 16)

    def test_shape_mismatch_after_fit(self):
        x, y = blob_images()
        est = fast_hasher(epochs=2).fit(x, y)
        with pytest.raises(ValueError, match="differs from fitted"):
            est.transform(np.zeros((2, 9, 9, 1)))

    def test_bad_label_vector(self):
        x, _ = blob_images()
        with pytest.raises(Exception):
            fast_hasher().fit(x, np.zeros((len(x), 2)))

    def test_real_variant_transform_returns_vectors(self):
        x, y = blob_images()
        est = fast_hasher(variant="backbone_only", epochs=2).fit(x, y)
        out = est.transform(x)
        assert out.dtype != np.uint8 and out.shape[1] == 2 * 2 * 64

    def test_validation_fraction_logs_top1(self):
        x, y = blob_images()
        est = fast_hasher(epochs=3, validation_fraction=0.2).fit(x, y)
        assert all(np.isfinite(s.val_top1) for s in est.history_)


class TestPipelineCompat:
    def test_pipeline_fit_transform(self):
        x, y = blob_images()
        pipe = Pipeline([("hash", fast_hasher(epochs=3))])
        codes = pipe.fit(x, y).transform(x)
        assert codes.shape == (len(x), 16)
