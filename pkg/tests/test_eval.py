import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saeda import eval as E
from saeda.datagen import Dataset
from saeda.model import AutoencoderSpec, HeadSpec, build_adaptation_model

import oracles


def test_perfect_classification():
    y = np.array([0, 1, 2, 2, 1])
    acc, conf = E.classification_metrics(y, y, 3)
    assert acc == 1.0
    assert np.array_equal(conf, np.diag([1, 2, 2]))


def test_constant_prediction_uniform_truth():
    y = np.repeat(np.arange(4), 5)
    acc, conf = E.classification_metrics(y, np.zeros_like(y), 4)
    assert acc == 0.25
    assert conf[:, 0].tolist() == [5, 5, 5, 5]


def test_label_out_of_range():
    with pytest.raises(E.MetricError):
        E.classification_metrics([0, 4], [0, 1], 4)
    with pytest.raises(E.MetricError):
        E.classification_metrics([0, 1], [0, -1], 4)


def test_accuracy_matches_mismatch_count():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, c = int(rng.integers(1, 50)), int(rng.integers(2, 9))
        yt, yp = rng.integers(0, c, n), rng.integers(0, c, n)
        acc, conf = E.classification_metrics(yt, yp, c)
        assert acc == (n - sum(a != b for a, b in zip(yt, yp))) / n
        assert conf.sum(axis=1).tolist() == np.bincount(yt, minlength=c).tolist()
        assert acc == np.trace(conf) / n


def test_r_squared_examples():
    assert E.r_squared([1, 2, 3], [1, 2, 3]) == 1.0
    y = np.array([3.0, 1.0, 8.0])
    assert E.r_squared(y, np.full(3, y.mean())) == pytest.approx(0.0, abs=1e-15)
    assert E.r_squared([0, 2, 4], [0, 2, 3]) == pytest.approx(0.875)
    with pytest.raises(E.MetricError):
        E.r_squared([2, 2, 2], [1, 2, 3])
    with pytest.raises(E.MetricError):
        E.r_squared([1], [1])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, 30, elements=st.floats(-1e3, 1e3)))
def test_r_squared_bounded(y, noise):
    if np.ptp(y) < 1e-6:
        return
    pred = y + noise[: len(y)]
    r2 = E.r_squared(y, pred)
    assert r2 <= 1.0
    assert r2 == pytest.approx(oracles.r_squared(y, pred), rel=1e-9, abs=1e-9)
    ss_res = np.sum((y - pred) ** 2)
    if ss_res == 0:
        assert r2 == 1.0
    elif ss_res / np.sum((y - y.mean()) ** 2) > 1e-12:  # above float resolution
        assert r2 < 1.0


def test_regression_metrics_mse():
    r2, mse = E.regression_metrics([0, 2, 4], [0, 2, 3])
    assert r2 == pytest.approx(0.875) and mse == pytest.approx(1 / 3)


def _model(seed=0):
    return build_adaptation_model(AutoencoderSpec((8, 8, 1), 6), AutoencoderSpec((8, 8, 1), 6), HeadSpec(), seed=seed)


def _ds(seed, n=12, classes=3):
    rng = np.random.default_rng(seed)
    return Dataset(rng.uniform(size=(n, 8, 8, 1)), "source", labels=np.arange(n) % classes)


def test_identical_encoders_identical_data_matched_zero():
    m = _model()
    m.target_ae = m.source_ae
    d = _ds(0)
    matched, mismatched = E.alignment_diagnostic(m, d, d)
    assert matched == 0.0 and mismatched > 0


def test_diagnostic_symmetric_under_swap():
    rng = np.random.default_rng(3)
    fs, ft = rng.normal(size=(20, 5)), rng.normal(size=(15, 5))
    ys, yt = np.arange(20) % 4, np.arange(15) % 4
    assert E.centroid_discrepancy(fs, ys, ft, yt) == pytest.approx(E.centroid_discrepancy(ft, yt, fs, ys), rel=1e-12)


def test_diagnostic_hand_example():
    fs = np.array([[0.0, 0.0], [2.0, 0.0]])
    ft = np.array([[1.0, 0.0], [2.0, 0.0]])
    matched, mismatched = E.centroid_discrepancy(fs, [0, 1], ft, [0, 1])
    assert matched == pytest.approx(0.5)  # (1 + 0) / 2
    assert mismatched == pytest.approx(2.5)  # (4 + 1) / 2


def test_diagnostic_missing_class():
    with pytest.raises(E.MetricError):
        E.centroid_discrepancy(np.zeros((3, 2)), [0, 1, 2], np.zeros((2, 2)), [0, 1])
    with pytest.raises(E.MetricError):
        E.alignment_diagnostic(_model(), _ds(0), Dataset(np.zeros((3, 8, 8, 1)), "target_unlabeled"))


def test_projection_isometry_in_two_dimensions():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 2))
    x -= x.mean(axis=0)
    y = E.project_2d(x)
    d = lambda a: np.linalg.norm(a[:, None] - a[None], axis=-1)
    np.testing.assert_allclose(d(x), d(y), atol=1e-10)


def test_projection_sign_convention_deterministic():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(10, 6))
    a, b = E.project_2d(x), E.project_2d(x.copy())
    assert a.tobytes() == b.tobytes()
    # Flipping input sign keeps the output identical thanks to the loading convention.
    flipped = E.project_2d(-x)
    np.testing.assert_allclose(np.abs(flipped), np.abs(a), atol=1e-10)


def test_export_embedding_rows_and_errors(tmp_path):
    m, d = _model(), _ds(1, n=9)
    xy = E.export_embedding(m, d)
    assert xy.shape == (9, 2)
    with pytest.raises(E.MetricError):
        E.export_embedding(m, d.subset([0, 1]))
    with pytest.raises(E.MetricError):
        E.export_embedding(m, d, method="tsne")
    E.write_embedding_csv(tmp_path / "e.csv", xy, d.labels, ["a", "b", "c"])
    rows = list(csv.DictReader(open(tmp_path / "e.csv")))
    assert len(rows) == 9 and set(rows[0]) == {"x", "y", "label"}
    assert rows[0]["label"] == "a"


def test_cluster_separation():
    coords = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], float)
    assert E.cluster_separation(coords, [0, 0, 1, 1]) == pytest.approx(20.0)


def test_report_files(tmp_path):
    rep = E.EvalReport(task="classification", num_samples=4, accuracy=0.5, confusion=[[1, 1], [1, 1]],
                       class_names=["a", "b"], embedding=np.zeros((4, 2)), embedding_labels=np.array([0, 1, 0, 1]))
    E.write_report(tmp_path, rep)
    assert {p.name for p in tmp_path.iterdir()} == {"report.json", "confusion.csv", "embedding.csv"}
    assert (tmp_path / "confusion.csv").read_text().splitlines()[0] == "true\\pred,a,b"
