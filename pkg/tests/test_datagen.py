import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saeda import storage
from saeda.datagen import (
    SANDPAPER_ROUGHNESS_UM,
    Dataset,
    DatasetConfig,
    DatasetConfigError,
    Split,
    Task,
    generate_paired,
    load_dataset,
    save_dataset,
)


def small(**kw):
    base = dict(num_classes=3, samples_per_class_source=6, samples_per_class_target_labeled=2,
                samples_per_class_target_unlabeled=4, source_shape=(8, 8, 1), target_shape=(4, 8, 2))
    base.update(kw)
    return DatasetConfig(**base)


def test_zero_noise_zero_jitter_collapses_each_class():
    cfg = small(noise_sigma_source=0, noise_sigma_target=0, latent_jitter=0)
    src, tl, tu, truth = generate_paired(cfg)
    for d, labels in ((src, src.labels), (tl, tl.labels), (tu, np.array(truth["labels"]))):
        for k in range(cfg.num_classes):
            block = d.samples[labels == k]
            assert np.all(block == block[0])


def test_regression_targets_follow_roughness_schedule():
    src, tl, tu, truth = generate_paired(small(num_classes=5, task="regression"))
    per_class = {int(k): float(src.targets[src.labels == k][0]) for k in range(5)}
    assert [per_class[k] for k in range(5)] == [59.5, 30.0, 23.1, 15.1, 9.2]
    assert SANDPAPER_ROUGHNESS_UM == (59.5, 30.0, 23.1, 15.1, 9.2)
    assert tu.targets is None and tu.labels is None
    assert truth["targets"] == [SANDPAPER_ROUGHNESS_UM[k] for k in truth["labels"]]
    assert src.class_names[0] == "grit_120"


def test_regression_rejects_too_many_classes():
    with pytest.raises(DatasetConfigError, match="schedule slots"):
        small(num_classes=6, task="regression")


@pytest.mark.parametrize("bad", [dict(num_classes=1), dict(samples_per_class_source=0),
                                 dict(source_shape=(0, 4, 1)), dict(noise_sigma_target=-0.1),
                                 dict(seed=-1), dict(target_shape=(4, 4))])
def test_invalid_configs(bad):
    with pytest.raises(DatasetConfigError):
        small(**bad)


def test_generation_is_deterministic():
    a = generate_paired(small(seed=123))
    b = generate_paired(small(seed=123))
    for da, db in zip(a[:3], b[:3]):
        assert da == db
        assert da.samples.tobytes() == db.samples.tobytes()
    assert a[3] == b[3]
    c = generate_paired(small(seed=124))
    assert not np.array_equal(a[0].samples, c[0].samples)


def test_splits_and_shapes():
    cfg = small()
    src, tl, tu, truth = generate_paired(cfg)
    assert src.split is Split.SOURCE and tl.split is Split.TARGET_LABELED and tu.split is Split.TARGET_UNLABELED
    assert src.samples.shape == (18, 8, 8, 1)
    assert tl.samples.shape == (6, 4, 8, 2)
    assert tu.samples.shape == (12, 4, 8, 2)
    assert tu.labels is None and len(truth["labels"]) == 12
    assert src.samples.dtype == np.float32


def test_separability_oracle_zero_noise():
    """Nearest-centroid on raw source samples is perfect without noise."""
    for seed in range(5):
        cfg = DatasetConfig(seed=seed, samples_per_class_source=20, noise_sigma_source=0,
                            noise_sigma_target=0, latent_jitter=0)
        src = generate_paired(cfg)[0]
        x = src.samples.reshape(len(src), -1).astype(np.float64)
        cents = np.stack([x[src.labels == k].mean(0) for k in range(cfg.num_classes)])
        pred = ((x[:, None] - cents[None]) ** 2).sum(-1).argmin(1)
        assert np.mean(pred == src.labels) == 1.0


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2**64 - 1), st.floats(0, 0.5), st.sampled_from(["classification", "regression"]))
def test_generated_values_clipped(classes, seed, sigma, task):
    cfg = small(num_classes=classes, seed=seed, noise_sigma_source=sigma, noise_sigma_target=sigma, task=task)
    for d in generate_paired(cfg)[:3]:
        assert d.samples.min() >= 0.0 and d.samples.max() <= 1.0
        assert np.isfinite(d.samples).all()


# -- persistence --------------------------------------------------------------------------


def test_round_trip(tmp_path):
    for d in generate_paired(small(task="regression"))[:3]:
        save_dataset(d, tmp_path / d.split.value)
        back = load_dataset(tmp_path / d.split.value)
        assert back == d
        assert back.samples.tobytes() == d.samples.tobytes()


def test_manifest_layout(tmp_path):
    d = generate_paired(small())[0]
    save_dataset(d, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("format_version", "split", "num_samples", "shape", "dtype", "labels", "targets", "class_names"):
        assert key in m
    assert m["format_version"] == 1 and m["dtype"] == "f32le"
    raw = (tmp_path / "samples.f32").read_bytes()
    assert np.array_equal(np.frombuffer(raw, dtype="<f4").reshape(d.samples.shape), d.samples)


def test_truncated_block_is_shape_mismatch(tmp_path):
    d = Dataset(samples=np.random.default_rng(0).uniform(size=(10, 4, 4, 1)), split="source",
                labels=np.arange(10) % 2)
    save_dataset(d, tmp_path)
    blob = (tmp_path / "samples.f32").read_bytes()
    (tmp_path / "samples.f32").write_bytes(blob[: 9 * 16 * 4])
    with pytest.raises(storage.ShapeMismatchError):
        load_dataset(tmp_path)


def test_num_samples_disagreeing_with_block(tmp_path):
    d = Dataset(samples=np.zeros((9, 4, 4, 1)), split="source")
    save_dataset(d, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["num_samples"] = 10
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(storage.ShapeMismatchError):
        load_dataset(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(storage.MissingManifestError):
        load_dataset(tmp_path)


def test_unknown_format_version(tmp_path):
    save_dataset(Dataset(samples=np.zeros((2, 4, 4, 1)), split="source"), tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["format_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(storage.FormatVersionError):
        load_dataset(tmp_path)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(samples=np.zeros((3, 4, 4, 1)), split="source", labels=[0, 1])
    with pytest.raises(ValueError):
        Dataset(samples=np.zeros((3, 4, 4)), split="source")


def test_config_dict_round_trip():
    cfg = small(task=Task.REGRESSION, num_classes=4)
    assert DatasetConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
