import itertools
import json

import numpy as np
import pytest

from sslora.data import (DatasetDimensionError, DatasetFormatError, DatasetHeaderError,
                         DomainDatasetSpec, generate, load_task, save_task)
from sslora.errors import ConfigurationError


def small(**kw):
    base = dict(num_domains=3, num_classes=4, input_dim=8, n_train=6, n_val=3, seed=11)
    base.update(kw)
    return DomainDatasetSpec(**base)


def test_noise_free_samples_sit_on_transformed_means():
    task = generate(small(noise_std=1e-9))
    for ds in task.train + task.val:
        q, b = task.rotations[ds.domain], task.biases[ds.domain]
        centres = task.means[ds.labels] @ q.T + b
        assert np.max(np.abs(ds.x - centres)) <= 1e-6


def test_identity_transforms_make_domains_identical_in_distribution():
    task = generate(small(identity_transforms=True, n_train=400, noise_std=0.5))
    for q, b in zip(task.rotations, task.biases):
        assert np.array_equal(q, np.eye(8)) and not b.any()
    # per-class empirical means agree across domains up to sampling noise
    bound = 5 * 0.5 * np.sqrt(2 / 400)
    for c in range(4):
        means = [ds.x[ds.labels == c].mean(axis=0) for ds in task.train]
        for m1, m2 in itertools.combinations(means, 2):
            assert np.max(np.abs(m1 - m2)) <= bound


def test_rotations_orthogonal_and_distances_preserved():
    task = generate(small())
    for q in task.rotations:
        assert np.max(np.abs(q.T @ q - np.eye(8))) <= 1e-10
        for i, j in itertools.combinations(range(4), 2):
            d0 = np.linalg.norm(task.means[i] - task.means[j])
            d1 = np.linalg.norm(q @ task.means[i] - q @ task.means[j])
            assert abs(d0 - d1) <= 1e-8


def test_class_balance():
    task = generate(small())
    for ds in task.train:
        assert np.array_equal(np.bincount(ds.labels), [6] * 4)
    for ds in task.val:
        assert np.array_equal(np.bincount(ds.labels), [3] * 4)


def test_least_squares_classifier_reaches_bayes_level():
    probe = generate(small(input_dim=16, num_classes=5, n_train=1, n_val=1))
    margin = min(np.linalg.norm(a - b) for a, b in itertools.combinations(probe.means, 2))
    task = generate(small(input_dim=16, num_classes=5, n_train=200, n_val=200,
                          noise_std=0.2 * margin))
    for tr, va in zip(task.train, task.val):
        design = np.hstack([tr.x, np.ones((len(tr), 1))])
        targets = np.eye(5)[tr.labels]
        coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
        pred = np.argmax(np.hstack([va.x, np.ones((len(va), 1))]) @ coef, axis=1)
        assert np.mean(pred == va.labels) >= 0.95


def test_generation_is_deterministic():
    a, b = generate(small()), generate(small())
    assert all(x.x.tobytes() == y.x.tobytes() for x, y in zip(a.train, b.train))
    c = generate(small(seed=12))
    assert not np.array_equal(a.train[0].x, c.train[0].x)


def test_invalid_spec():
    with pytest.raises(ConfigurationError):
        small(noise_std=0.0)


def test_save_load_round_trip_bit_exact(tmp_path):
    task = generate(small())
    save_task(task, tmp_path)
    manifest, train, val = load_task(tmp_path)
    assert manifest["D"] == 3 and manifest["C"] == 4 and manifest["input_dim"] == 8
    assert manifest["counts"] == {"train": 6, "val": 3}
    for orig, back in zip(task.train + task.val, train + val):
        assert orig.x.tobytes() == back.x.tobytes()
        assert np.array_equal(orig.labels, back.labels)
    header = (tmp_path / "domain0_train.csv").read_text().splitlines()[0]
    assert header == "domain,label," + ",".join(f"f{j}" for j in range(8))


def test_manifest_counts_cross_check(tmp_path):
    save_task(generate(small()), tmp_path)
    _, train, val = load_task(tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    total = sum(len(ds) for ds in train + val)
    assert total == manifest["D"] * manifest["C"] * (manifest["counts"]["train"]
                                                     + manifest["counts"]["val"])
    manifest["counts"]["val"] = 4
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetDimensionError):
        load_task(tmp_path)


def test_truncated_file_is_header_error(tmp_path):
    save_task(generate(small()), tmp_path)
    path = tmp_path / "domain1_val.csv"
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(DatasetHeaderError):
        load_task(tmp_path)


def test_row_cut_mid_way_is_dimension_error(tmp_path):
    save_task(generate(small()), tmp_path)
    path = tmp_path / "domain0_train.csv"
    text = path.read_text()
    path.write_text(text[: len(text) - 30])
    with pytest.raises(DatasetFormatError):
        load_task(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetHeaderError):
        load_task(tmp_path)
