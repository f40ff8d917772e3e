import numpy as np
import pytest

from fltradeoff import model as lr
from fltradeoff.data import (
    LEFTOVER_ID,
    ClientDataset,
    concat,
    load_csv,
    make_federated_blobs,
    save_csv,
)
from fltradeoff.errors import DimensionMismatch, EmptyDataset, PoolTooSmall


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    F, C = 3, 4
    for _ in range(20):
        w = rng.normal(size=lr.num_params(F, C))
        X = rng.normal(size=(5, F))
        y = rng.integers(0, C, size=5)
        g = lr.grad(w, X, y, C)
        h = 1e-5
        fd = np.array([
            (lr.loss(w + h * e, X, y, C) - lr.loss(w - h * e, X, y, C)) / (2 * h)
            for e in np.eye(w.size)
        ])
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


def test_per_example_grads_average_to_batch_grad():
    rng = np.random.default_rng(1)
    w = rng.normal(size=lr.num_params(2, 3))
    X, y = rng.normal(size=(6, 2)), rng.integers(0, 3, 6)
    np.testing.assert_allclose(lr.per_example_grads(w, X, y, 3).mean(axis=0), lr.grad(w, X, y, 3))


def test_model_shapes_and_guards():
    w = np.zeros(lr.num_params(2, 3))
    P = lr.predict_proba(w, np.zeros((4, 2)), 3)
    np.testing.assert_allclose(P, 1 / 3)
    with pytest.raises(DimensionMismatch):
        lr.grad(np.zeros(5), np.zeros((1, 2)), [0], 3)


def test_blobs_layout(blobs):
    clients, test = blobs
    assert len(clients) == 2 and len(test) == 400
    assert all(len(c) == 16 and c.n_classes == 4 for c in clients)
    assert clients[0].ids[0] == "c0-000"
    assert not set(clients[0].ids) & set(clients[1].ids)


def test_dataset_validation():
    with pytest.raises(EmptyDataset):
        ClientDataset(np.zeros((0, 2)), [], [])
    with pytest.raises(ValueError):
        ClientDataset(np.zeros((1, 2)), [0], [LEFTOVER_ID])
    with pytest.raises(ValueError):
        ClientDataset(np.zeros((1, 2)), [0], ["a"], candidate_pool=["b"])
    ds = ClientDataset(np.zeros((2, 2)), [0, 1], ["a", "b"])
    with pytest.raises(PoolTooSmall):
        ds.require_pool(3)
    assert ds.index_of("b") == 1


def test_csv_roundtrip(tmp_path, blobs):
    ds = blobs[0][0]
    path = tmp_path / "c0.csv"
    save_csv(path, ds)
    back = load_csv(path, n_classes=4)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.ids == ds.ids
    with pytest.raises(FileNotFoundError, match="dataset not found"):
        load_csv(tmp_path / "missing.csv")


def test_concat(blobs):
    both = concat(blobs[0])
    assert len(both) == 32 and both.n_classes == 4


def test_blobs_deterministic():
    a, _ = make_federated_blobs(2, seed=5)
    b, _ = make_federated_blobs(2, seed=5)
    np.testing.assert_array_equal(a[1].features, b[1].features)
