import json

import numpy as np
import pytest

from fltradeoff.errors import DimensionMismatch, EmptyDataset
from fltradeoff.flsim import (
    FLConfig,
    encrypted_payload,
    fedavg,
    measure_efficiency_reduction,
    measure_utility_loss,
    train_centralized,
    train_federated,
)
from fltradeoff.mechanisms import MechanismSpec
from fltradeoff.model import num_params

M = num_params(2, 4)


def test_fedavg_equal_sizes_is_mean():
    U = [np.array([1.0, 2.0]), np.array([3.0, -2.0]), np.array([0.5, 0.5])]
    np.testing.assert_array_equal(fedavg(U, [4, 4, 4]), np.mean(U, axis=0))
    np.testing.assert_allclose(fedavg(U[:2], [1, 3]), 0.25 * U[0] + 0.75 * U[1])


def test_single_client_equals_centralized(blobs):
    clients, _ = blobs
    cfg = FLConfig(num_clients=1, rounds=30, seed=4)
    res = train_federated(cfg, clients[:1])
    np.testing.assert_allclose(res.global_model, train_centralized(cfg, clients[0]), rtol=0, atol=1e-12)


def test_separable_accuracy(two_class_blobs):
    clients, test = two_class_blobs
    res = train_federated(FLConfig(rounds=50, seed=0), clients, test)
    assert res.utility >= 0.95


def test_determinism(blobs):
    clients, test = blobs
    cfg = FLConfig(rounds=10, seed=2, mechanism=MechanismSpec("randomization", 0.01, M, sigma0=[1.0] * M))
    a = train_federated(cfg, clients, test)
    b = train_federated(cfg, clients, test)
    assert a.utility == b.utility
    assert json.dumps(a.transcript.to_dict()) == json.dumps(b.transcript.to_dict())


def test_transcript_contents(blobs):
    clients, _ = blobs
    res = train_federated(FLConfig(rounds=3), clients)
    assert len(res.transcript.messages) == 6
    assert all(m.nbytes > 0 for m in res.transcript.messages)
    assert {m.client for m in res.transcript.for_client(1)} == {1}


def test_secret_sharing_is_bit_identical(blobs):
    clients, test = blobs
    base = train_federated(FLConfig(rounds=20, seed=1), clients, test)
    ss = MechanismSpec("secret_sharing", 5.0, M, delta=1.0)
    prot = train_federated(FLConfig(rounds=20, seed=1, mechanism=ss), clients, test)
    assert np.array_equal(base.global_model, prot.global_model)
    loss = measure_utility_loss(FLConfig(rounds=20), clients, ss, 3, test)
    assert loss.mean == 0.0 and loss.per_seed == [0.0, 0.0, 0.0]


def test_identity_parameters_give_zero_loss(blobs):
    clients, test = blobs
    for spec in (MechanismSpec("compression", 1.0, M), MechanismSpec("randomization", 0.0, M, sigma0=[1.0] * M)):
        assert measure_utility_loss(FLConfig(rounds=10), clients, spec, 3, test).mean == 0.0


def test_paillier_training_matches_plaintext(blobs):
    clients, test = blobs
    he = MechanismSpec("paillier", 1e6, M, delta=1.0)
    cfg = FLConfig(rounds=5, seed=3, paillier_prime_bits=64)
    base = train_federated(cfg, clients, test)
    prot = train_federated(cfg.replace(mechanism=he), clients, test)
    np.testing.assert_allclose(prot.global_model, base.global_model, atol=1e-8)
    assert all(encrypted_payload(m) for m in prot.transcript.messages)


def test_efficiency_reduction(blobs):
    clients, test = blobs
    cfg = FLConfig(rounds=3, paillier_prime_bits=64)
    assert measure_efficiency_reduction(cfg, clients, None, test).bytes == 0.0
    he = measure_efficiency_reduction(cfg, clients, MechanismSpec("paillier", 1e6, M, delta=1.0), test)
    # 128-bit modulus: 32-byte ciphertexts per 8-byte coordinate.
    assert he.bytes_protected / he.bytes_unprotected == pytest.approx(4.0)
    rnd = measure_efficiency_reduction(cfg, clients, MechanismSpec("randomization", 0.1, M, sigma0=[1.0] * M), test)
    assert rnd.bytes == 0.0
    sizes = [
        measure_efficiency_reduction(cfg, clients, MechanismSpec("compression", r, M), test).bytes_protected
        for r in (0.9, 0.5, 0.1)
    ]
    assert sizes[0] >= sizes[1] >= sizes[2]


def test_validation(blobs):
    clients, _ = blobs
    with pytest.raises(EmptyDataset):
        train_federated(FLConfig(), [])
    with pytest.raises(DimensionMismatch):
        train_federated(FLConfig(num_clients=3), clients)
    with pytest.raises(DimensionMismatch):
        train_federated(FLConfig(mechanism=MechanismSpec("compression", 0.5, 3)), clients)
    with pytest.raises(ValueError):
        FLConfig(learning_rate=0.0)
