import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from common import AssumptionViolated, InvalidInput, TooLarge
from numerics import rotation, spectral_norm
from synthesis import synthesize
from sysmodel import random_neutral_system
from topology import Topology, random_topology
from verify import (
    ProjectionSequence,
    check_partition_identities,
    check_phi_expansion,
    check_phi_limit,
    check_window_invariance,
    enumerate_m,
    lemma2_alpha,
    omega_labels,
    random_observable_pair,
    recurrence_m,
    run_suite,
)

RING3 = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
Q_ROT = rotation(1.0)
H_POS = np.array([[1.0, 0.0]])


# --- 收缩常数 α ---

def test_alpha_rotation_position():
    assert lemma2_alpha(Q_ROT, H_POS) < 1.0


def test_alpha_unobservable_pair():
    with pytest.raises(AssumptionViolated):
        lemma2_alpha(np.eye(2), H_POS)
    assert lemma2_alpha(np.eye(2), H_POS, strict=False) == pytest.approx(1.0, abs=1e-15)


def test_alpha_full_measurement_is_zero():
    assert lemma2_alpha(Q_ROT, np.eye(2)) == pytest.approx(0.0, abs=1e-15)


def test_projection_sequence_invariants():
    seq = ProjectionSequence.build(rotation(0.7), H_POS, 12)
    assert len(seq.p) == len(seq.v) == 12
    assert seq.defect() <= 1e-12
    # P_i = Q^{iT}HᵀHQ^i
    q3 = np.linalg.matrix_power(rotation(0.7), 3)
    np.testing.assert_allclose(seq.p[3], q3.T @ H_POS.T @ H_POS @ q3, atol=1e-14)


# --- M_{ℓ,k} ---

def _from_label(seq, label):
    # "V3V2P1P0" → V₃V₂P₁P₀
    out = np.eye(seq.n)
    for kind, index in zip(label[::2], label[1::2]):
        out = out @ (seq.p if kind == "P" else seq.v)[int(index)]
    return out


def test_enumerate_m_examples():
    seq = ProjectionSequence.build(Q_ROT, H_POS, 4)
    np.testing.assert_allclose(enumerate_m(Q_ROT, H_POS, 0, 4), seq.v_window(0, 4), atol=1e-15)
    np.testing.assert_allclose(enumerate_m(Q_ROT, H_POS, 2, 2), seq.p[1] @ seq.p[0], atol=1e-15)

    labels = omega_labels(2, 4)
    assert len(labels) == 6 and labels[0] == "V3V2P1P0"
    expected = sum(_from_label(seq, label) for label in labels)
    np.testing.assert_allclose(enumerate_m(Q_ROT, H_POS, 2, 4), expected, atol=1e-14)


def test_enumeration_bounds():
    with pytest.raises(TooLarge):
        enumerate_m(Q_ROT, H_POS, 0, 15)
    with pytest.raises(TooLarge):
        check_partition_identities(Q_ROT, H_POS, 15)
    with pytest.raises(InvalidInput):
        enumerate_m(Q_ROT, H_POS, 3, 2)


def test_alpha_equals_first_family_member():
    q, h = random_observable_pair(4, 1, np.random.default_rng(3))
    assert lemma2_alpha(q, h) == spectral_norm(enumerate_m(q, h, 0, 4))


def test_recurrence_matches_enumeration():
    seq = ProjectionSequence.build(Q_ROT, H_POS, 6)
    family = recurrence_m(seq, 6)
    assert len(family) == 7
    for ell, m in enumerate(family):
        np.testing.assert_allclose(m, enumerate_m(Q_ROT, H_POS, ell, 6), atol=1e-13)


@pytest.mark.parametrize("k", [1, 4])
def test_partition_identities_rotation(k):
    report = check_partition_identities(Q_ROT, H_POS, k)
    assert report.ok
    assert report.cardinalities == [math.comb(k, ell) for ell in range(k + 1)]
    assert report.omega["2" if k == 4 else "1"][0] == ("V3V2P1P0" if k == 4 else "P0")


def test_partition_identity_k1_is_complementary_pair():
    seq = ProjectionSequence.build(Q_ROT, H_POS, 1)
    m0, m1 = recurrence_m(seq, 1)
    np.testing.assert_allclose(m0 + m1, np.eye(2), atol=1e-15)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_partition_identities_random_pairs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    q, h = random_observable_pair(n, int(rng.integers(1, n + 1)), rng)
    report = check_partition_identities(q, h, int(rng.integers(0, 11)), seed=seed)
    assert report.ok, report.model_dump()


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_partition_identities_on_synthesized_pairs(seed):
    rng = np.random.default_rng(seed)
    n1 = int(rng.integers(1, 7))
    n = n1 + int(rng.integers(0, 3))
    sys = random_neutral_system(n, int(rng.integers(1, min(3, n1) + 1)), rng, n1=n1)
    synth = synthesize(sys)
    assert check_partition_identities(synth.q, synth.h, int(rng.integers(1, 11))).ok


# --- Φ(k, 0) ---

def test_phi_limit_single_node():
    report = check_phi_limit(Q_ROT, H_POS, Topology.from_matrix([[1.0]]), k_max=200)
    assert report.ok and report.final_deviation <= 1e-12


def test_phi_limit_full_measurement_is_lambda_power():
    topo = Topology.from_matrix(RING3)
    report = check_phi_limit(Q_ROT, np.eye(2), topo, k_max=50, checkpoint_every=10)
    # Φ(k, 0) = Λ^k ⊗ I，偏差等于 ‖Λ^k − 1rᵀ‖
    for k, deviation in report.checkpoints.items():
        lam_dev = spectral_norm(np.linalg.matrix_power(topo.lam, k) - np.outer(np.ones(3), topo.r))
        assert deviation == pytest.approx(lam_dev, abs=1e-12)


def test_phi_limit_rotation_ring():
    report = check_phi_limit(Q_ROT, H_POS, Topology.from_matrix(RING3), k_max=1000)
    assert report.assumptions_ok
    assert report.ok
    assert report.checkpoints[1000] <= report.checkpoints[100] <= report.checkpoints[0]


def test_phi_expansion_and_windows():
    topo = random_topology(4, np.random.default_rng(8))
    assert check_phi_expansion(Q_ROT, H_POS, topo, 8).ok
    window = check_window_invariance(Q_ROT, H_POS, 30)
    assert window.ok
    assert window.windows == 30
    assert window.alpha == pytest.approx(lemma2_alpha(Q_ROT, H_POS), abs=1e-15)


def test_unit_norm_non_increasing_for_doubly_stochastic():
    topo = Topology.from_matrix(RING3)
    rng = np.random.default_rng(6)
    q, h = random_observable_pair(3, 1, rng)
    seq = ProjectionSequence.build(q, h, 60)
    w = rng.standard_normal(3 * 3)
    w /= np.linalg.norm(w)
    previous = 1.0
    for tau in range(60):
        w = (np.kron(np.eye(3), seq.v[tau]) + np.kron(topo.lam, seq.p[tau])) @ w
        current = float(np.linalg.norm(w))
        assert current <= previous + 1e-12
        previous = current


# --- 套件 ---

def test_run_suite_small_corpus():
    report = run_suite("all", seed=1, cases=3, k=4, k_max=1000, max_n=3, max_workers=2)
    assert report.ok and report.failed == 0
    assert [(c.suite, c.index) for c in report.cases] == [
        (suite, i) for suite in ("lemma2", "partitions", "phi-limit") for i in range(3)
    ]
    assert report.model_dump()["ok"] is True


def test_run_suite_is_seeded():
    first = run_suite("lemma2", seed=4, cases=4)
    second = run_suite("lemma2", seed=4, cases=4, max_workers=1)
    assert [c.details["alpha"] for c in first.cases] == [c.details["alpha"] for c in second.cases]


def test_run_suite_with_unobservable_injection():
    report = run_suite("lemma2", seed=0, cases=2, inject_unobservable=True)
    assert not report.ok and report.failed == 1
    injected = report.cases[0]
    assert injected.index == -1
    assert injected.details["alpha"] == pytest.approx(1.0, abs=1e-15)


def test_run_suite_rejects_unknown_suite():
    with pytest.raises(InvalidInput):
        run_suite("theorem9")
