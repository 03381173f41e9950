import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from common import R_REFINE_BAND, AssumptionViolated, InvalidInput, NoConvergence, RankDeficientCU
from numerics import invariant_form_basis, rotation, spectral_norm
from simulate import ClosedLoop, Scenario, run
from synthesis import (
    SynthesisOptions,
    cesaro_average,
    reduce_outputs,
    solve_invariant_r,
    synthesize,
    synthesize_dual,
)
from sysmodel import LinearSystem, check_b_assumptions, random_neutral_system, well_conditioned_basis
from topology import Topology
from verify import lemma2_alpha

RING3 = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]


def _fr_residual(f, r):
    return spectral_norm(f.T @ r @ f - r) / spectral_norm(r)


# --- FᵀRF = R ---

def test_solve_invariant_r_orthogonal():
    f = rotation(0.9)
    r = solve_invariant_r(f)
    np.testing.assert_allclose(r, np.eye(2), atol=1e-14)
    assert _fr_residual(f, r) <= 1e-14


def test_solve_invariant_r_similar_to_rotation():
    s = np.diag([2.0, 1.0])
    f = s @ rotation(0.9) @ np.linalg.inv(s)
    r = solve_invariant_r(f)
    assert _fr_residual(f, r) <= 1e-12
    assert np.linalg.eigvalsh(r)[0] > 0
    (oracle,) = invariant_form_basis(f)
    np.testing.assert_allclose(r / np.trace(r), oracle / np.trace(oracle), atol=1e-10)


def test_solve_invariant_r_rejects_jordan_block():
    with pytest.raises(NoConvergence) as info:
        solve_invariant_r(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert info.value.iterations > 0


def test_solve_invariant_r_empty():
    assert solve_invariant_r(np.zeros((0, 0))).shape == (0, 0)


def _trace_normalized(x):
    return x * x.shape[0] / np.trace(x)


def _oracle_form(f):
    (form,) = invariant_form_basis(f)
    return _trace_normalized(form)


@pytest.mark.parametrize("k", [1, 2, 7, 32, 33, 45])
def test_cesaro_average_matches_direct_sum(k):
    f = np.diag([2.0, 1.0]) @ rotation(0.9) @ np.diag([0.5, 1.0])
    powers = [np.linalg.matrix_power(f, i) for i in range(1, k + 1)]
    expected = sum(p.T @ p for p in powers) / k
    np.testing.assert_allclose(cesaro_average(f, k), expected, rtol=1e-12, atol=1e-12)


def test_cesaro_average_rejects_empty_sum():
    with pytest.raises(InvalidInput):
        cesaro_average(rotation(0.9), 0)


@pytest.mark.parametrize("k", [2**12, 2**16, 2**20])
def test_cesaro_average_approaches_invariant_form(k):
    s = np.diag([2.0, 1.0])
    f = s @ rotation(0.9) @ np.linalg.inv(s)
    distance = np.max(np.abs(_trace_normalized(cesaro_average(f, k)) - _oracle_form(f)))
    assert distance <= 2.0 / k


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_cesaro_average_rate_on_random_rotations(seed):
    rng = np.random.default_rng(seed)
    s = well_conditioned_basis(2, rng)
    theta = float(rng.uniform(0.3, 2.8))
    f = s @ rotation(theta) @ np.linalg.inv(s)
    k = 2**14
    distance = np.max(np.abs(_trace_normalized(cesaro_average(f, k)) - _oracle_form(f)))
    assert distance <= 6.0 * np.linalg.cond(s) ** 2 / (k * abs(np.sin(theta))) + 1e-9


@pytest.mark.parametrize("max_iter", [1, 32])
def test_solve_invariant_r_short_average_does_not_converge(max_iter):
    s = np.diag([2.0, 1.0])
    f = s @ rotation(0.9) @ np.linalg.inv(s)
    with pytest.raises(NoConvergence) as info:
        solve_invariant_r(f, max_iter=max_iter)
    assert info.value.iterations == max_iter
    assert info.value.residual > R_REFINE_BAND


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_solve_invariant_r_on_random_rotations(seed):
    rng = np.random.default_rng(seed)
    s = well_conditioned_basis(2, rng)
    theta = float(rng.uniform(0.3, 2.8))
    f = s @ rotation(theta) @ np.linalg.inv(s)
    r = solve_invariant_r(f)
    assert _fr_residual(f, r) <= 1e-12
    assert np.linalg.eigvalsh(r)[0] > 0
    assert np.max(np.abs(_trace_normalized(r) - _oracle_form(f))) <= 1e-8
    # 修正前的平均值本身已贴近结果
    raw = _trace_normalized(cesaro_average(f, 2**20))
    bound = 6.0 * np.linalg.cond(s) ** 2 / (2**20 * abs(np.sin(theta)))
    assert np.max(np.abs(_trace_normalized(r) - raw)) <= bound + 1e-8


# --- 增益综合 ---

def test_scalar_integrator():
    synth = synthesize(LinearSystem([[1.0]], [[1.0]]))
    np.testing.assert_allclose(synth.l, [[1.0]], atol=1e-14)
    assert synth.n1 == 1 and synth.n2 == 0
    assert synth.alpha == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.5])
def test_rotation_with_position_output(theta):
    synth = synthesize(LinearSystem(rotation(theta), [[1.0, 0.0]]))
    np.testing.assert_allclose(synth.l, [[np.cos(theta)], [np.sin(theta)]], atol=1e-10)
    assert synth.alpha < 1.0


def test_schur_stable_gives_zero_gain():
    a = np.array([[0.5, 0.3], [0.0, -0.2]])
    synth = synthesize(LinearSystem(a, [[1.0, 1.0]]))
    np.testing.assert_array_equal(synth.l, np.zeros((2, 1)))
    assert synth.n1 == 0 and synth.alpha is None


def test_assumption_violations_carry_diagnostics():
    with pytest.raises(AssumptionViolated) as info:
        synthesize(LinearSystem([[1.0, 1.0], [0.0, 1.0]], [[1.0, 0.0]]))
    assert info.value.diagnostics["neutrally_stable"]["ok"] is False

    with pytest.raises(AssumptionViolated) as info:
        synthesize(LinearSystem(np.diag([1.0, 0.5]), [[0.0, 1.0]]))
    assert info.value.diagnostics["detectable"]["ok"] is False


def test_duplicated_outputs_need_reduction():
    sys = LinearSystem(rotation(0.5), [[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(RankDeficientCU) as info:
        synthesize(sys)
    assert (info.value.rank, info.value.m) == (1, 2)

    synth = synthesize(sys, SynthesisOptions(reduce_outputs=True))
    assert synth.reduced
    np.testing.assert_allclose(synth.transform, [[2**-0.5, 2**-0.5]], atol=1e-12)
    assert synth.l.shape == (2, 2)
    assert synth.residuals.gain_identity <= 1e-8


def test_reduce_outputs_full_rank_is_identity():
    sys = LinearSystem(rotation(0.5), [[1.0, 0.0]])
    reduced, t = reduce_outputs(sys, np.eye(2))
    assert reduced is sys
    np.testing.assert_array_equal(t, np.eye(1))


def test_reduced_and_full_outputs_give_same_trajectories():
    sys = LinearSystem(rotation(0.5), [[1.0, 0.0], [1.0, 0.0]])
    synth = synthesize(sys, SynthesisOptions(reduce_outputs=True))
    reduced = LinearSystem(sys.a, synth.transform @ sys.c)
    l_reduced = synth.l @ synth.transform.T
    topo = Topology.from_matrix(RING3)
    initial = np.random.default_rng(0).uniform(-1, 1, (3, 2))
    full = run(Scenario(ClosedLoop.output_coupled(sys, synth.l), topo, initial, horizon=50, snapshot_stride=1))
    small = run(Scenario(ClosedLoop.output_coupled(reduced, l_reduced), topo, initial, horizon=50, snapshot_stride=1))
    for a, b in zip(full.snapshots, small.snapshots):
        assert np.max(np.abs(a.states - b.states)) <= 1e-12


def test_synthesis_is_deterministic():
    sys = random_neutral_system(6, 2, np.random.default_rng(5), n1=4)
    first, second = synthesize(sys), synthesize(sys)
    np.testing.assert_array_equal(first.l, second.l)
    np.testing.assert_array_equal(first.h, second.h)


def test_dual_gain_is_transpose():
    np.testing.assert_allclose(synthesize_dual([[1.0]], [[1.0]]), [[1.0]], atol=1e-14)
    theta = 1.0
    k = synthesize_dual(rotation(theta).T, np.array([[1.0], [0.0]]))
    np.testing.assert_allclose(k, [[np.cos(theta), np.sin(theta)]], atol=1e-10)


def test_dual_requires_stabilizability():
    with pytest.raises(AssumptionViolated):
        synthesize_dual(np.diag([1.0, 0.5]), np.array([[0.0], [1.0]]))


def _corpus_system(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    n1 = int(rng.integers(0, n + 1))
    m = int(rng.integers(1, max(1, min(3, n1)) + 1))
    return random_neutral_system(n, m, rng, n1=n1)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_synthesis_invariants_on_random_corpus(seed):
    sys = _corpus_system(seed)
    synth = synthesize(sys)
    if synth.n1 == 0:
        assert not np.any(synth.l)
        return
    f, r, q, h, u = synth.split.f, synth.r_mat, synth.q, synth.h, synth.split.u
    assert _fr_residual(f, r) <= 1e-10
    np.testing.assert_allclose(r, r.T, atol=0)
    assert np.linalg.eigvalsh(r)[0] > 0
    assert spectral_norm(q.T @ q - np.eye(synth.n1)) <= 1e-9
    assert spectral_norm(h @ h.T - np.eye(h.shape[0])) <= 1e-10
    w, v = np.linalg.eigh(r)
    r_inv_half = (v / np.sqrt(w)) @ v.T
    identity = synth.l @ sys.c @ u @ r_inv_half - u @ f @ r_inv_half @ h.T @ h
    assert spectral_norm(identity) <= 1e-8
    # 可检测性传递为 (H, Q) 可观，且收缩常数 α < 1
    assert check_b_assumptions(q, h).ok
    assert lemma2_alpha(q, h) < 1.0
    assert synth.alpha == pytest.approx(lemma2_alpha(q, h))
