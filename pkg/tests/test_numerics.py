import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from common import InvalidMatrix, NearSingular, SplitFailed, ZeroRange
from numerics import (
    as_matrix,
    invariant_form_basis,
    kron,
    numerical_rank,
    projector_from_range,
    real_spectral_split,
    rotation,
    sort_rows_lexicographically,
    spd_sqrt_pair,
    spectral_norm,
    sylvester_decouple,
)
from sysmodel import random_neutral_system, well_conditioned_basis


def test_as_matrix_promotes_scalar():
    assert as_matrix(3.0).shape == (1, 1)


@pytest.mark.parametrize("bad", [
    [[1.0, np.nan]],
    [[np.inf]],
    [[[1.0]]],
    [],
    "abc",
])
def test_as_matrix_rejects(bad):
    with pytest.raises(InvalidMatrix):
        as_matrix(bad)


def test_kron_block_layout():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.eye(2)
    out = kron(a, b)
    np.testing.assert_array_equal(out[2:4, 0:2], 3.0 * b)
    np.testing.assert_array_equal(out[0:2, 2:4], 2.0 * b)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_kron_algebra(seed):
    rng = np.random.default_rng(seed)
    m, n, p, q, r, s = (int(x) for x in rng.integers(1, 4, size=6))
    a, a2 = rng.standard_normal((2, m, n))
    b, b2 = rng.standard_normal((2, p, q))
    c = rng.standard_normal((n, r))
    d = rng.standard_normal((q, s))
    alpha, beta = rng.standard_normal(2)
    # (A⊗B)(C⊗D) = AC ⊗ BD
    np.testing.assert_allclose(kron(a, b) @ kron(c, d), kron(a @ c, b @ d), atol=1e-12)
    np.testing.assert_allclose(kron(alpha * a + beta * a2, b),
                               alpha * kron(a, b) + beta * kron(a2, b), atol=1e-12)
    np.testing.assert_allclose(kron(a, alpha * b + beta * b2),
                               alpha * kron(a, b) + beta * kron(a, b2), atol=1e-12)
    assert spectral_norm(kron(a, b)) == pytest.approx(spectral_norm(a) * spectral_norm(b), rel=1e-10)


def test_numerical_rank():
    assert numerical_rank(np.zeros((3, 3))) == 0
    assert numerical_rank(np.diag([1.0, 1e-14, 2.0])) == 2
    assert numerical_rank(np.zeros((0, 2))) == 0


def test_spectral_norm_of_empty_is_zero():
    assert spectral_norm(np.zeros((0, 0))) == 0.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_spectral_norm_against_sampled_directions(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((int(rng.integers(1, 5)), int(rng.integers(1, 4))))
    x = rng.standard_normal((a.shape[1], 2000))
    x /= np.linalg.norm(x, axis=0)
    sampled = np.linalg.norm(a @ x, axis=0)
    norm = spectral_norm(a)
    assert np.max(sampled) <= norm * (1.0 + 1e-12)
    # 维数 ≤ 3 时 2000 个方向里总有一个与最大右奇异向量夹角余弦 ≥ 0.9
    assert np.max(sampled) >= 0.9 * norm


def test_spd_sqrt_pair():
    r = np.array([[4.0, 1.0], [1.0, 3.0]])
    root, inv_root = spd_sqrt_pair(r)
    np.testing.assert_allclose(root @ root, r, atol=1e-12)
    np.testing.assert_allclose(root @ inv_root, np.eye(2), atol=1e-12)
    with pytest.raises(InvalidMatrix):
        spd_sqrt_pair(np.diag([1.0, -1.0]))


def test_sort_rows_lexicographically():
    h = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, -1.0]])
    np.testing.assert_array_equal(sort_rows_lexicographically(h), [[0.0, -1.0], [0.0, 1.0], [1.0, 0.0]])


# --- 正交投影 ---

def test_projector_from_range_basic():
    proj, h = projector_from_range(np.array([[-2.0], [0.0]]))
    np.testing.assert_allclose(h, [[1.0, 0.0]])
    np.testing.assert_allclose(proj.matrix, np.diag([1.0, 0.0]))
    assert proj.is_valid()
    np.testing.assert_allclose(proj.complement().matrix, np.diag([0.0, 1.0]))


def test_projector_from_range_zero():
    with pytest.raises(ZeroRange):
        projector_from_range(np.zeros((3, 2)))
    with pytest.raises(ZeroRange):
        projector_from_range(np.zeros((3, 0)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_projector_invariants(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    k = int(rng.integers(1, n + 1))
    b = rng.standard_normal((n, k))
    proj, h = projector_from_range(b)
    sym, idem = proj.deviations()
    assert sym <= 1e-12 and idem <= 1e-12
    assert spectral_norm(h @ h.T - np.eye(h.shape[0])) <= 1e-12
    # range(Hᵀ) = range(B)
    np.testing.assert_allclose(proj.matrix @ b, b, atol=1e-10 * max(1.0, spectral_norm(b)))
    v = proj.complement().matrix
    np.testing.assert_allclose(proj.matrix @ v, 0.0, atol=1e-12)
    np.testing.assert_allclose(v @ proj.matrix, 0.0, atol=1e-12)
    np.testing.assert_allclose(proj.matrix + v, np.eye(n), atol=1e-12)
    for row in h:
        assert row[np.argmax(np.abs(row))] > 0


# --- 实谱分解 ---

def test_split_pure_rotation():
    split = real_spectral_split(rotation(0.8))
    assert split.n1 == 2 and split.n2 == 0
    assert split.w.shape == (2, 0) and split.g.shape == (0, 0)
    np.testing.assert_allclose(split.reconstruct(), rotation(0.8), atol=1e-12)


def test_split_schur_stable():
    a = np.array([[0.5, 1.0], [0.0, -0.3]])
    split = real_spectral_split(a)
    assert split.n1 == 0 and split.n2 == 2
    np.testing.assert_allclose(split.reconstruct(), a, atol=1e-12)


@pytest.mark.parametrize("a", [
    np.diag([1.0 - 1e-7, 0.5]),
    np.diag([1.5, 0.2]),
])
def test_split_rejects_ambiguous_or_unstable(a):
    with pytest.raises(SplitFailed) as info:
        real_spectral_split(a)
    assert info.value.magnitudes


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_split_reconstructs_random_neutral_systems(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    n1 = int(rng.integers(0, n + 1))
    sys = random_neutral_system(n, 1, rng, n1=n1)
    split = real_spectral_split(sys.a)
    assert split.n1 == n1
    scale = max(1.0, spectral_norm(sys.a))
    assert spectral_norm(split.reconstruct() - sys.a) <= 1e-10 * scale
    assert split.biorthogonality_defect() <= 1e-10
    if n1:
        assert np.allclose(np.abs(np.linalg.eigvals(split.f)), 1.0, atol=1e-8)
    if n - n1:
        assert np.max(np.abs(np.linalg.eigvals(split.g))) < 1.0 - 1e-6


def test_sylvester_decouple_residual():
    rng = np.random.default_rng(7)
    t11 = rotation(1.1)
    t22 = np.array([[0.5]])
    t12 = rng.standard_normal((2, 1))
    y = sylvester_decouple(t11, t12, t22)
    np.testing.assert_allclose(t11 @ y - y @ t22 + t12, 0.0, atol=1e-12)


def test_sylvester_decouple_near_singular():
    with pytest.raises(NearSingular):
        sylvester_decouple(np.eye(1), np.ones((1, 1)), np.eye(1))


def test_sylvester_decouple_scalar():
    # 2y − y + 4 = 0
    y = sylvester_decouple(np.array([[2.0]]), np.array([[4.0]]), np.array([[1.0]]))
    np.testing.assert_allclose(y, [[-4.0]], atol=1e-14)


def test_sylvester_decouple_rejects_inaccurate_solution(monkeypatch):
    t11 = rotation(1.1)
    t22 = np.array([[0.5]])
    t12 = np.array([[1.0], [2.0]])
    exact = sylvester_decouple(t11, t12, t22)
    monkeypatch.setattr(scipy.linalg, "solve_sylvester", lambda a, b, q: exact + 1e-3)
    with pytest.raises(NearSingular):
        sylvester_decouple(t11, t12, t22)
    monkeypatch.setattr(scipy.linalg, "solve_sylvester", lambda a, b, q: np.full_like(q, np.nan))
    with pytest.raises(NearSingular):
        sylvester_decouple(t11, t12, t22)


def test_split_of_rotation_plus_stable_modes():
    s = well_conditioned_basis(4, np.random.default_rng(11))
    core = scipy.linalg.block_diag(rotation(1.1), [[0.3]], [[-0.2]])
    a = s @ core @ np.linalg.inv(s)
    split = real_spectral_split(a)
    assert (split.n1, split.n2) == (2, 2)
    f_eigs = np.sort_complex(np.linalg.eigvals(split.f))
    np.testing.assert_allclose(f_eigs, [np.exp(-1.1j), np.exp(1.1j)], atol=1e-8)
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(split.g).real), [-0.2, 0.3], atol=1e-8)
    np.testing.assert_allclose(split.reconstruct(), a, atol=1e-10)


# --- 不变二次型 ---

def test_invariant_forms_of_rotation():
    forms = invariant_form_basis(rotation(0.9))
    assert len(forms) == 1
    np.testing.assert_allclose(forms[0] / forms[0][0, 0], np.eye(2), atol=1e-10)


def test_invariant_forms_of_jordan_block_are_singular():
    forms = invariant_form_basis(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert len(forms) == 1
    form = forms[0] / forms[0][1, 1]
    np.testing.assert_allclose(form, np.diag([0.0, 1.0]), atol=1e-10)


def test_invariant_forms_of_empty():
    assert invariant_form_basis(np.zeros((0, 0))) == []
