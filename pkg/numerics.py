# =============================================================================
#         syncnet - 数值基础模块 (numerics)
# =============================================================================
#
# 功能:
#   - 稠密实矩阵的统一入口 as_matrix (形状与有限性校验)。
#   - Kronecker 积、正交投影、正交规范行基、谱范数与数值秩。
#   - 实 Schur 分解 + 特征值重排 + Sylvester 解耦，给出
#     [U W]^{-1} A [U W] = blkdiag(F, G) 的实不变子空间分解。
#   - FᵀXF = X 的对称解空间 (不变二次型) 的向量化求解。
#
# 所有函数均为纯函数，不修改输入，可在任意线程中并发调用。
# =============================================================================

from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.linalg

from common import (
    AMBIGUITY_FACTOR,
    RANK_TOL,
    SYLVESTER_COND_FLOOR,
    SYLVESTER_RESIDUAL_TOL,
    UNIT_TOL,
    InvalidMatrix,
    NearSingular,
    SplitFailed,
    ZeroRange,
)

# 本项目中所有矩阵都是二维 float64 ndarray。
Mat = np.ndarray


# =============================================================================
# --- 第 1 步: 矩阵校验与基础工具 ---
# =============================================================================

def as_matrix(data, name: str = "matrix", allow_empty: bool = False) -> Mat:
    #
    # 把任意嵌套序列 / ndarray 转为二维 float64 矩阵的副本。
    #
    # Raises:
    #     InvalidMatrix: 不是二维、为空 (未允许时) 或含 NaN/Inf。
    #
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError) as e:
        raise InvalidMatrix(f"{name}: 无法转换为实矩阵: {e}") from e
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise InvalidMatrix(f"{name}: 需要二维矩阵，实际维数为 {arr.ndim}")
    if not allow_empty and arr.size == 0:
        raise InvalidMatrix(f"{name}: 矩阵不能为空 (形状 {arr.shape})")
    if not np.all(np.isfinite(arr)):
        raise InvalidMatrix(f"{name}: 含有 NaN 或 Inf")
    return arr


def require_square(a: Mat, name: str = "matrix") -> int:
    if a.shape[0] != a.shape[1]:
        raise InvalidMatrix(f"{name}: 需要方阵，实际形状 {a.shape}")
    return a.shape[0]


def rotation(theta: float) -> Mat:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def symmetrize(a: Mat) -> Mat:
    return 0.5 * (a + a.T)


def kron(a: Mat, b: Mat) -> Mat:
    # 标准分块布局: (a ⊗ b)[i*p:(i+1)*p, j*q:(j+1)*q] = a_ij * b
    return np.kron(as_matrix(a, "kron.a"), as_matrix(b, "kron.b"))


def spectral_norm(a: Mat) -> float:
    # 2-范数 = 最大奇异值 (SVD，确定性)。空矩阵的范数定义为 0。
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def numerical_rank(a: Mat, rel_tol: float = RANK_TOL) -> int:
    a = np.asarray(a)
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > rel_tol * max(s[0], 1.0)))


def matrix_powers(a: Mat, count: int) -> Iterator[Mat]:
    # 依次产生 I, A, A², ..., A^{count-1}，逐次右乘，不重复求幂。
    power = np.eye(a.shape[0])
    for _ in range(count):
        yield power
        power = power @ a


def normalize_row_signs(h: Mat) -> Mat:
    # 每一行绝对值最大的元素取正号，消除 SVD 的符号不确定性。
    h = np.array(h, dtype=float)
    for i in range(h.shape[0]):
        pivot = int(np.argmax(np.abs(h[i])))
        if h[i, pivot] < 0:
            h[i] = -h[i]
    return h


def sort_rows_lexicographically(h: Mat) -> Mat:
    if h.shape[0] <= 1:
        return np.array(h, dtype=float)
    order = np.lexsort(h.T[::-1])
    return np.array(h[order], dtype=float)


def spd_sqrt_pair(r: Mat) -> tuple[Mat, Mat]:
    """
    对称正定矩阵 R 的 (R^{1/2}, R^{-1/2})，基于对称特征分解。
    """
    w, v = np.linalg.eigh(symmetrize(r))
    if w.size and w[0] <= 0:
        raise InvalidMatrix(f"矩阵不是正定的: 最小特征值 {w[0]:.3e}")
    root = (v * np.sqrt(w)) @ v.T
    inv_root = (v / np.sqrt(w)) @ v.T
    return symmetrize(root), symmetrize(inv_root)


# =============================================================================
# --- 第 2 步: 正交投影 ---
# =============================================================================

@dataclass(frozen=True, eq=False)
class OrthoProjector:
    dim: int
    matrix: Mat

    def deviations(self) -> tuple[float, float]:
        # (对称性偏差, 幂等性偏差)
        p = self.matrix
        return spectral_norm(p - p.T), spectral_norm(p @ p - p)

    def is_valid(self, tol_sym: float = 1e-12, tol_idem: float = 1e-12) -> bool:
        sym, idem = self.deviations()
        return sym <= tol_sym and idem <= tol_idem

    def complement(self) -> "OrthoProjector":
        return OrthoProjector(self.dim, symmetrize(np.eye(self.dim) - self.matrix))


def projector_from_range(basis_source: Mat, rank_tol: float = RANK_TOL) -> tuple[OrthoProjector, Mat]:
    #
    # 返回投影到 basis_source 列空间的正交投影 P，以及 H (rank × n)，
    # 满足 HHᵀ = I、range(Hᵀ) = range(basis_source)、P = HᵀH。
    # 数值秩: 奇异值 > rank_tol × 最大奇异值。
    #
    b = as_matrix(basis_source, "basis_source", allow_empty=True)
    n = b.shape[0]
    if b.size == 0:
        raise ZeroRange(f"basis_source 为空矩阵 (形状 {b.shape})")
    u, s, _ = np.linalg.svd(b, full_matrices=False)
    if s[0] <= np.finfo(float).tiny:
        raise ZeroRange("basis_source 在数值上为零矩阵，列空间为空")
    rank = int(np.sum(s > rank_tol * s[0]))
    h = normalize_row_signs(u[:, :rank].T)
    p = symmetrize(h.T @ h)
    return OrthoProjector(n, p), h


# =============================================================================
# --- 第 3 步: 实谱分解 ---
# =============================================================================

@dataclass(frozen=True, eq=False)
class SpectralSplit:
    """
    [U W]^{-1} A [U W] = blkdiag(F, G)，且 [U†; W†] = [U W]^{-1}。
    F 的特征值全部在单位圆上，G 的特征值全部严格在单位圆内。
    n₁ = 0 或 n₂ = 0 时对应的块是空矩阵。
    """
    u: Mat
    w: Mat
    f: Mat
    g: Mat
    u_dag: Mat
    w_dag: Mat

    @property
    def n1(self) -> int:
        return self.f.shape[0]

    @property
    def n2(self) -> int:
        return self.g.shape[0]

    @property
    def basis(self) -> Mat:
        return np.hstack([self.u, self.w])

    @property
    def inverse_basis(self) -> Mat:
        return np.vstack([self.u_dag, self.w_dag])

    def reconstruct(self) -> Mat:
        # [U W] blkdiag(F, G) [U†; W†]
        return self.u @ self.f @ self.u_dag + self.w @ self.g @ self.w_dag

    def biorthogonality_defect(self) -> float:
        n1, n2 = self.n1, self.n2
        return max(
            spectral_norm(self.u_dag @ self.u - np.eye(n1)),
            spectral_norm(self.w_dag @ self.w - np.eye(n2)),
            spectral_norm(self.u_dag @ self.w),
            spectral_norm(self.w_dag @ self.u),
        )


def sylvester_decouple(t11: Mat, t12: Mat, t22: Mat, cond_floor: float = SYLVESTER_COND_FLOOR) -> Mat:
    #
    # 求解 t11·Y − Y·t22 = −t12，使得相似变换 [I Y; 0 I] 把
    # [t11 t12; 0 t22] 块对角化。
    #
    # Raises:
    #     NearSingular: Sylvester 算子 I⊗t11 − t22ᵀ⊗I 的最小奇异值
    #                   小于 cond_floor × 最大奇异值，或解的残差超过
    #                   SYLVESTER_RESIDUAL_TOL × max(‖t12‖, (‖t11‖ + ‖t22‖)·‖Y‖)。
    #
    t11 = np.asarray(t11, dtype=float)
    t12 = np.asarray(t12, dtype=float)
    t22 = np.asarray(t22, dtype=float)
    n1, n2 = t11.shape[0], t22.shape[0]
    if n1 == 0 or n2 == 0:
        return np.zeros((n1, n2))

    operator = np.kron(np.eye(n2), t11) - np.kron(t22.T, np.eye(n1))
    s = np.linalg.svd(operator, compute_uv=False)
    if s[-1] <= cond_floor * s[0]:
        raise NearSingular(
            f"Sylvester 算子接近奇异: σ_min={s[-1]:.3e}, σ_max={s[0]:.3e} (t11 与 t22 的谱不可分)"
        )
    if not np.any(t12):
        return np.zeros((n1, n2))

    # scipy 求解 a·X + X·b = q
    y = scipy.linalg.solve_sylvester(t11, -t22, -t12)
    if not np.all(np.isfinite(y)):
        raise NearSingular("Sylvester 解含有非有限值")
    residual = spectral_norm(t11 @ y - y @ t22 + t12)
    scale = max(spectral_norm(t12), (spectral_norm(t11) + spectral_norm(t22)) * spectral_norm(y))
    if not residual <= SYLVESTER_RESIDUAL_TOL * scale:
        raise NearSingular(f"Sylvester 解残差偏大: {residual:.3e} (尺度 {scale:.3e})")
    return y


def classify_magnitudes(mags: np.ndarray, unit_tol: float) -> tuple[np.ndarray, np.ndarray]:
    # 返回 (单位圆上的掩码, 无法归类的掩码)。
    unit = np.abs(mags - 1.0) <= unit_tol
    stable = mags <= 1.0 - AMBIGUITY_FACTOR * unit_tol
    return unit, ~(unit | stable)


def real_spectral_split(a: Mat, unit_tol: float = UNIT_TOL) -> SpectralSplit:
    #
    # 实 Schur 分解 (单位圆特征值排在左上角) + Sylvester 解耦。
    # 全程实数运算。
    #
    # Raises:
    #     SplitFailed: 有特征值模长落在 (1 − 100·unit_tol, 1 − unit_tol) 或大于 1 + unit_tol，
    #                  或 LAPACK 重排后单位特征值个数不一致。
    #
    a = as_matrix(a, "A")
    n = require_square(a, "A")
    mags = np.abs(np.linalg.eigvals(a))
    unit_mask, bad_mask = classify_magnitudes(mags, unit_tol)
    if np.any(bad_mask):
        offending = sorted(float(m) for m in mags[bad_mask])
        raise SplitFailed(
            f"特征值模长无法归类为单位圆或严格稳定 (unit_tol={unit_tol:g}): {offending}",
            offending,
        )

    def _on_unit_circle(re, im=None):
        lam = complex(re) if im is None else complex(re, im)
        return abs(abs(lam) - 1.0) <= unit_tol

    try:
        t, z, sdim = scipy.linalg.schur(a, output="real", sort=_on_unit_circle)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SplitFailed(f"实 Schur 分解或特征值重排失败: {e}", [float(m) for m in mags]) from e

    n1 = int(sdim)
    if n1 != int(np.sum(unit_mask)):
        raise SplitFailed(
            f"重排后单位特征值个数 {n1} 与预期 {int(np.sum(unit_mask))} 不一致",
            [float(m) for m in mags],
        )

    t11, t12, t22 = t[:n1, :n1], t[:n1, n1:], t[n1:, n1:]
    y = sylvester_decouple(t11, t12, t22)
    z1, z2 = z[:, :n1], z[:, n1:]
    split = SpectralSplit(
        u=z1.copy(),
        w=z1 @ y + z2,
        f=t11.copy(),
        g=t22.copy(),
        u_dag=z1.T - y @ z2.T,
        w_dag=z2.T.copy(),
    )

    f_mags = np.abs(np.linalg.eigvals(split.f)) if n1 else np.zeros(0)
    g_mags = np.abs(np.linalg.eigvals(split.g)) if n - n1 else np.zeros(0)
    if np.any(np.abs(f_mags - 1.0) > unit_tol) or np.any(g_mags >= 1.0 - unit_tol):
        raise SplitFailed("分解后的 F/G 谱不满足单位圆 / 严格稳定划分", [float(m) for m in mags])
    return split


# =============================================================================
# --- 第 4 步: 不变二次型 FᵀXF = X ---
# =============================================================================

def _symmetric_basis(n: int) -> list[Mat]:
    # Frobenius 内积下正交规范的对称矩阵基。
    basis = []
    for i in range(n):
        for j in range(i, n):
            e = np.zeros((n, n))
            if i == j:
                e[i, i] = 1.0
            else:
                e[i, j] = e[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(e)
    return basis


def invariant_form_basis(f: Mat, rcond: float = RANK_TOL) -> list[Mat]:
    #
    # 线性映射 X ↦ FᵀXF − X 限制在对称矩阵上的零空间，
    # 以 Frobenius 正交规范的对称矩阵列表返回。
    #
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    if n == 0:
        return []
    basis = _symmetric_basis(n)
    operator = np.column_stack([(f.T @ e @ f - e).ravel() for e in basis])
    null = scipy.linalg.null_space(operator, rcond=rcond)
    forms = []
    for col in range(null.shape[1]):
        form = sum(coef * e for coef, e in zip(null[:, col], basis))
        forms.append(symmetrize(form))
    return forms
