# =============================================================================
#         syncnet - 增益综合 (synthesis)
# =============================================================================
#
# 功能:
#   - cesaro_average / solve_invariant_r: FᵀRF = R 的对称正定解 (Cesàro 平均，进入修正带后投影到不变二次型)。
#   - synthesize: 由中性稳定的 (A, C) 构造输出耦合增益 L。
#   - reduce_outputs: CU 行秩不足时把输出压缩到 CU 的列空间上。
#   - synthesize_dual: 对偶问题 (全状态耦合、输入经 Cᵀ 注入) 的增益 K = Lᵀ。
#
# 所有函数都是纯函数，综合结果为只读对象，可以在多个线程中并发调用。
# =============================================================================

from dataclasses import dataclass

import numpy as np
import pydantic

from common import (
    CLUSTER_TOL,
    R_LINEAR_TERMS,
    R_MAX_ITER,
    R_REFINE_BAND,
    R_TOL,
    RANK_TOL,
    UNIT_TOL,
    AssumptionViolated,
    ConvergenceFailure,
    InvalidInput,
    NearSingular,
    NoConvergence,
    RankDeficientCU,
    log_system_event,
)
from numerics import (
    Mat,
    SpectralSplit,
    as_matrix,
    invariant_form_basis,
    normalize_row_signs,
    numerical_rank,
    projector_from_range,
    real_spectral_split,
    sort_rows_lexicographically,
    spd_sqrt_pair,
    spectral_norm,
    symmetrize,
)
from sysmodel import LinearSystem, check_detectable, check_neutral_stability, check_stabilizable
from verify import lemma2_alpha

# 综合结果必须满足的不变量容差
FR_RESIDUAL_TOL = 1e-10
Q_ORTHOGONALITY_TOL = 1e-9
H_ROW_TOL = 1e-10
GAIN_IDENTITY_TOL = 1e-8


# =============================================================================
# --- 第 1 步: 选项与结果类型 ---
# =============================================================================

class SynthesisOptions(pydantic.BaseModel):
    """综合过程的全部可调参数，默认值来自 common.py。"""
    model_config = pydantic.ConfigDict(extra="forbid")

    unit_tol: float = pydantic.Field(default=UNIT_TOL, gt=0)
    cluster_tol: float = pydantic.Field(default=CLUSTER_TOL, gt=0)
    rank_tol: float = pydantic.Field(default=RANK_TOL, gt=0)
    r_tol: float = pydantic.Field(default=R_TOL, gt=0)
    r_max_iter: int = pydantic.Field(default=R_MAX_ITER, ge=1)
    reduce_outputs: bool = False


class SynthesisResiduals(pydantic.BaseModel):
    fr: float = 0.0                # ‖FᵀRF − R‖ / ‖R‖
    q_orthogonality: float = 0.0   # ‖QᵀQ − I‖
    h_rows: float = 0.0            # ‖HHᵀ − I_m‖
    gain_identity: float = 0.0     # ‖LCUR^{-1/2} − UFR^{-1/2}HᵀH‖

    def violations(self) -> list[str]:
        checks = [
            ("‖FᵀRF − R‖/‖R‖", self.fr, FR_RESIDUAL_TOL),
            ("‖QᵀQ − I‖", self.q_orthogonality, Q_ORTHOGONALITY_TOL),
            ("‖HHᵀ − I‖", self.h_rows, H_ROW_TOL),
            ("‖LCUR^{-1/2} − UFR^{-1/2}HᵀH‖", self.gain_identity, GAIN_IDENTITY_TOL),
        ]
        return [f"{name} = {value:.3e} > {tol:g}" for name, value, tol in checks if value > tol]


@dataclass(frozen=True, eq=False)
class GainSynthesis:
    l: Mat
    r_mat: Mat
    h: Mat
    q: Mat
    split: SpectralSplit
    residuals: SynthesisResiduals
    alpha: float | None = None
    # 输出压缩矩阵 T (m' × m)；未压缩时为 None
    transform: Mat | None = None

    @property
    def n1(self) -> int:
        return self.split.n1

    @property
    def n2(self) -> int:
        return self.split.n2

    @property
    def reduced(self) -> bool:
        return self.transform is not None


# =============================================================================
# --- 第 2 步: 不变二次型 R ---
# =============================================================================

def _relative_residual(f: Mat, x: Mat) -> float:
    scale = spectral_norm(x)
    if scale == 0.0:
        return np.inf
    return spectral_norm(f.T @ x @ f - x) / scale


def _is_spd(x: Mat) -> bool:
    return bool(np.linalg.eigvalsh(symmetrize(x))[0] > 0)


def cesaro_average(f: Mat, k: int) -> Mat:
    #
    # X_k = k^{-1} Σ_{i=1}^{k} F^{iT} F^i，按 k 的二进制位逐位推进:
    #     S_{2j} = S_j + F^{jT} S_j F^j,  S_{j+1} = S_j + F^{(j+1)T} F^{j+1}
    #
    f = as_matrix(f, "F", allow_empty=True)
    if k < 1:
        raise InvalidInput(f"Cesàro 平均至少需要一项，实际 k = {k}")
    n1 = f.shape[0]
    acc = np.zeros((n1, n1))
    power = np.eye(n1)
    for bit in bin(k)[2:]:
        acc = acc + power.T @ acc @ power
        power = power @ power
        if bit == "1":
            power = power @ f
            acc = acc + power.T @ power
    return symmetrize(acc / k)


def solve_invariant_r(f: Mat, tol: float = R_TOL, max_iter: int = R_MAX_ITER) -> Mat:
    #
    # X_k = k^{-1} Σ_{i=1}^{k} F^{iT} F^i。
    # 前 R_LINEAR_TERMS 项逐项累加，之后按倍增推进:
    #     S_{2k} = S_k + F^{kT} S_k F^k,  F^{2k} = F^k F^k
    # 每一步都检查相对残差 ‖FᵀXF − X‖/‖X‖ ≤ tol。
    #
    # FᵀX_kF − X_k = (F^{(k+1)T}F^{k+1} − FᵀF)/k，所以残差只以 O(1/k) 下降，
    # 除 F 正交外很难在 max_iter 项内降到 tol。到达 max_iter 时，只有当 X_k
    # 正定且残差已落入 R_REFINE_BAND 内，才把它投影到 {X = Xᵀ : FᵀXF = X}
    # 上做最后一次修正；否则视为未收敛。
    #
    # Raises:
    #     NoConvergence: 平均值未进入修正带，或修正后不满足条件 (例如 F 含隐藏的 Jordan 块)。
    #
    f = as_matrix(f, "F", allow_empty=True)
    n1 = f.shape[0]
    if n1 == 0:
        return np.zeros((0, 0))

    power = np.eye(n1)
    acc = np.zeros((n1, n1))
    k = 0
    x = acc
    residual = np.inf
    while k < max_iter:
        if k < R_LINEAR_TERMS:
            power = power @ f
            acc = acc + power.T @ power
            k += 1
        else:
            acc = acc + power.T @ acc @ power
            power = power @ power
            k *= 2
        if not np.all(np.isfinite(acc)):
            raise NoConvergence(f"Cesàro 累加在第 {k} 项溢出", np.inf, k)
        x = symmetrize(acc / k)
        residual = _relative_residual(f, x)
        if residual <= tol and _is_spd(x):
            log_system_event("debug", f"Cesàro 平均在 k={k} 收敛，残差 {residual:.3e}")
            return x

    if residual > R_REFINE_BAND or not _is_spd(x):
        raise NoConvergence(
            f"Cesàro 平均在 {k} 项后残差 {residual:.3e}，未进入修正带 {R_REFINE_BAND:g}",
            float(residual),
            k,
        )
    forms = invariant_form_basis(f)
    if forms:
        projected = symmetrize(sum(float(np.sum(x * form)) * form for form in forms))
        refined = _relative_residual(f, projected)
        if refined <= tol and _is_spd(projected):
            log_system_event("debug", f"Cesàro 平均 (k={k}, 残差 {residual:.3e}) 经不变二次型投影修正，残差 {refined:.3e}")
            return projected
    raise NoConvergence(
        f"FᵀRF = R 在 {k} 项后仍未得到正定解 (残差 {residual:.3e})，F 可能含有 Jordan 块",
        float(residual),
        k,
    )


# =============================================================================
# --- 第 3 步: 输出压缩 ---
# =============================================================================

def reduce_outputs(sys: LinearSystem, u: Mat, rank_tol: float = RANK_TOL) -> tuple[LinearSystem, Mat]:
    #
    # T 的行是 CU 列空间 (输出差 y_j − y_i 的单位圆分量所在空间) 的正交规范基，
    # Ĉ = T·C。完整增益 L_full = L_reduced·T。
    # CU 已行满秩时返回 T = I_m 与原系统。
    #
    cu = sys.c @ u
    rank = numerical_rank(cu, rank_tol)
    if rank == sys.m:
        return sys, np.eye(sys.m)
    left, _, _ = np.linalg.svd(cu, full_matrices=False)
    t = normalize_row_signs(left[:, :rank].T)
    log_system_event("info", f"输出压缩: rank(CU) = {rank} < m = {sys.m}，使用 {rank} 维压缩输出。")
    return LinearSystem(sys.a, t @ sys.c), t


# =============================================================================
# --- 第 4 步: 增益综合 ---
# =============================================================================

def _empty_synthesis(sys: LinearSystem, split: SpectralSplit) -> GainSynthesis:
    return GainSynthesis(
        l=np.zeros((sys.n, sys.m)),
        r_mat=np.zeros((0, 0)),
        h=np.zeros((0, 0)),
        q=np.zeros((0, 0)),
        split=split,
        residuals=SynthesisResiduals(),
        alpha=None,
    )


def synthesize(sys: LinearSystem, opts: SynthesisOptions | None = None) -> GainSynthesis:
    """
    由 A 中性稳定、(C, A) 可检测的系统构造增益 L:

        Step 1: [U W]^{-1} A [U W] = blkdiag(F, G)，F 的谱在单位圆上
        Step 2: R = Rᵀ > 0 且 FᵀRF = R
        Step 3: H 满足 range(Hᵀ) = range(R^{-1/2}UᵀCᵀ)，HHᵀ = I
        Step 4: L = UFR^{-1/2}Hᵀ(CUR^{-1/2}Hᵀ)^{-1}

    n₁ = 0 时 L = 0。H 的每一行绝对值最大的元素取正号，各行按字典序排列，
    所以相同输入得到逐位相同的 L。

    Raises:
        AssumptionViolated: 不满足中性稳定或可检测 (diagnostics 中带检查器结果)。
        RankDeficientCU: rank(CU) < m 且未开启 reduce_outputs。
        SplitFailed / NearSingular / NoConvergence: 由各步骤透传。
    """
    opts = opts or SynthesisOptions()
    stability = check_neutral_stability(sys, opts.unit_tol, opts.cluster_tol)
    detectability = check_detectable(sys, opts.unit_tol, opts.rank_tol)
    if not (stability.ok and detectability.ok):
        failing = [name for name, v in (("neutrally_stable", stability), ("detectable", detectability)) if not v.ok]
        raise AssumptionViolated(
            f"系统不满足增益综合的前提: {', '.join(failing)}",
            {"neutrally_stable": stability.model_dump(), "detectable": detectability.model_dump()},
        )

    split = real_spectral_split(sys.a, opts.unit_tol)
    if split.n1 == 0:
        log_system_event("info", "A 严格稳定 (n₁ = 0)，L = 0。")
        return _empty_synthesis(sys, split)

    u, f = split.u, split.f
    rank = numerical_rank(sys.c @ u, opts.rank_tol)
    work, transform = sys, None
    if rank < sys.m:
        if not opts.reduce_outputs:
            raise RankDeficientCU(
                f"CU 行秩不足: rank(CU) = {rank} < m = {sys.m} (可用 reduce_outputs 压缩输出)", rank, sys.m
            )
        work, transform = reduce_outputs(sys, u, opts.rank_tol)

    r_mat = solve_invariant_r(f, opts.r_tol, opts.r_max_iter)
    r_half, r_inv_half = spd_sqrt_pair(r_mat)

    _, h = projector_from_range(r_inv_half @ u.T @ work.c.T, opts.rank_tol)
    h = sort_rows_lexicographically(h)
    if h.shape[0] != work.m:
        raise RankDeficientCU(f"R^(-1/2)UᵀCᵀ 的数值秩 {h.shape[0]} 小于输出维数 {work.m}", h.shape[0], work.m)

    coupling = work.c @ u @ r_inv_half @ h.T
    numerator = u @ f @ r_inv_half @ h.T
    try:
        # L·coupling = numerator
        l_work = np.linalg.solve(coupling.T, numerator.T).T
    except np.linalg.LinAlgError as e:
        raise NearSingular(f"CUR^(-1/2)Hᵀ 奇异，无法求 L: {e}") from e
    l_full = l_work if transform is None else l_work @ transform

    q = r_half @ f @ r_inv_half
    residuals = SynthesisResiduals(
        fr=spectral_norm(f.T @ r_mat @ f - r_mat) / spectral_norm(r_mat),
        q_orthogonality=spectral_norm(q.T @ q - np.eye(split.n1)),
        h_rows=spectral_norm(h @ h.T - np.eye(h.shape[0])),
        gain_identity=spectral_norm(l_full @ sys.c @ u @ r_inv_half - u @ f @ r_inv_half @ h.T @ h),
    )
    broken = residuals.violations()
    if broken:
        raise ConvergenceFailure("综合结果不满足不变量: " + "; ".join(broken))

    alpha = lemma2_alpha(q, h, strict=True)
    log_system_event(
        "debug",
        f"综合完成: n₁={split.n1}, n₂={split.n2}, m'={h.shape[0]}, α={alpha:.6g}, 增益恒等式残差 {residuals.gain_identity:.3e}",
    )
    return GainSynthesis(
        l=l_full, r_mat=r_mat, h=h, q=q, split=split,
        residuals=residuals, alpha=alpha, transform=transform,
    )


def synthesize_dual(a_t: Mat, c_t: Mat, opts: SynthesisOptions | None = None) -> Mat:
    #
    # 对偶闭环 x_i⁺ = Aᵀx_i + CᵀK Σ_j λ_ij (x_j − x_i)，K = Lᵀ，
    # 其中 L = synthesize((A, C)).l；a_t = Aᵀ, c_t = Cᵀ。
    # (Aᵀ, Cᵀ) 可镇定 ⇔ (C, A) 可检测。
    #
    a_t = as_matrix(a_t, "Aᵀ")
    c_t = as_matrix(c_t, "Cᵀ")
    opts = opts or SynthesisOptions()
    verdict = check_stabilizable(a_t, c_t, opts.unit_tol, opts.rank_tol)
    if not verdict.ok:
        raise AssumptionViolated("(Aᵀ, Cᵀ) 不可镇定，对偶增益不存在", {"stabilizable": verdict.model_dump()})
    return synthesize(LinearSystem(a_t.T, c_t.T), opts).l.T
