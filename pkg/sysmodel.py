# =============================================================================
#         syncnet - 系统模型与假设检查 (sysmodel)
# =============================================================================
#
# 功能:
#   - LinearSystem: 单个智能体 x⁺ = Ax + u, y = Cx 的 (A, C)。
#   - 假设检查器: 中性稳定 (A1)、可检测 (A2)、可观、可镇定 (对偶问题)、
#     以及正交情形的三项条件 (Q 正交、HHᵀ = I、(H, Q) 可观)。
#   - 所有检查器都返回带诊断信息的判定结果，从不抛出异常，
#     以便 CLI 的 check 命令一次性报告所有失败项。
#   - 随机中性稳定系统生成器 (带种子)，供语料库测试使用。
#
# =============================================================================

from dataclasses import dataclass

import networkx as nx
import numpy as np
import pydantic
import scipy.linalg

from common import CLUSTER_TOL, RANK_TOL, UNIT_TOL, InvalidMatrix, log_system_event
from numerics import Mat, as_matrix, numerical_rank, require_square, rotation, spectral_norm


# =============================================================================
# --- 第 1 步: 系统类型 ---
# =============================================================================

@dataclass(frozen=True, eq=False)
class LinearSystem:
    a: Mat
    c: Mat

    def __post_init__(self):
        a = as_matrix(self.a, "A")
        require_square(a, "A")
        c = as_matrix(self.c, "C")
        if c.shape[1] != a.shape[0]:
            raise InvalidMatrix(f"C 的列数 {c.shape[1]} 与状态维数 {a.shape[0]} 不一致")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.c.shape[0]


# =============================================================================
# --- 第 2 步: 诊断数据模型 (Pydantic) ---
# =============================================================================

class EigenDiagnostic(pydantic.BaseModel):
    real: float
    imag: float
    magnitude: float
    on_unit_circle: bool
    algebraic_multiplicity: int | None = None
    geometric_multiplicity: int | None = None
    semisimple: bool | None = None


class StabilityVerdict(pydantic.BaseModel):
    ok: bool
    eigenvalues: list[EigenDiagnostic]
    unit_tol: float
    cluster_tol: float
    reasons: list[str] = []


class ModeValue(pydantic.BaseModel):
    real: float
    imag: float
    magnitude: float


class DetectabilityVerdict(pydantic.BaseModel):
    ok: bool
    undetectable_modes: list[ModeValue]
    unit_tol: float
    rank_tol: float


class BAssumptionVerdict(pydantic.BaseModel):
    ok: bool
    orthogonal: bool
    orthonormal_rows: bool
    observable: bool
    orthogonality_defect: float
    row_defect: float
    tol: float


class AssumptionReport(pydantic.BaseModel):
    neutrally_stable: StabilityVerdict
    detectable: DetectabilityVerdict
    observable: bool

    @pydantic.computed_field
    @property
    def ok(self) -> bool:
        return self.neutrally_stable.ok and self.detectable.ok


def _mode(lam: complex) -> ModeValue:
    return ModeValue(real=float(lam.real), imag=float(lam.imag), magnitude=float(abs(lam)))


# =============================================================================
# --- 第 3 步: 假设检查器 ---
# =============================================================================

def _cluster_eigenvalues(values: np.ndarray, cluster_tol: float) -> list[list[int]]:
    # 单链聚类: 距离不超过 cluster_tol 的特征值归为一簇。
    graph = nx.Graph()
    graph.add_nodes_from(range(len(values)))
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            if abs(values[i] - values[j]) <= cluster_tol:
                graph.add_edge(i, j)
    return [sorted(component) for component in nx.connected_components(graph)]


def check_neutral_stability(sys: LinearSystem, unit_tol: float = UNIT_TOL,
                            cluster_tol: float = CLUSTER_TOL) -> StabilityVerdict:
    #
    # 中性稳定 ⇔ 所有 |λ| ≤ 1 + unit_tol，且单位圆上每个特征值簇的
    # 几何重数等于代数重数 (Jordan 块大小为一)。
    # 几何重数 = n − rank(A − λ_c I)，λ_c 为簇中心。
    #
    a = sys.a
    n = sys.n
    eig = np.linalg.eigvals(a)
    mags = np.abs(eig)
    reasons = []

    on_circle = np.abs(mags - 1.0) <= unit_tol
    diagnostics = [
        EigenDiagnostic(real=float(lam.real), imag=float(lam.imag), magnitude=float(abs(lam)),
                        on_unit_circle=bool(flag))
        for lam, flag in zip(eig, on_circle)
    ]
    outside = [float(m) for m in mags if m > 1.0 + unit_tol]
    if outside:
        reasons.append(f"存在模长大于 1 的特征值: {outside}")

    near_unit = np.flatnonzero(on_circle)
    for cluster in _cluster_eigenvalues(eig[near_unit], cluster_tol):
        members = near_unit[cluster]
        centroid = complex(np.mean(eig[members]))
        shifted = a.astype(complex) - centroid * np.eye(n)
        geometric = n - numerical_rank(shifted, cluster_tol)
        algebraic = len(members)
        semisimple = geometric >= algebraic
        for idx in members:
            diagnostics[idx].algebraic_multiplicity = algebraic
            diagnostics[idx].geometric_multiplicity = geometric
            diagnostics[idx].semisimple = semisimple
        if not semisimple:
            reasons.append(
                f"单位圆特征值 {centroid:.6g} 的 Jordan 块大于一: 代数重数 {algebraic}, 几何重数 {geometric}"
            )

    return StabilityVerdict(ok=not reasons, eigenvalues=diagnostics, unit_tol=unit_tol,
                            cluster_tol=cluster_tol, reasons=reasons)


def check_detectable(sys: LinearSystem, unit_tol: float = UNIT_TOL,
                     rank_tol: float = RANK_TOL) -> DetectabilityVerdict:
    # PBH 判据: 对每个 |λ| ≥ 1 − unit_tol 的特征值，rank([A − λI; C]) = n。
    a, c, n = sys.a, sys.c, sys.n
    failing = []
    for lam in np.linalg.eigvals(a):
        if abs(lam) < 1.0 - unit_tol:
            continue
        pbh = np.vstack([a.astype(complex) - lam * np.eye(n), c.astype(complex)])
        if numerical_rank(pbh, rank_tol) < n:
            failing.append(_mode(complex(lam)))
    return DetectabilityVerdict(ok=not failing, undetectable_modes=failing, unit_tol=unit_tol, rank_tol=rank_tol)


def observability_matrix(a: Mat, c: Mat) -> Mat:
    blocks = []
    block = np.asarray(c, dtype=float)
    for _ in range(a.shape[0]):
        blocks.append(block)
        block = block @ a
    return np.vstack(blocks)


def check_observable(sys: LinearSystem, rank_tol: float = RANK_TOL) -> bool:
    return numerical_rank(observability_matrix(sys.a, sys.c), rank_tol) == sys.n


def check_stabilizable(sys_dual_a: Mat, sys_dual_b: Mat, unit_tol: float = UNIT_TOL,
                       rank_tol: float = RANK_TOL) -> DetectabilityVerdict:
    # (A, B) 可镇定 ⇔ (Bᵀ, Aᵀ) 可检测。
    a = as_matrix(sys_dual_a, "A")
    b = as_matrix(sys_dual_b, "B")
    return check_detectable(LinearSystem(a.T, b.T), unit_tol=unit_tol, rank_tol=rank_tol)


def check_b_assumptions(q: Mat, h: Mat, tol: float = 1e-9, rank_tol: float = RANK_TOL) -> BAssumptionVerdict:
    #
    # Q 正交; HHᵀ = I_m; (H, Q) 可观。
    # 既用于用户给定的正交情形，也用于增益综合输出的 (Q, H)。
    #
    q = as_matrix(q, "Q")
    h = as_matrix(h, "H")
    n = require_square(q, "Q")
    if h.shape[1] != n:
        raise InvalidMatrix(f"H 的列数 {h.shape[1]} 与 Q 的维数 {n} 不一致")
    orth_defect = spectral_norm(q.T @ q - np.eye(n))
    row_defect = spectral_norm(h @ h.T - np.eye(h.shape[0]))
    orthogonal = orth_defect <= tol
    orthonormal_rows = row_defect <= tol
    observable = check_observable(LinearSystem(q, h), rank_tol=rank_tol)
    return BAssumptionVerdict(
        ok=orthogonal and orthonormal_rows and observable,
        orthogonal=orthogonal,
        orthonormal_rows=orthonormal_rows,
        observable=observable,
        orthogonality_defect=orth_defect,
        row_defect=row_defect,
        tol=tol,
    )


def assess(sys: LinearSystem, unit_tol: float = UNIT_TOL, cluster_tol: float = CLUSTER_TOL,
           rank_tol: float = RANK_TOL) -> AssumptionReport:
    report = AssumptionReport(
        neutrally_stable=check_neutral_stability(sys, unit_tol, cluster_tol),
        detectable=check_detectable(sys, unit_tol, rank_tol),
        observable=check_observable(sys, rank_tol),
    )
    if report.observable and not report.detectable.ok:
        log_system_event("warning", "可观但 PBH 判定不可检测: 秩容差处于临界，请检查 rank_tol。")
    return report


# =============================================================================
# --- 第 4 步: 随机系统生成器 ---
# =============================================================================

_ANGLE_GRID = np.linspace(0.4, 2.7, 12)


def unit_circle_blocks(n1: int, rng: np.random.Generator) -> list[Mat]:
    # 互不相同的旋转角 (间隔 ≥ 0.2)，奇数维再补一个 ±1。
    blocks = [rotation(theta) for theta in rng.choice(_ANGLE_GRID, size=n1 // 2, replace=False)]
    if n1 % 2:
        blocks.append(np.array([[float(rng.choice([-1.0, 1.0]))]]))
    return blocks


def _stable_block(k: int, rng: np.random.Generator, radius: float = 0.7) -> list[Mat]:
    if k == 0:
        return []
    g = rng.standard_normal((k, k))
    rho = float(np.max(np.abs(np.linalg.eigvals(g))))
    return [g * (radius / rho) if rho > 0 else g]


def well_conditioned_basis(n: int, rng: np.random.Generator) -> Mat:
    # 条件数不超过 4 的随机可逆矩阵。
    q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
    q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q1 @ np.diag(rng.uniform(0.5, 2.0, n)) @ q2


def random_neutral_system(n: int, m: int, rng: np.random.Generator, n1: int | None = None) -> LinearSystem:
    #
    # A = S·blkdiag(旋转块..., ±1, G)·S^{-1}，G 的谱半径为 0.7；C 为高斯随机矩阵。
    # 单位圆特征值互不相同，所以一般的 C 都能检测到它们。
    #
    if n1 is None:
        n1 = int(rng.integers(0, n + 1))
    if not 0 <= n1 <= n:
        raise ValueError(f"n1={n1} 超出范围 [0, {n}]")
    blocks = unit_circle_blocks(n1, rng) + _stable_block(n - n1, rng)
    core = scipy.linalg.block_diag(*blocks) if blocks else np.zeros((0, 0))
    s = well_conditioned_basis(n, rng)
    a = s @ core @ np.linalg.inv(s)
    c = rng.standard_normal((m, n))
    return LinearSystem(a, c)
