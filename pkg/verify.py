# =============================================================================
#         syncnet - 证明层数值验证 (verify)
# =============================================================================
#
# 功能:
#   - ProjectionSequence: P_i = Q^{iT}HᵀHQ^i 与 V_i = I − P_i。
#   - lemma2_alpha: 收缩常数 α = ‖V_{n−1}···V_0‖。
#   - M_{ℓ,k}: 穷举 (测试基准) 与递推 (生产路径) 两种构造，及其恒等式检查。
#   - Φ(k, 0) = Π(I_p ⊗ V_τ + Λ ⊗ P_τ) 的极限 1rᵀ ⊗ I 与展开式检查。
#   - run_suite: 带种子的语料库，多线程并发执行，报告按用例顺序输出。
#
# =============================================================================

import itertools
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
import pydantic
import scipy.linalg

from common import (
    DEFAULT_SEED,
    ENUMERATION_MAX_K,
    IDENTITY_TOL,
    PHI_LIMIT_TOL,
    PROJECTOR_TOL,
    RECURRENCE_TOL,
    VERIFY_WORKERS,
    AssumptionViolated,
    InvalidInput,
    TooLarge,
    log_system_event,
)
from numerics import Mat, OrthoProjector, as_matrix, require_square, spectral_norm, symmetrize
from sysmodel import check_b_assumptions, unit_circle_blocks
from topology import Topology, random_topology

NORM_BOUND_SLACK = 1e-12
EXPANSION_TOL = 1e-10
WINDOW_TOL = 1e-10
UNIT_VECTOR_SAMPLES = 20
# Φ 极限用例的状态维数上限 (k_max = 1000 内收敛到 1e-6)
PHI_LIMIT_MAX_N = 4

Suite = Literal["lemma2", "partitions", "phi-limit", "all"]


# =============================================================================
# --- 第 1 步: 投影序列 ---
# =============================================================================

@dataclass(frozen=True, eq=False)
class ProjectionSequence:
    """
    P_i 是到 range(Q^{iT}Hᵀ) 的正交投影，V_i = I − P_i，i < horizon。
    Q 正交且 HHᵀ = I 时 P_i = Q^{iT}HᵀHQ^i；这里用 QR 求正交规范基，
    所以 Q 只有舍入级别的正交性误差时 P_i 仍然是精确的投影。
    """
    q: Mat
    h: Mat
    horizon: int
    p: tuple[Mat, ...]
    v: tuple[Mat, ...]

    @classmethod
    def build(cls, q: Mat, h: Mat, horizon: int) -> "ProjectionSequence":
        q = as_matrix(q, "Q")
        h = as_matrix(h, "H")
        n = require_square(q, "Q")
        if h.shape[1] != n:
            raise InvalidInput(f"H 的列数 {h.shape[1]} 与 Q 的维数 {n} 不一致")
        p_list, v_list = [], []
        rotated = h.T.copy()
        for _ in range(horizon):
            basis, _ = np.linalg.qr(rotated)
            proj = symmetrize(basis @ basis.T)
            p_list.append(proj)
            v_list.append(symmetrize(np.eye(n) - proj))
            # Q^{(i+1)T}Hᵀ = Qᵀ·Q^{iT}Hᵀ
            rotated = q.T @ rotated
        return cls(q=q, h=h, horizon=horizon, p=tuple(p_list), v=tuple(v_list))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def product(self, factors: list[Mat]) -> Mat:
        # factors[i] 对应时刻 i；乘积 L_{k−1}···L_0。
        out = np.eye(self.n)
        for factor in factors:
            out = factor @ out
        return out

    def v_window(self, start: int, length: int) -> Mat:
        return self.product(list(self.v[start:start + length]))

    def defect(self) -> float:
        # 所有 P_i、V_i 的对称性 / 幂等性偏差以及 ‖P_iV_i‖ 的最大值。
        worst = 0.0
        for proj, comp in zip(self.p, self.v):
            for matrix in (proj, comp):
                worst = max(worst, *OrthoProjector(self.n, matrix).deviations())
            worst = max(worst, spectral_norm(proj @ comp))
        return worst


def lemma2_alpha(q: Mat, h: Mat, strict: bool = True) -> float:
    #
    # α = ‖Π_{i=0}^{n−1} (I − Q^{iT}HᵀHQ^i)‖。(Q, H) 正交且可观时 α < 1。
    # strict=False 时跳过假设检查，用于复现不可观反例 (α = 1)。
    #
    verdict = check_b_assumptions(q, h)
    if strict and not verdict.ok:
        raise AssumptionViolated("(Q, H) 不满足正交、行正交规范与可观条件", {"b_assumptions": verdict.model_dump()})
    seq = ProjectionSequence.build(q, h, as_matrix(q, "Q").shape[0])
    return spectral_norm(seq.v_window(0, seq.n))


# =============================================================================
# --- 第 2 步: M_{ℓ,k} 的穷举与递推 ---
# =============================================================================

def _check_enumeration_bounds(ell: int, k: int):
    if k > ENUMERATION_MAX_K:
        raise TooLarge(f"k = {k} 超过穷举上限 {ENUMERATION_MAX_K} (2^k 个乘积)")
    if not 0 <= ell <= k:
        raise InvalidInput(f"需要 0 ≤ ℓ ≤ k，实际 ℓ = {ell}, k = {k}")


def _enumerate(seq: ProjectionSequence, ell: int, k: int) -> tuple[Mat, int]:
    total = np.zeros((seq.n, seq.n))
    count = 0
    for picks in itertools.combinations(range(k), ell):
        chosen = set(picks)
        total += seq.product([seq.p[i] if i in chosen else seq.v[i] for i in range(k)])
        count += 1
    return total, count


def enumerate_m(q: Mat, h: Mat, ell: int, k: int) -> Mat:
    """
    M_{ℓ,k} = Σ_{M ∈ Ω_{ℓ,k}} M，Ω_{ℓ,k} 为所有 L_{k−1}···L_0 (L_i ∈ {V_i, P_i})
    中恰有 ℓ 个 P 因子的乘积。逐项穷举，仅作为测试基准使用。

    Raises:
        TooLarge: k > ENUMERATION_MAX_K。
    """
    _check_enumeration_bounds(ell, k)
    seq = ProjectionSequence.build(q, h, k)
    total, _ = _enumerate(seq, ell, k)
    return total


def recurrence_m(seq: ProjectionSequence, k: int) -> list[Mat]:
    # M_{0,0} = I；M_{ℓ,j+1} = V_j M_{ℓ,j} + P_j M_{ℓ−1,j}。返回 [M_{0,k}, ..., M_{k,k}]。
    family = [np.eye(seq.n)]
    for j in range(k):
        nxt = [seq.v[j] @ family[0]]
        for ell in range(1, j + 1):
            nxt.append(seq.v[j] @ family[ell] + seq.p[j] @ family[ell - 1])
        nxt.append(seq.p[j] @ family[j])
        family = nxt
    return family


def omega_labels(ell: int, k: int) -> list[str]:
    # Ω_{ℓ,k} 的符号形式，例如 ℓ=2, k=4 的第一个元素为 "V3V2P1P0"。
    _check_enumeration_bounds(ell, k)
    labels = []
    for picks in itertools.combinations(range(k), ell):
        labels.append("".join(("P" if i in picks else "V") + str(i) for i in reversed(range(k))))
    return labels


class PartitionReport(pydantic.BaseModel):
    k: int
    n: int
    projector_defect: float
    sum_deviation: float
    max_norm: float
    unit_vector_deviation: float
    recurrence_deviation: float
    cardinalities: list[int]
    cardinality_ok: bool
    omega: dict[str, list[str]] = {}
    ok: bool


def check_partition_identities(q: Mat, h: Mat, k: int, seed: int = DEFAULT_SEED,
                               samples: int = UNIT_VECTOR_SAMPLES) -> PartitionReport:
    #
    # 1) Σ_ℓ M_{ℓ,k} = I
    # 2) ‖M_{ℓ,k}‖ ≤ 1
    # 3) Σ_ℓ ‖M_{ℓ,k}v‖² = 1 (samples 个随机单位向量)
    # 4) 递推构造与穷举构造一致
    # 5) #Ω_{ℓ,k} = C(k, ℓ)
    #
    _check_enumeration_bounds(0, k)
    seq = ProjectionSequence.build(q, h, k)
    n = seq.n
    enumerated, counts = [], []
    for ell in range(k + 1):
        total, count = _enumerate(seq, ell, k)
        enumerated.append(total)
        counts.append(count)
    recursive = recurrence_m(seq, k)

    sum_dev = spectral_norm(sum(recursive) - np.eye(n))
    max_norm = max(spectral_norm(m) for m in recursive)
    rng = np.random.default_rng(seed)
    unit_dev = 0.0
    for _ in range(samples):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        energy = sum(float(np.dot(m @ v, m @ v)) for m in recursive)
        unit_dev = max(unit_dev, abs(energy - 1.0))
    rec_dev = max(spectral_norm(a - b) for a, b in zip(recursive, enumerated))
    cardinality_ok = all(c == math.comb(k, ell) for ell, c in enumerate(counts))
    omega = {str(ell): omega_labels(ell, k) for ell in range(k + 1)} if k <= 4 else {}

    defect = seq.defect()
    ok = (
        defect <= PROJECTOR_TOL
        and sum_dev <= IDENTITY_TOL
        and max_norm <= 1.0 + NORM_BOUND_SLACK
        and unit_dev <= IDENTITY_TOL
        and rec_dev <= RECURRENCE_TOL
        and cardinality_ok
    )
    return PartitionReport(
        k=k, n=n, projector_defect=defect, sum_deviation=sum_dev, max_norm=max_norm,
        unit_vector_deviation=unit_dev, recurrence_deviation=rec_dev, cardinalities=counts,
        cardinality_ok=cardinality_ok, omega=omega, ok=ok,
    )


# =============================================================================
# --- 第 3 步: 状态转移矩阵 Φ(k, 0) ---
# =============================================================================

def _phi_factor(topo: Topology, seq: ProjectionSequence, tau: int) -> Mat:
    return np.kron(np.eye(topo.p), seq.v[tau]) + np.kron(topo.lam, seq.p[tau])


def consensus_target(topo: Topology, n: int) -> Mat:
    # 1rᵀ ⊗ I_n
    return np.kron(np.outer(np.ones(topo.p), topo.r), np.eye(n))


class PhiLimitReport(pydantic.BaseModel):
    k_max: int
    p: int
    n: int
    assumptions_ok: bool
    final_deviation: float
    checkpoints: dict[int, float]
    tol: float
    ok: bool


def check_phi_limit(q: Mat, h: Mat, topo: Topology, k_max: int = 1000,
                    checkpoint_every: int = 100) -> PhiLimitReport:
    #
    # Φ(k+1, 0) = (I_p ⊗ V_k + Λ ⊗ P_k) Φ(k, 0)，与 1rᵀ ⊗ I 比较。
    # P_k 以 HQ^k 的正交规范化逐步更新，不缓存整个序列。
    #
    q = as_matrix(q, "Q")
    h = as_matrix(h, "H")
    n = require_square(q, "Q")
    target = consensus_target(topo, n)
    phi = np.eye(topo.p * n)
    checkpoints = {0: spectral_norm(phi - target)}
    rotated = h.T.copy()
    for tau in range(k_max):
        basis, _ = np.linalg.qr(rotated)
        proj = symmetrize(basis @ basis.T)
        factor = np.kron(np.eye(topo.p), np.eye(n) - proj) + np.kron(topo.lam, proj)
        phi = factor @ phi
        rotated = q.T @ rotated
        if (tau + 1) % checkpoint_every == 0 or tau + 1 == k_max:
            checkpoints[tau + 1] = spectral_norm(phi - target)
    final = spectral_norm(phi - target)
    return PhiLimitReport(
        k_max=k_max, p=topo.p, n=n,
        assumptions_ok=check_b_assumptions(q, h).ok and topo.connected,
        final_deviation=final, checkpoints=checkpoints, tol=PHI_LIMIT_TOL,
        ok=final <= PHI_LIMIT_TOL,
    )


class ExpansionReport(pydantic.BaseModel):
    k: int
    deviation: float
    ok: bool


def check_phi_expansion(q: Mat, h: Mat, topo: Topology, k: int) -> ExpansionReport:
    # Φ(k, 0) = Σ_{ℓ=0}^{k} Λ^ℓ ⊗ M_{ℓ,k}
    seq = ProjectionSequence.build(q, h, k)
    direct = np.eye(topo.p * seq.n)
    for tau in range(k):
        direct = _phi_factor(topo, seq, tau) @ direct
    expanded = np.zeros_like(direct)
    lam_power = np.eye(topo.p)
    for m in recurrence_m(seq, k):
        expanded += np.kron(lam_power, m)
        lam_power = lam_power @ topo.lam
    deviation = spectral_norm(direct - expanded)
    return ExpansionReport(k=k, deviation=deviation, ok=deviation <= EXPANSION_TOL)


class WindowReport(pydantic.BaseModel):
    alpha: float
    windows: int
    max_deviation: float
    ok: bool


def check_window_invariance(q: Mat, h: Mat, k_max: int) -> WindowReport:
    # 对 k ≥ n−1，‖V_k V_{k−1}···V_{k−n+1}‖ 都等于 α (Q 正交，窗口只是整体旋转)。
    q = as_matrix(q, "Q")
    n = require_square(q, "Q")
    seq = ProjectionSequence.build(q, h, max(k_max + 1, n))
    alpha = spectral_norm(seq.v_window(0, n))
    deviation = 0.0
    windows = 0
    for end in range(n - 1, k_max + 1):
        deviation = max(deviation, abs(spectral_norm(seq.v_window(end - n + 1, n)) - alpha))
        windows += 1
    return WindowReport(alpha=alpha, windows=windows, max_deviation=deviation, ok=deviation <= WINDOW_TOL)


# =============================================================================
# --- 第 4 步: 随机语料与并发执行 ---
# =============================================================================

def random_observable_pair(n: int, m: int, rng: np.random.Generator, max_tries: int = 100) -> tuple[Mat, Mat]:
    #
    # Q = O·blkdiag(互异旋转, ±1)·Oᵀ (O 随机正交)，H 为随机正交矩阵的前 m 行；
    # 拒绝采样直到 check_b_assumptions 通过。
    #
    if not 1 <= m <= n:
        raise InvalidInput(f"需要 1 ≤ m ≤ n，实际 m = {m}, n = {n}")
    for _ in range(max_tries):
        ortho, _ = np.linalg.qr(rng.standard_normal((n, n)))
        q = ortho @ scipy.linalg.block_diag(*unit_circle_blocks(n, rng)) @ ortho.T
        frame, _ = np.linalg.qr(rng.standard_normal((n, n)))
        h = frame[:m, :]
        if check_b_assumptions(q, h).ok:
            return q, h
    raise InvalidInput(f"{max_tries} 次采样后仍未得到可观的 (Q, H) (n={n}, m={m})")


def unobservable_pair() -> tuple[Mat, Mat]:
    # Q = I₂, H = [1 0]: 所有 V_i = diag(0, 1)，乘积范数为 1。
    return np.eye(2), np.array([[1.0, 0.0]])


class CaseResult(pydantic.BaseModel):
    suite: str
    index: int
    ok: bool
    details: dict = {}
    error: str | None = None


class SuiteReport(pydantic.BaseModel):
    suite: str
    seed: int
    cases: list[CaseResult]

    @pydantic.computed_field
    @property
    def ok(self) -> bool:
        return all(case.ok for case in self.cases)

    @pydantic.computed_field
    @property
    def failed(self) -> int:
        return sum(not case.ok for case in self.cases)


def _case_dims(rng: np.random.Generator, max_n: int) -> tuple[int, int]:
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(1, min(n, 3) + 1))
    return n, m


def _lemma2_case(seed: int, index: int, max_n: int, **_) -> CaseResult:
    rng = np.random.default_rng([seed, index])
    q, h = random_observable_pair(*_case_dims(rng, max_n), rng)
    alpha = lemma2_alpha(q, h)
    return CaseResult(suite="lemma2", index=index, ok=alpha < 1.0,
                      details={"n": q.shape[0], "m": h.shape[0], "alpha": alpha})


def _partitions_case(seed: int, index: int, max_n: int, k: int, **_) -> CaseResult:
    rng = np.random.default_rng([seed, index])
    q, h = random_observable_pair(*_case_dims(rng, max_n), rng)
    report = check_partition_identities(q, h, k, seed=seed + index)
    return CaseResult(suite="partitions", index=index, ok=report.ok, details=report.model_dump())


def _phi_limit_case(seed: int, index: int, max_n: int, k_max: int, **_) -> CaseResult:
    rng = np.random.default_rng([seed, index])
    q, h = random_observable_pair(*_case_dims(rng, min(max_n, PHI_LIMIT_MAX_N)), rng)
    topo = random_topology(int(rng.choice([3, 5])), rng)
    limit = check_phi_limit(q, h, topo, k_max)
    expansion = check_phi_expansion(q, h, topo, min(8, k_max))
    window = check_window_invariance(q, h, min(3 * q.shape[0], k_max))
    return CaseResult(
        suite="phi-limit", index=index, ok=limit.ok and expansion.ok and window.ok,
        details={"limit": limit.model_dump(), "expansion": expansion.model_dump(), "window": window.model_dump()},
    )


_SUITE_CASES: dict[str, Callable[..., CaseResult]] = {
    "lemma2": _lemma2_case,
    "partitions": _partitions_case,
    "phi-limit": _phi_limit_case,
}


def run_suite(suite: Suite = "all", seed: int = DEFAULT_SEED, cases: int = 10, k: int = 10,
              k_max: int = 1000, max_n: int = 6, inject_unobservable: bool = False,
              max_workers: int = VERIFY_WORKERS) -> SuiteReport:
    """
    在带种子的随机语料上运行所选的验证套件。用例在线程池中并发执行，
    报告按 (套件, 用例编号) 排序，与完成顺序无关。

    inject_unobservable=True 时额外加入 Q = I₂, H = [1 0] 的 lemma2 用例
    (不做假设检查)，它的 α = 1，因此整个报告失败。
    """
    if suite != "all" and suite not in _SUITE_CASES:
        raise InvalidInput(f"未知的验证套件: {suite}")
    selected = list(_SUITE_CASES) if suite == "all" else [suite]
    params = {"max_n": max_n, "k": k, "k_max": k_max}

    results: list[CaseResult] = []
    if inject_unobservable and "lemma2" in selected:
        q, h = unobservable_pair()
        alpha = lemma2_alpha(q, h, strict=False)
        log_system_event("warning", f"已注入不可观的 (Q, H)，α = {alpha:.6g}")
        results.append(CaseResult(suite="lemma2", index=-1, ok=alpha < 1.0,
                                  details={"n": 2, "m": 1, "alpha": alpha, "injected": True}))

    log_system_event("info", f"开始验证套件 {selected}，每个套件 {cases} 个用例 (seed={seed})。")
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        # future 映射回 (套件, 用例编号)，便于日志记录
        future_to_case = {}
        for name in selected:
            for index in range(cases):
                future = executor.submit(_SUITE_CASES[name], seed, index, **params)
                future_to_case[future] = (name, index)

        for future in as_completed(future_to_case):
            name, index = future_to_case[future]
            try:
                result = future.result()
            except Exception as e:
                log_system_event("error", f"❌ 用例 {name}#{index} 执行出错: {e}", in_worker=True)
                result = CaseResult(suite=name, index=index, ok=False, error=f"{type(e).__name__}: {e}")
            if result.ok:
                log_system_event("debug", f"✅ 用例 {name}#{index} 通过。", in_worker=True)
            else:
                log_system_event("warning", f"❌ 用例 {name}#{index} 未通过。", in_worker=True)
            results.append(result)

    order = {name: i for i, name in enumerate(selected)}
    results.sort(key=lambda r: (order[r.suite], r.index))
    report = SuiteReport(suite=suite, seed=seed, cases=results)
    log_system_event("info", f"验证套件完成: {len(results) - report.failed}/{len(results)} 通过。")
    return report
