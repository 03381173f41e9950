# =============================================================================
#         syncnet - 网络拓扑 (topology)
# =============================================================================
#
# 功能:
#   - Topology: 行随机耦合矩阵 Λ 及其平稳向量 r (rᵀΛ = rᵀ, rᵀ1 = 1)。
#   - validate_connected: 离散时间意义下的连通性 (i)(ii)(iii)。
#   - decay_constants: |Λ^k − 1rᵀ| ≤ cσ^k 的经验常数 (c, σ)。
#   - stacked_coupling: 扩散耦合闭环的 Kronecker 堆叠形式。
#   - random_topology: 带种子的 Erdős–Rényi 随机连通拓扑生成器。
#
# Topology 在校验后不可变；r 首次访问时计算一次并缓存。
# =============================================================================

from dataclasses import dataclass
from functools import cached_property

import networkx as nx
import numpy as np
import pydantic
import scipy.linalg

from common import (
    DECAY_FLOOR,
    DECAY_HORIZON,
    NEGATIVE_CLIP_TOL,
    ROW_SUM_TOL,
    SLEM_SLACK,
    STATIONARY_CROSSCHECK_TOL,
    STATIONARY_POWER,
    STATIONARY_TOL,
    ConvergenceFailure,
    TopologyInvalid,
    log_system_event,
)
from numerics import Mat, as_matrix, require_square, spectral_norm


# =============================================================================
# --- 第 1 步: 连通性校验 ---
# =============================================================================

class ConnectivityVerdict(pydantic.BaseModel):
    ok: bool
    positive_diagonal: bool
    nonnegative: bool
    rows_sum_to_one: bool
    graph_connected: bool
    roots: list[int]
    violations: list[str]


def coupling_graph(lam: Mat) -> nx.DiGraph:
    # Λ 的图: 弧 (i, j) 存在 ⇔ λ_ij > 0 (i ≠ j)。
    p = lam.shape[0]
    graph = nx.DiGraph()
    graph.add_nodes_from(range(p))
    rows, cols = np.nonzero(lam > 0)
    graph.add_edges_from((int(i), int(j)) for i, j in zip(rows, cols) if i != j)
    return graph


def graph_roots(graph: nx.DiGraph) -> list[int]:
    # 所有其他节点都有路径到达的节点 (反向 BFS: 祖先集合覆盖全部节点)。
    everyone = graph.number_of_nodes()
    return [node for node in graph.nodes if len(nx.ancestors(graph, node)) == everyone - 1]


def validate_connected(lam: Mat) -> ConnectivityVerdict:
    #
    # (i) λ_ii > 0 (精确，无容差) 且 λ_ij ≥ 0;
    # (ii) 每行和为 1 (容差 ROW_SUM_TOL);
    # (iii) 图中存在一个从所有其他节点都可到达的节点。
    #
    lam = as_matrix(lam, "Λ")
    p = require_square(lam, "Λ")
    violations = []

    diag = np.diag(lam)
    bad_diag = [int(i) for i in np.flatnonzero(diag <= 0)]
    if bad_diag:
        violations.append(f"(i) 对角元必须严格为正，违反的行: {bad_diag}")
    negatives = [(int(i), int(j)) for i, j in zip(*np.nonzero(lam < 0))]
    if negatives:
        violations.append(f"(i) 存在负元素，位置: {negatives}")

    row_err = np.abs(lam.sum(axis=1) - 1.0)
    bad_rows = [int(i) for i in np.flatnonzero(row_err > ROW_SUM_TOL)]
    if bad_rows:
        violations.append(f"(ii) 行和不为 1 的行: {bad_rows}")

    roots = graph_roots(coupling_graph(lam))
    if not roots:
        violations.append(f"(iii) 图不连通: 不存在从所有其他节点可达的节点 (p={p})")

    return ConnectivityVerdict(
        ok=not violations,
        positive_diagonal=not bad_diag,
        nonnegative=not negatives,
        rows_sum_to_one=not bad_rows,
        graph_connected=bool(roots),
        roots=roots,
        violations=violations,
    )


# =============================================================================
# --- 第 2 步: 拓扑类型与平稳向量 ---
# =============================================================================

@dataclass(frozen=True, eq=False)
class Topology:
    lam: Mat
    connected: bool = True

    @classmethod
    def from_matrix(cls, lam: Mat, allow_disconnected: bool = False) -> "Topology":
        #
        # 条件 (i)(ii) 总是必需的；条件 (iii) 仅在 allow_disconnected=True 时放宽
        # (用于负对照仿真)。
        #
        lam = as_matrix(lam, "Λ")
        verdict = validate_connected(lam)
        structural = [v for v in verdict.violations if not v.startswith("(iii)")]
        if structural:
            raise TopologyInvalid("耦合矩阵不满足扩散耦合条件: " + "; ".join(structural), verdict.violations)
        if not verdict.graph_connected and not allow_disconnected:
            raise TopologyInvalid("耦合矩阵的图不连通", verdict.violations)
        if not verdict.graph_connected:
            log_system_event("warning", "拓扑不连通，按负对照运行 (r 取均匀权重)。")
        return cls(lam=lam, connected=verdict.graph_connected)

    @property
    def p(self) -> int:
        return self.lam.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self.lam.sum(axis=1)

    @cached_property
    def r(self) -> np.ndarray:
        if not self.connected:
            return np.full(self.p, 1.0 / self.p)
        return stationary_vector(self)


def stationary_vector(topo: Topology, power: int = STATIONARY_POWER) -> np.ndarray:
    #
    # r 取 (Λᵀ − I) 的零空间并归一化 (rᵀ1 = 1)，微小负值截断为 0；
    # 再用 Λ^power 的各行交叉验证。
    #
    # Raises:
    #     ConvergenceFailure: 零空间维数不为一、出现显著负分量，或两种方法不一致。
    #
    lam = topo.lam
    p = topo.p
    null = scipy.linalg.null_space(lam.T - np.eye(p), rcond=STATIONARY_TOL)
    if null.shape[1] != 1:
        raise ConvergenceFailure(f"(Λᵀ − I) 的零空间维数为 {null.shape[1]}，平稳向量不唯一")
    r = null[:, 0] / null[:, 0].sum()
    if np.any(r < -NEGATIVE_CLIP_TOL):
        raise ConvergenceFailure(f"平稳向量含显著负分量: {r.min():.3e}")
    r = np.clip(r, 0.0, None)
    r = r / r.sum()

    limit = np.linalg.matrix_power(lam, power)
    gap = float(np.max(np.abs(limit - r[None, :])))
    if gap > STATIONARY_CROSSCHECK_TOL:
        raise ConvergenceFailure(f"零空间解与 Λ^{power} 的行不一致: 最大偏差 {gap:.3e}")
    fixed_point = float(np.max(np.abs(r @ lam - r)))
    if fixed_point > STATIONARY_TOL:
        raise ConvergenceFailure(f"rᵀΛ = rᵀ 残差过大: {fixed_point:.3e}")
    return r


def second_eigenvalue_modulus(lam: Mat) -> float:
    mags = np.sort(np.abs(np.linalg.eigvals(lam)))[::-1]
    return float(mags[1]) if mags.size > 1 else 0.0


def decay_constants(topo: Topology, horizon: int = DECAY_HORIZON) -> tuple[float, float]:
    #
    # σ = 第二大特征值模长 + SLEM_SLACK;
    # c = max_{k ≤ horizon} |Λ^k − 1rᵀ| / σ^k，下限为 1。
    # 偏差低于 DECAY_FLOOR 的项视为舍入误差，不参与 c 的计算。
    #
    lam = topo.lam
    sigma = second_eigenvalue_modulus(lam) + SLEM_SLACK
    deviation = np.eye(topo.p) - np.outer(np.ones(topo.p), topo.r)
    log_c = 0.0
    for k in range(horizon + 1):
        d_k = spectral_norm(deviation)
        if d_k > DECAY_FLOOR:
            log_c = max(log_c, np.log(d_k) - k * np.log(sigma))
        # Λ·1rᵀ = 1rᵀ，所以 Λ^{k+1} − 1rᵀ = Λ(Λ^k − 1rᵀ)
        deviation = lam @ deviation
    return float(np.exp(log_c)), float(sigma)


# =============================================================================
# --- 第 3 步: 堆叠闭环形式 ---
# =============================================================================

def laplacian_part(topo: Topology) -> Mat:
    # Σ_j λ_ij (v_j − v_i) 的系数矩阵 Λ − diag(Λ1)。
    return topo.lam - np.diag(topo.row_sums)


def stacked_coupling(topo: Topology, self_map: Mat, coupling_map: Mat) -> Mat:
    # I_p ⊗ M + (Λ − diag(Λ1)) ⊗ N，对应 x_i⁺ = M x_i + N Σ_j λ_ij (x_j − x_i)。
    return np.kron(np.eye(topo.p), self_map) + np.kron(laplacian_part(topo), coupling_map)


# =============================================================================
# --- 第 4 步: 随机拓扑生成器 ---
# =============================================================================

def random_topology(p: int, rng: np.random.Generator, arc_prob: float = 0.5,
                    max_tries: int = 1000) -> Topology:
    #
    # Erdős–Rényi 有向弧 + 自环，正权重随机 (一般既不对称也不平衡)，
    # 行归一化后拒绝采样直到连通。
    #
    for attempt in range(max_tries):
        graph = nx.gnp_random_graph(p, arc_prob, seed=int(rng.integers(2**31 - 1)), directed=True)
        lam = np.zeros((p, p))
        for i, j in graph.edges:
            lam[i, j] = rng.uniform(0.2, 1.0)
        lam[np.diag_indices(p)] = rng.uniform(0.2, 1.0, p)
        lam = lam / lam.sum(axis=1, keepdims=True)
        if validate_connected(lam).ok:
            return Topology.from_matrix(lam)
    raise TopologyInvalid(f"{max_tries} 次采样后仍未得到连通拓扑 (p={p}, arc_prob={arc_prob})")


def ring_topology(p: int, self_weight: float = 0.5) -> Topology:
    # 带自环的有向环: 节点 i 只听节点 i+1。
    lam = self_weight * np.eye(p)
    for i in range(p):
        lam[i, (i + 1) % p] += 1.0 - self_weight
    return Topology.from_matrix(lam)
