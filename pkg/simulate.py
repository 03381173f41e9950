# =============================================================================
#         syncnet - 网络仿真 (simulate)
# =============================================================================
#
# 功能:
#   - 三类扩散耦合闭环的逐步仿真:
#       输出耦合: x_i⁺ = Ax_i + LC Σ_j λ_ij (x_j − x_i)
#       正交情形: ξ_i⁺ = Qξ_i + QHᵀH Σ_j λ_ij (ξ_j − ξ_i)
#       对偶问题: x_i⁺ = Aᵀx_i + CᵀK Σ_j λ_ij (x_j − x_i)
#     三者都写成 x_i⁺ = M x_i + N Σ_j λ_ij (x_j − x_i)。
#   - 预测同步轨迹 x̄(k) = (rᵀ ⊗ M^k) x(0)，按 x̄⁺ = M x̄ 递推。
#   - 每一步记录同步误差 e(k)、最大两两距离以及 r 加权平均的守恒残差。
#   - 轨迹 CSV 与摘要 JSON 输出；多个场景可以在线程池中并发运行。
#
# 状态统一存为 p × n 矩阵，第 i 行是第 i 个智能体的状态。
# 堆叠向量形式 [x_1; ...; x_p] 即该矩阵按行展开。
# =============================================================================

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import pydantic
from scipy.spatial.distance import pdist

from common import (
    DEFAULT_HORIZON,
    OVERFLOW_BOUND,
    SYNC_THRESHOLD,
    VERIFY_WORKERS,
    DivergenceDetected,
    InvalidInput,
    InvalidMatrix,
    log_system_event,
)
from numerics import Mat, as_matrix, require_square, spd_sqrt_pair
from synthesis import GainSynthesis
from sysmodel import LinearSystem
from topology import Topology, stacked_coupling

Mode = Literal["output_coupled", "orthogonal", "dual"]


# =============================================================================
# --- 第 1 步: 状态与闭环 ---
# =============================================================================

@dataclass(frozen=True, eq=False)
class NetworkState:
    k: int
    states: Mat

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim != 2:
            raise InvalidMatrix(f"状态需要是 p × n 矩阵，实际形状 {states.shape}")
        if not np.all(np.isfinite(states)):
            raise InvalidMatrix(f"第 {self.k} 步的状态含 NaN 或 Inf")
        object.__setattr__(self, "states", states)

    @property
    def p(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def stacked(self) -> np.ndarray:
        return self.states.ravel()


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    mode: Mode
    self_map: Mat
    coupling_map: Mat

    @classmethod
    def output_coupled(cls, sys: LinearSystem, gain: Mat) -> "ClosedLoop":
        gain = as_matrix(gain, "L")
        if gain.shape != (sys.n, sys.m):
            raise InvalidMatrix(f"L 的形状应为 {(sys.n, sys.m)}，实际 {gain.shape}")
        return cls("output_coupled", sys.a, gain @ sys.c)

    @classmethod
    def orthogonal(cls, q: Mat, h: Mat) -> "ClosedLoop":
        q = as_matrix(q, "Q")
        h = as_matrix(h, "H")
        n = require_square(q, "Q")
        if h.shape[1] != n:
            raise InvalidMatrix(f"H 的列数 {h.shape[1]} 与 Q 的维数 {n} 不一致")
        return cls("orthogonal", q, q @ h.T @ h)

    @classmethod
    def dual(cls, a_t: Mat, c_t: Mat, k_gain: Mat) -> "ClosedLoop":
        a_t = as_matrix(a_t, "Aᵀ")
        c_t = as_matrix(c_t, "Cᵀ")
        k_gain = as_matrix(k_gain, "K")
        n = require_square(a_t, "Aᵀ")
        if c_t.shape[0] != n or k_gain.shape != (c_t.shape[1], n):
            raise InvalidMatrix(
                f"对偶闭环维数不一致: Aᵀ {a_t.shape}, Cᵀ {c_t.shape}, K {k_gain.shape}"
            )
        return cls("dual", a_t, c_t @ k_gain)

    @property
    def n(self) -> int:
        return self.self_map.shape[0]

    def step(self, topo: Topology, states: Mat) -> Mat:
        # 逐智能体: 第 i 行 Σ_j λ_ij (x_j − x_i) = (Λx)_i − (Λ1)_i x_i
        diffusion = topo.lam @ states - topo.row_sums[:, None] * states
        return states @ self.self_map.T + diffusion @ self.coupling_map.T

    def step_stacked(self, topo: Topology, states: Mat) -> Mat:
        big = stacked_coupling(topo, self.self_map, self.coupling_map)
        return (big @ states.ravel()).reshape(states.shape)


def _advance(loop: ClosedLoop, topo: Topology, state: NetworkState, stacked: bool) -> NetworkState:
    if state.n != loop.n or state.p != topo.p:
        raise InvalidMatrix(f"状态形状 {state.states.shape} 与 (p={topo.p}, n={loop.n}) 不一致")
    nxt = loop.step_stacked(topo, state.states) if stacked else loop.step(topo, state.states)
    return NetworkState(state.k + 1, nxt)


def step_output_coupled(sys: LinearSystem, gain: Mat, topo: Topology, state: NetworkState,
                        stacked: bool = False) -> NetworkState:
    return _advance(ClosedLoop.output_coupled(sys, gain), topo, state, stacked)


def step_orthogonal(q: Mat, h: Mat, topo: Topology, state: NetworkState, stacked: bool = False) -> NetworkState:
    return _advance(ClosedLoop.orthogonal(q, h), topo, state, stacked)


def step_dual(a_t: Mat, c_t: Mat, k_gain: Mat, topo: Topology, state: NetworkState,
              stacked: bool = False) -> NetworkState:
    return _advance(ClosedLoop.dual(a_t, c_t, k_gain), topo, state, stacked)


# =============================================================================
# --- 第 2 步: 预测轨迹与辅助量 ---
# =============================================================================

def as_states(initial, p: int, n: int) -> Mat:
    # 接受堆叠向量 (p·n,) 或 p × n 矩阵。
    arr = np.array(initial, dtype=float)
    if arr.ndim == 1 and arr.size == p * n:
        arr = arr.reshape(p, n)
    if arr.shape != (p, n):
        raise InvalidMatrix(f"初始状态形状应为 ({p}, {n}) 或 ({p * n},)，实际 {np.shape(initial)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidMatrix("初始状态含 NaN 或 Inf")
    return arr


def weighted_average(topo: Topology, states: Mat) -> np.ndarray:
    # (rᵀ ⊗ I) x
    return topo.r @ states


def predicted_trajectory(a: Mat, topo: Topology, initial, k: int) -> np.ndarray:
    #
    # x̄(k) = (rᵀ ⊗ A^k) x(0)，由 r 加权初始平均逐步左乘 A 得到。
    # 对偶闭环传入 Aᵀ，正交情形传入 Q。
    #
    a = as_matrix(a, "A")
    n = require_square(a, "A")
    avg = weighted_average(topo, as_states(initial, topo.p, n))
    for _ in range(k):
        avg = a @ avg
    return avg


def initial_states(p: int, n: int, seed: int) -> Mat:
    # 每个智能体独立均匀分布于 [−1, 1]^n。
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(p, n))


def modal_coordinates(synth: GainSynthesis, states: Mat) -> tuple[Mat, Mat]:
    #
    # ξ_i = R^{1/2} U† x_i (单位圆部分, 正交坐标)，η_i = W† x_i (严格稳定部分)。
    # 返回 (p × n₁, p × n₂)。
    #
    split = synth.split
    xi = states @ split.u_dag.T
    if synth.n1:
        r_half, _ = spd_sqrt_pair(synth.r_mat)
        xi = xi @ r_half.T
    eta = states @ split.w_dag.T
    return xi, eta


def sync_error(states: Mat, target: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(states - target[None, :], axis=1)))


def disagreement(states: Mat) -> float:
    if states.shape[0] < 2:
        return 0.0
    return float(np.max(pdist(states)))


# =============================================================================
# --- 第 3 步: 场景与轨迹 ---
# =============================================================================

@dataclass(frozen=True, eq=False)
class Scenario:
    loop: ClosedLoop
    topo: Topology
    initial: Mat
    horizon: int = DEFAULT_HORIZON
    snapshot_stride: int = 1
    overflow_bound: float = OVERFLOW_BOUND
    sync_threshold: float = SYNC_THRESHOLD
    seed: int | None = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "initial", as_states(self.initial, self.topo.p, self.loop.n))
        if self.horizon < 0:
            raise InvalidInput(f"horizon 不能为负: {self.horizon}")
        if self.snapshot_stride < 1:
            raise InvalidInput(f"snapshot_stride 必须 ≥ 1: {self.snapshot_stride}")

    @property
    def mode(self) -> Mode:
        return self.loop.mode

    def digest(self) -> str:
        # 系统 / 增益 (M, N)、拓扑、初始状态、种子和步数的 SHA-256。
        sha = hashlib.sha256()
        header = {"mode": self.mode, "seed": self.seed, "horizon": self.horizon,
                  "stride": self.snapshot_stride, "p": self.topo.p, "n": self.loop.n}
        sha.update(json.dumps(header, sort_keys=True).encode("utf-8"))
        for arr in (self.loop.self_map, self.loop.coupling_map, self.topo.lam, self.initial):
            sha.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return sha.hexdigest()


class TraceSummary(pydantic.BaseModel):
    digest: str
    mode: str
    label: str = ""
    horizon: int
    p: int
    n: int
    initial_sync_error: float
    final_sync_error: float
    final_disagreement: float
    threshold: float
    synchronized: bool
    convergence_step: int | None
    conservation_residual: float | None


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    digest: str
    mode: Mode
    label: str
    threshold: float
    sync_error: np.ndarray
    disagreement: np.ndarray
    snapshots: list[NetworkState] = field(default_factory=list)
    conservation_residual: float | None = None

    @property
    def horizon(self) -> int:
        return len(self.sync_error) - 1

    def scaled_threshold(self) -> float:
        # 同步判据: e(k) ≤ threshold · max(1, e(0))
        return self.threshold * max(1.0, float(self.sync_error[0]))

    def convergence_step(self) -> int | None:
        hits = np.flatnonzero(self.sync_error <= self.scaled_threshold())
        return int(hits[0]) if hits.size else None

    def summary(self, p: int, n: int) -> TraceSummary:
        return TraceSummary(
            digest=self.digest,
            mode=self.mode,
            label=self.label,
            horizon=self.horizon,
            p=p,
            n=n,
            initial_sync_error=float(self.sync_error[0]),
            final_sync_error=float(self.sync_error[-1]),
            final_disagreement=float(self.disagreement[-1]),
            threshold=self.threshold,
            synchronized=bool(self.sync_error[-1] <= self.scaled_threshold()),
            convergence_step=self.convergence_step(),
            conservation_residual=self.conservation_residual,
        )


def run(scenario: Scenario) -> SimulationTrace:
    """
    逐步推进闭环并与预测轨迹比较。结果只依赖场景内容 (初始状态已由种子确定)。

    守恒量: rᵀ(Λ − diag(Λ1)) = 0，所以 (rᵀ ⊗ I)x(k) 严格按 x̄⁺ = M x̄ 演化；
    轨迹记录二者的最大偏差。正交情形下记录等价的旋转形式
    ‖Q^{−k}(rᵀ ⊗ I)Ξ(k) − (rᵀ ⊗ I)Ξ(0)‖。拓扑不连通时不记录。

    Raises:
        DivergenceDetected: 某一步状态的最大绝对值超过 overflow_bound。
    """
    loop, topo = scenario.loop, scenario.topo
    m = loop.self_map
    states = scenario.initial.copy()
    target = weighted_average(topo, states)
    origin = target.copy()
    back_rotation = np.eye(loop.n)

    errors = np.empty(scenario.horizon + 1)
    spreads = np.empty(scenario.horizon + 1)
    snapshots = []
    conservation = 0.0 if topo.connected else None

    for k in range(scenario.horizon + 1):
        errors[k] = sync_error(states, target)
        spreads[k] = disagreement(states)
        if conservation is not None:
            avg = weighted_average(topo, states)
            if loop.mode == "orthogonal":
                drift = np.linalg.norm(back_rotation @ avg - origin)
            else:
                drift = np.linalg.norm(avg - target)
            conservation = max(conservation, float(drift))
        if k % scenario.snapshot_stride == 0 or k == scenario.horizon:
            snapshots.append(NetworkState(k, states.copy()))
        if k == scenario.horizon:
            break

        states = loop.step(topo, states)
        target = m @ target
        if loop.mode == "orthogonal":
            # Q^{−(k+1)} = Q^{−k} Qᵀ
            back_rotation = back_rotation @ m.T
        peak = float(np.max(np.abs(states))) if np.all(np.isfinite(states)) else np.inf
        if peak > scenario.overflow_bound:
            raise DivergenceDetected(
                f"第 {k + 1} 步状态幅值 {peak:.3e} 超过上限 {scenario.overflow_bound:.3e}", k + 1, peak
            )

    trace = SimulationTrace(
        digest=scenario.digest(),
        mode=loop.mode,
        label=scenario.label,
        threshold=scenario.sync_threshold,
        sync_error=errors,
        disagreement=spreads,
        snapshots=snapshots,
        conservation_residual=conservation,
    )
    log_system_event(
        "debug",
        f"仿真完成 [{loop.mode}] p={topo.p}, n={loop.n}, 步数 {scenario.horizon}: "
        f"e(0)={errors[0]:.3e}, e(end)={errors[-1]:.3e}",
    )
    return trace


def run_batch(scenarios: list[Scenario], max_workers: int = VERIFY_WORKERS) -> list[SimulationTrace]:
    #
    # 多个场景并发运行 (场景之间无共享可变状态)，结果按输入顺序返回。
    # 任何场景失败时，在全部结束后抛出编号最小的那个异常。
    #
    traces: list[SimulationTrace | None] = [None] * len(scenarios)
    failures: dict[int, Exception] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        future_to_index = {executor.submit(run, scenario): i for i, scenario in enumerate(scenarios)}
        for future in as_completed(future_to_index):
            index = future_to_index[future]
            try:
                traces[index] = future.result()
                log_system_event("debug", f"✅ 场景 {index} 仿真完成。", in_worker=True)
            except Exception as e:
                log_system_event("error", f"❌ 场景 {index} 仿真失败: {e}", in_worker=True)
                failures[index] = e
    if failures:
        raise failures[min(failures)]
    return traces


# =============================================================================
# --- 第 4 步: 输出文件 ---
# =============================================================================

def _fmt(x: float) -> str:
    # 17 位有效数字可逐位还原 float64
    return format(float(x), ".17g")


def write_trace_csv(trace: SimulationTrace, path: str | Path, include_states: bool = False):
    # 每步一行: k, e(k), disagreement(k)；include_states 时追加快照状态 (非快照步留空)。
    path = Path(path)
    by_step = {snap.k: snap for snap in trace.snapshots} if include_states else {}
    state_cols = []
    if include_states and trace.snapshots:
        p, n = trace.snapshots[0].states.shape
        state_cols = [f"x{i}_{j}" for i in range(p) for j in range(n)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "sync_error", "disagreement", *state_cols])
        for k in range(trace.horizon + 1):
            row = [str(k), _fmt(trace.sync_error[k]), _fmt(trace.disagreement[k])]
            if state_cols:
                snap = by_step.get(k)
                row += [_fmt(v) for v in snap.stacked()] if snap else [""] * len(state_cols)
            writer.writerow(row)


def write_summary_json(summary: TraceSummary, path: str | Path):
    Path(path).write_text(summary.model_dump_json(indent=2) + "\n", encoding="utf-8")
