# =============================================================================
#         syncnet - 命令行入口 (cli)
# =============================================================================
#
# 子命令:
#   check       检查系统假设 (中性稳定、可检测、可观) 与拓扑连通性。
#   synthesize  由 (A, C) 综合输出耦合增益 L，写出综合报告 (含对偶增益 K = Lᵀ)。
#   simulate    运行场景文件描述的闭环仿真，写出轨迹 CSV 与摘要 JSON。
#   verify      在带种子的随机语料上运行证明层验证套件。
#
# 退出码 (稳定约定):
#   0  全部通过
#   1  领域失败 (假设不成立、收敛失败、发散、验证未通过)
#   2  输入错误 (JSON 格式、文件不存在、矩阵非法、拓扑不合法)
#
# 环境变量:
#   SYNCNET_SEED       覆盖场景与语料库中的所有种子。
#   SYNCNET_LOG_LEVEL  日志最低级别 (debug / info / warning / error / critical)。
#
# 报告输出到 stdout (JSON)，日志输出到 stderr。
# =============================================================================

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Literal

import numpy as np
import pydantic

from common import (
    CLUSTER_TOL,
    DEFAULT_HORIZON,
    DEFAULT_SEED,
    ENUMERATION_MAX_K,
    OVERFLOW_BOUND,
    R_MAX_ITER,
    R_TOL,
    RANK_TOL,
    SYNC_THRESHOLD,
    UNIT_TOL,
    VERIFY_WORKERS,
    InvalidInput,
    InvalidScenario,
    SyncNetError,
    log_system_event,
    seed_override,
)
from simulate import ClosedLoop, Mode, Scenario, initial_states, run, write_summary_json, write_trace_csv
from synthesis import GainSynthesis, SynthesisOptions, SynthesisResiduals, synthesize, synthesize_dual
from sysmodel import AssumptionReport, LinearSystem, assess, check_b_assumptions
from topology import ConnectivityVerdict, Topology, validate_connected
from verify import run_suite

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT_ERROR = 2


# =============================================================================
# --- 第 1 步: 文件格式 (Pydantic) ---
# =============================================================================

class MatrixFile(pydantic.BaseModel):
    """按行优先存储的实矩阵。"""
    model_config = pydantic.ConfigDict(extra="forbid")

    name: str = ""
    rows: int = pydantic.Field(ge=0)
    cols: int = pydantic.Field(ge=0)
    data: list[float]

    @pydantic.model_validator(mode="after")
    def _check_shape(self):
        if len(self.data) != self.rows * self.cols:
            raise ValueError(f"矩阵 {self.name!r}: data 长度 {len(self.data)} ≠ rows×cols = {self.rows * self.cols}")
        if not all(math.isfinite(x) for x in self.data):
            raise ValueError(f"矩阵 {self.name!r}: data 含 NaN 或 Inf")
        return self

    def to_array(self) -> np.ndarray:
        return np.array(self.data, dtype=float).reshape(self.rows, self.cols)

    @classmethod
    def from_array(cls, name: str, arr: np.ndarray) -> "MatrixFile":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        # float 的 JSON 表示是最短的可逐位还原的十进制 (至多 17 位有效数字)
        return cls(name=name, rows=arr.shape[0], cols=arr.shape[1], data=[float(x) for x in arr.ravel()])


class SystemFile(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra="forbid")

    name: str = ""
    a: MatrixFile
    c: MatrixFile

    def to_system(self) -> LinearSystem:
        return LinearSystem(self.a.to_array(), self.c.to_array())


class TopologyFile(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra="forbid", populate_by_name=True)

    name: str = ""
    lam: MatrixFile = pydantic.Field(alias="lambda")


class RandomInitial(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra="forbid")

    seed: int = DEFAULT_SEED
    distribution: Literal["uniform"] = "uniform"


class ExplicitInitial(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra="forbid")

    states: list[list[float]]


class ScenarioTolerances(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(extra="forbid")

    unit_tol: float = pydantic.Field(default=UNIT_TOL, gt=0)
    cluster_tol: float = pydantic.Field(default=CLUSTER_TOL, gt=0)
    rank_tol: float = pydantic.Field(default=RANK_TOL, gt=0)
    r_tol: float = pydantic.Field(default=R_TOL, gt=0)
    r_max_iter: int = pydantic.Field(default=R_MAX_ITER, ge=1)
    overflow_bound: float = pydantic.Field(default=OVERFLOW_BOUND, gt=0)
    sync_threshold: float = pydantic.Field(default=SYNC_THRESHOLD, gt=0)


class ScenarioFile(pydantic.BaseModel):
    """
    仿真场景。system / topology 可以内联，也可以是相对于场景文件所在目录的路径。
    output_coupled 与 dual 模式需要 system；orthogonal 模式需要 q 和 h。
    gain 为 "synthesize" 时现场综合 (dual 模式下为 K = Lᵀ)。
    """
    model_config = pydantic.ConfigDict(extra="forbid")

    name: str = ""
    mode: Mode = "output_coupled"
    system: SystemFile | str | None = None
    topology: TopologyFile | str
    gain: MatrixFile | Literal["synthesize"] = "synthesize"
    reduce_outputs: bool = False
    q: MatrixFile | None = None
    h: MatrixFile | None = None
    initial: ExplicitInitial | RandomInitial = pydantic.Field(default_factory=RandomInitial)
    horizon: int = pydantic.Field(default=DEFAULT_HORIZON, ge=0)
    snapshot_stride: int = pydantic.Field(default=1, ge=1)
    tolerances: ScenarioTolerances = pydantic.Field(default_factory=ScenarioTolerances)
    allow_disconnected: bool = False
    include_states: bool = False

    @pydantic.model_validator(mode="after")
    def _check_mode_fields(self):
        if self.mode == "orthogonal" and (self.q is None or self.h is None):
            raise ValueError("orthogonal 模式需要 q 和 h")
        if self.mode != "orthogonal" and self.system is None:
            raise ValueError(f"{self.mode} 模式需要 system")
        return self


class SynthesisReport(pydantic.BaseModel):
    name: str = ""
    n: int
    m: int
    n1: int
    n2: int
    l: MatrixFile
    k: MatrixFile
    r: MatrixFile
    h: MatrixFile
    q: MatrixFile
    transform: MatrixFile | None = None
    residuals: SynthesisResiduals
    alpha: float | None


class CheckReport(pydantic.BaseModel):
    system: AssumptionReport
    topology: ConnectivityVerdict | None = None
    ok: bool


def load_json_model(path: str | Path, model: type[pydantic.BaseModel]):
    text = Path(path).read_text(encoding="utf-8")
    # 先用 json 解析，让格式错误以 JSONDecodeError 的形式报告
    return model.model_validate(json.loads(text))


def resolve_system(ref: SystemFile | str, base_dir: Path) -> LinearSystem:
    if isinstance(ref, str):
        ref = load_json_model(base_dir / ref, SystemFile)
    return ref.to_system()


def resolve_topology(ref: TopologyFile | str, base_dir: Path) -> np.ndarray:
    if isinstance(ref, str):
        ref = load_json_model(base_dir / ref, TopologyFile)
    return ref.lam.to_array()


def emit(report: pydantic.BaseModel):
    print(report.model_dump_json(indent=2), flush=True)


# =============================================================================
# --- 第 2 步: 子命令 ---
# =============================================================================

def cmd_check(args) -> int:
    system = load_json_model(args.system, SystemFile).to_system()
    report = assess(system, unit_tol=args.unit_tol, cluster_tol=args.cluster_tol, rank_tol=args.rank_tol)
    topo_verdict = None
    if args.topology:
        lam = load_json_model(args.topology, TopologyFile).lam.to_array()
        topo_verdict = validate_connected(lam)
    ok = report.ok and (topo_verdict is None or topo_verdict.ok)
    emit(CheckReport(system=report, topology=topo_verdict, ok=ok))
    if ok:
        log_system_event("info", "✅ 所有检查均已通过。")
        return EXIT_OK
    for reason in report.neutrally_stable.reasons:
        log_system_event("error", f"❌ 中性稳定: {reason}")
    if not report.detectable.ok:
        log_system_event("error", f"❌ 不可检测的模态: {[m.model_dump() for m in report.detectable.undetectable_modes]}")
    for violation in (topo_verdict.violations if topo_verdict else []):
        log_system_event("error", f"❌ 拓扑: {violation}")
    return EXIT_FAILURE


def _synthesis_options(args, reduce_outputs: bool = False) -> SynthesisOptions:
    return SynthesisOptions(
        unit_tol=args.unit_tol, cluster_tol=args.cluster_tol, rank_tol=args.rank_tol,
        r_tol=args.r_tol, r_max_iter=args.r_max_iter, reduce_outputs=reduce_outputs,
    )


def synthesis_report(name: str, system: LinearSystem, synth: GainSynthesis) -> SynthesisReport:
    return SynthesisReport(
        name=name,
        n=system.n,
        m=system.m,
        n1=synth.n1,
        n2=synth.n2,
        l=MatrixFile.from_array("L", synth.l),
        k=MatrixFile.from_array("K", synth.l.T),
        r=MatrixFile.from_array("R", synth.r_mat),
        h=MatrixFile.from_array("H", synth.h),
        q=MatrixFile.from_array("Q", synth.q),
        transform=MatrixFile.from_array("T", synth.transform) if synth.transform is not None else None,
        residuals=synth.residuals,
        alpha=synth.alpha,
    )


def cmd_synthesize(args) -> int:
    spec = load_json_model(args.system, SystemFile)
    system = spec.to_system()
    log_system_event("info", f"开始综合增益: n={system.n}, m={system.m}")
    synth = synthesize(system, _synthesis_options(args, args.reduce_outputs))
    report = synthesis_report(spec.name, system, synth)
    Path(args.out).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    emit(report)
    log_system_event("info", f"✅ 综合完成 (n₁={synth.n1})，报告已写入 {args.out}")
    return EXIT_OK


def build_scenario(spec: ScenarioFile, base_dir: Path, allow_disconnected: bool = False,
                   tolerances: ScenarioTolerances | None = None) -> Scenario:
    #
    # 把场景文件解析为可运行的 Scenario: 解析引用、校验拓扑、按需综合增益、
    # 生成初始状态。SYNCNET_SEED 覆盖场景中的种子。
    #
    tol = tolerances or spec.tolerances
    lam = resolve_topology(spec.topology, base_dir)
    topo = Topology.from_matrix(lam, allow_disconnected=spec.allow_disconnected or allow_disconnected)
    opts = SynthesisOptions(
        unit_tol=tol.unit_tol, cluster_tol=tol.cluster_tol, rank_tol=tol.rank_tol,
        r_tol=tol.r_tol, r_max_iter=tol.r_max_iter, reduce_outputs=spec.reduce_outputs,
    )

    if spec.mode == "orthogonal":
        q, h = spec.q.to_array(), spec.h.to_array()
        verdict = check_b_assumptions(q, h)
        if not verdict.ok:
            raise InvalidScenario(
                "场景中的 (Q, H) 不满足正交、行正交规范与可观条件", {"b_assumptions": verdict.model_dump()}
            )
        loop = ClosedLoop.orthogonal(q, h)
    else:
        system = resolve_system(spec.system, base_dir)
        synthesize_gain = spec.gain == "synthesize"
        if spec.mode == "output_coupled":
            gain = synthesize(system, opts).l if synthesize_gain else spec.gain.to_array()
            loop = ClosedLoop.output_coupled(system, gain)
        else:
            k_gain = synthesize_dual(system.a.T, system.c.T, opts) if synthesize_gain else spec.gain.to_array()
            loop = ClosedLoop.dual(system.a.T, system.c.T, k_gain)

    seed = None
    if isinstance(spec.initial, ExplicitInitial):
        initial = np.array(spec.initial.states, dtype=float)
    else:
        seed = seed_override(spec.initial.seed)
        initial = initial_states(topo.p, loop.n, seed)

    return Scenario(
        loop=loop, topo=topo, initial=initial, horizon=spec.horizon,
        snapshot_stride=spec.snapshot_stride, overflow_bound=tol.overflow_bound,
        sync_threshold=tol.sync_threshold, seed=seed, label=spec.name,
    )


def cmd_simulate(args) -> int:
    scenario_path = Path(args.scenario)
    spec = load_json_model(scenario_path, ScenarioFile)
    overrides = {
        key: value for key, value in
        (("overflow_bound", args.overflow_bound), ("sync_threshold", args.sync_threshold))
        if value is not None
    }
    tolerances = spec.tolerances.model_copy(update=overrides) if overrides else None
    scenario = build_scenario(spec, scenario_path.parent, args.allow_disconnected, tolerances)

    log_system_event("info", f"开始仿真 [{scenario.mode}] p={scenario.topo.p}, n={scenario.loop.n}, 步数 {scenario.horizon}")
    trace = run(scenario)
    summary = trace.summary(scenario.topo.p, scenario.loop.n)

    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    trace_path = prefix.parent / f"{prefix.name}_trace.csv"
    summary_path = prefix.parent / f"{prefix.name}_summary.json"
    write_trace_csv(trace, trace_path, include_states=spec.include_states or args.include_states)
    write_summary_json(summary, summary_path)
    emit(summary)

    marker = "✅" if summary.synchronized else "⚠️"
    log_system_event(
        "info",
        f"{marker} 仿真结束: e({summary.horizon}) = {summary.final_sync_error:.3e}，"
        f"轨迹 {trace_path}，摘要 {summary_path}",
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = seed_override(args.seed)
    report = run_suite(
        args.suite, seed=seed, cases=args.cases, k=args.k, k_max=args.k_max, max_n=args.max_n,
        inject_unobservable=args.inject_unobservable, max_workers=args.workers,
    )
    if args.out:
        Path(args.out).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    emit(report)
    return EXIT_OK if report.ok else EXIT_FAILURE


# =============================================================================
# --- 第 3 步: 参数解析与主程序 ---
# =============================================================================

def _add_spectral_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--unit-tol", type=float, default=UNIT_TOL, help=f"单位圆判定带宽 (默认 {UNIT_TOL:g})")
    parser.add_argument("--cluster-tol", type=float, default=CLUSTER_TOL, help=f"重特征值聚类半径 (默认 {CLUSTER_TOL:g})")
    parser.add_argument("--rank-tol", type=float, default=RANK_TOL, help=f"数值秩相对阈值 (默认 {RANK_TOL:g})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="syncnet", description="中性稳定线性系统网络的增益综合、仿真与验证。")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="检查系统假设与拓扑连通性")
    check.add_argument("system", help="系统文件 (JSON: {a, c})")
    check.add_argument("--topology", help="拓扑文件 (JSON: {lambda})")
    _add_spectral_flags(check)
    check.set_defaults(handler=cmd_check)

    synth = sub.add_parser("synthesize", help="综合输出耦合增益 L")
    synth.add_argument("system", help="系统文件 (JSON: {a, c})")
    synth.add_argument("--out", required=True, help="综合报告输出路径")
    synth.add_argument("--reduce-outputs", action="store_true", help="rank(CU) < m 时压缩输出而不是报错")
    _add_spectral_flags(synth)
    synth.add_argument("--r-tol", type=float, default=R_TOL, help=f"FᵀRF = R 的相对残差 (默认 {R_TOL:g})")
    synth.add_argument("--r-max-iter", type=int, default=R_MAX_ITER, help=f"Cesàro 平均的最大项数 (默认 {R_MAX_ITER})")
    synth.set_defaults(handler=cmd_synthesize)

    sim = sub.add_parser("simulate", help="运行场景仿真")
    sim.add_argument("scenario", help="场景文件 (JSON)")
    sim.add_argument("--out", required=True, help="输出前缀，生成 <prefix>_trace.csv 与 <prefix>_summary.json")
    sim.add_argument("--allow-disconnected", action="store_true", help="允许不连通拓扑 (负对照)")
    sim.add_argument("--include-states", action="store_true", help="在轨迹 CSV 中写出快照状态")
    sim.add_argument("--overflow-bound", type=float, default=None, help=f"发散判定上限 (默认 {OVERFLOW_BOUND:g})")
    sim.add_argument("--sync-threshold", type=float, default=None, help=f"同步判定阈值 (默认 {SYNC_THRESHOLD:g})")
    sim.set_defaults(handler=cmd_simulate)

    ver = sub.add_parser("verify", help="运行证明层验证套件")
    ver.add_argument("suite", choices=["lemma2", "partitions", "phi-limit", "all"])
    ver.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ver.add_argument("--cases", type=int, default=10, help="每个套件的随机用例数")
    ver.add_argument("--k", type=int, default=10, help=f"M_(ℓ,k) 的 k (≤ {ENUMERATION_MAX_K})")
    ver.add_argument("--k-max", type=int, default=1000, help="Φ(k, 0) 的迭代步数")
    ver.add_argument("--max-n", type=int, default=6, help="随机 (Q, H) 的最大维数")
    ver.add_argument("--inject-unobservable", action="store_true", help="加入不可观的 (Q, H) 作为负对照")
    ver.add_argument("--workers", type=int, default=VERIFY_WORKERS)
    ver.add_argument("--out", help="把验证报告另存为 JSON 文件")
    ver.set_defaults(handler=cmd_verify)
    return parser


def _log_diagnostics(error: Exception) -> None:
    diagnostics = getattr(error, "diagnostics", None)
    if diagnostics:
        log_system_event("error", f"诊断信息: {json.dumps(diagnostics, ensure_ascii=False, default=str)}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (pydantic.ValidationError, json.JSONDecodeError, OSError, InvalidInput) as e:
        log_system_event("error", f"输入错误: {e}")
        _log_diagnostics(e)
        return EXIT_INPUT_ERROR
    except SyncNetError as e:
        log_system_event("error", f"{type(e).__name__}: {e}")
        _log_diagnostics(e)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
