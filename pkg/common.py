# =============================================================================
#         syncnet - 公共模块 (全局配置 / 异常 / 日志)
# =============================================================================
#
# 功能:
#   - 集中存放所有数值容差与默认参数，其余模块只从这里读取。
#   - 定义统一的异常层级，CLI 据此把错误映射为稳定的退出码。
#   - 提供带时间戳的日志函数 log_system_event。
#
# =============================================================================

import os
import sys
import time

# =============================================================================
# --- 第 1 步: 全局配置 ---
# =============================================================================

# -- A. 谱分解与秩判定 --
UNIT_TOL = 1e-8           # 单位圆特征值的判定带宽
AMBIGUITY_FACTOR = 100.0  # 严格稳定要求 |λ| <= 1 - AMBIGUITY_FACTOR * unit_tol
CLUSTER_TOL = 1e-6        # 重特征值聚类半径 (Jordan 块会把特征值扰开约 eps^(1/k))
RANK_TOL = 1e-10          # 数值秩: 奇异值 > RANK_TOL * max(σ_max, 1)
SYLVESTER_COND_FLOOR = 1e-12
SYLVESTER_RESIDUAL_TOL = 1e-10

# -- B. 网络拓扑 --
ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
STATIONARY_CROSSCHECK_TOL = 1e-8
STATIONARY_POWER = 512
NEGATIVE_CLIP_TOL = 1e-12
SLEM_SLACK = 1e-12
DECAY_FLOOR = 1e-13       # 低于此值的 |Λ^k - 1rᵀ| 视为舍入误差
DECAY_HORIZON = 200

# -- C. 增益综合 --
R_TOL = 1e-12
R_MAX_ITER = 10**6
R_LINEAR_TERMS = 32       # Cesàro 平均先逐项累加的项数，之后按倍增推进
R_REFINE_BAND = 1e-3      # 只有残差已低于此值的平均值才允许做不变二次型投影修正

# -- D. 仿真 --
OVERFLOW_BOUND = 1e12
SYNC_THRESHOLD = 1e-6
DEFAULT_HORIZON = 1000
DEFAULT_SEED = 0

# -- E. 证明层验证 --
ENUMERATION_MAX_K = 14
PROJECTOR_TOL = 1e-12
IDENTITY_TOL = 1e-10
RECURRENCE_TOL = 1e-12
PHI_LIMIT_TOL = 1e-6
VERIFY_WORKERS = 4

# -- F. 环境变量 --
SEED_ENV_VAR = "SYNCNET_SEED"
LOG_LEVEL_ENV_VAR = "SYNCNET_LOG_LEVEL"


def seed_override(default: int | None = None) -> int | None:
    # 如果设置了 SYNCNET_SEED，则它覆盖场景和语料库中的所有种子。
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise InvalidInput(f"环境变量 {SEED_ENV_VAR} 不是整数: {raw!r}") from e


# =============================================================================
# --- 第 2 步: 异常定义 ---
# =============================================================================

class SyncNetError(Exception):
    # 所有领域错误的基类。CLI 将其映射为退出码 1。
    pass


class InvalidInput(SyncNetError, ValueError):
    # 输入数据本身有问题 (文件格式、环境变量、场景字段)。退出码 2。
    pass


class InvalidMatrix(InvalidInput):
    # 矩阵形状不对、含 NaN/Inf，或无法解析。
    pass


class ZeroRange(SyncNetError):
    pass


class SplitFailed(SyncNetError):
    def __init__(self, message: str, magnitudes: list[float] | None = None):
        super().__init__(message)
        self.magnitudes = magnitudes or []


class NearSingular(SyncNetError):
    pass


class AssumptionViolated(SyncNetError):
    # 携带失败检查器的诊断信息 (dict)，以便一次性报告所有问题。
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RankDeficientCU(SyncNetError):
    def __init__(self, message: str, rank: int, m: int):
        super().__init__(message)
        self.rank = rank
        self.m = m


class NoConvergence(SyncNetError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConvergenceFailure(SyncNetError):
    pass


class TopologyInvalid(InvalidInput):
    # 拓扑矩阵不满足 (i)/(ii)，或未声明允许时图不连通。退出码 2。
    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


class InvalidScenario(InvalidInput):
    # 场景文件自带的 (Q, H) 不满足正交情形的前提。退出码 2。
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DivergenceDetected(SyncNetError):
    def __init__(self, message: str, step: int, magnitude: float):
        super().__init__(message)
        self.step = step
        self.magnitude = magnitude


class TooLarge(SyncNetError):
    pass


# =============================================================================
# --- 第 3 步: 日志 ---
# =============================================================================

_LEVEL_ORDER = {"debug": 10, "info": 20, "warning": 30, "error": 40, "critical": 50}


def _min_log_level() -> int:
    name = os.environ.get(LOG_LEVEL_ENV_VAR, "info").strip().lower()
    return _LEVEL_ORDER.get(name, _LEVEL_ORDER["info"])


def log_system_event(level: str, message: str, in_worker=False):
    # 一个简单的带时间戳的日志记录器。
    # 输出到 stderr，stdout 留给 JSON 报告。
    # in_worker 用于区分语料库并发任务线程中的日志。
    if _LEVEL_ORDER.get(level.lower(), 20) < _min_log_level():
        return
    timestamp = time.strftime('%Y-%m-%d %H:%M:%S')
    worker_tag = "[WORKER]" if in_worker else "[SYSTEM]"
    prefix = f"[{timestamp} {worker_tag} {level.upper()}]"
    print(f"{prefix} {message}", file=sys.stderr, flush=True)
