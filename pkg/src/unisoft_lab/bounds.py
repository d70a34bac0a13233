"""Closed-form regret-bound calculators.

Everything here is plain double-precision arithmetic on scalars. The
constant-regret expressions are order-level: hidden constants are set to 1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

from .agents import BetaSchedule, beta

logger = logging.getLogger(__name__)

C1_PROOF_FLOOR = 8.0


@dataclass(frozen=True)
class ProblemConstants:
    d: int
    H: int
    delta: float
    delta_min: float
    lambda_plus: float
    lambda_reg: float = 1.0
    c1: float = 8.0
    c2: float = 1.0
    c_beta: float = 0.2

    def __post_init__(self):
        for name in ("d", "H", "delta", "delta_min", "lambda_plus", "lambda_reg", "c1", "c2"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name}: must be a positive finite number, got {value!r}")
        if self.delta >= 1:
            raise ValueError("delta: must lie in (0, 1)")
        if self.c_beta < 0:
            raise ValueError("c_beta: must be non-negative")
        if self.c1 < C1_PROOF_FLOOR:
            logger.warning("c1=%g is below the value %g assumed by the critical-time argument",
                           self.c1, C1_PROOF_FLOOR)

    @property
    def c1_below_floor(self) -> bool:
        return self.c1 < C1_PROOF_FLOOR

    def to_json(self) -> dict:
        return asdict(self)


def g_worstcase(k: int, pc: ProblemConstants, beta_k: float) -> float:
    """Anytime worst-case regret envelope after ``k`` episodes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    H, d = pc.H, pc.d
    return (H * beta_k * math.sqrt(2 * d * k * math.log(1 + k / pc.lambda_reg))
            + 2 * H * H * math.sqrt(k * math.log(2 * H * k / pc.delta)))


def default_g(pc: ProblemConstants, schedule: BetaSchedule | None = None):
    """``k -> g_worstcase(k)`` with the anytime LSVI confidence multiplier."""
    if schedule is None:
        schedule = BetaSchedule("anytime-lsvi", pc.c_beta, pc.delta)

    def g(k: int) -> float:
        return g_worstcase(k, pc, beta(schedule, k, pc.d, pc.H))

    return g


def _kappa_branches(pc: ProblemConstants, shift: int) -> tuple[float, float]:
    # shift=0 for LSVI-UCB, shift=1 lowers every power of d by one (ELEANOR)
    d, H, lp, dm, c1, c2, delta = pc.d, pc.H, pc.lambda_plus, pc.delta_min, pc.c1, pc.c2, pc.delta
    first = (48 * c1 ** 2 * H ** 4 * d ** (3 - shift) / lp ** 2
             * math.log(32 * c1 ** 2 * H ** 5 * d ** (4 - shift) / (lp ** 2 * delta)))
    second = (432 * c2 ** 2 * H ** 4 * d ** (2 - shift) / (dm ** 2 * lp ** 3)
              * math.log(288 * d ** (3 - shift) * H ** 5 * c2 ** 2 / (dm ** 2 * lp ** 3 * delta)))
    return first, second


def kappa_bar_lsvi_branches(pc: ProblemConstants) -> tuple[float, float]:
    return _kappa_branches(pc, 0)


def kappa_bar_eleanor_branches(pc: ProblemConstants) -> tuple[float, float]:
    return _kappa_branches(pc, 1)


def _pick(branches: tuple[float, float]) -> tuple[float, int]:
    first, second = branches
    return (first, 1) if first >= second else (second, 2)


def kappa_bar_lsvi(pc: ProblemConstants) -> tuple[float, int]:
    """Critical episode for LSVI-UCB; returns ``(value, binding branch)`` with branch 1 or 2."""
    return _pick(kappa_bar_lsvi_branches(pc))


def kappa_bar_eleanor(pc: ProblemConstants) -> tuple[float, int]:
    return _pick(kappa_bar_eleanor_branches(pc))


def constant_regret_expressions(pc: ProblemConstants, kappa_bar: float) -> dict:
    if not kappa_bar > 0:
        raise ValueError("kappa_bar must be positive")
    d, H, delta = pc.d, pc.H, pc.delta
    tau = H * kappa_bar
    return {
        "lsvi": d ** 3 * H ** 5 / pc.delta_min * math.log(d * H * H * kappa_bar / delta),
        "eleanor": H ** 1.5 * d * math.sqrt(tau * math.log(tau / delta)),
    }


def bounds_report(pc: ProblemConstants) -> dict:
    """Everything the ``bounds`` subcommand prints, as plain JSON-ready values."""
    k_lsvi, branch_lsvi = kappa_bar_lsvi(pc)
    k_el, branch_el = kappa_bar_eleanor(pc)
    lsvi_expr = constant_regret_expressions(pc, k_lsvi)["lsvi"]
    eleanor_expr = constant_regret_expressions(pc, k_el)["eleanor"]
    return {
        "constants": pc.to_json(),
        "kappa_bar_lsvi": k_lsvi,
        "kappa_bar_lsvi_branch": branch_lsvi,
        "kappa_bar_eleanor": k_el,
        "kappa_bar_eleanor_branch": branch_el,
        "constant_regret_lsvi": lsvi_expr,
        "constant_regret_eleanor": eleanor_expr,
        "order_level": True,
    }
