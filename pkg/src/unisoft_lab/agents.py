"""LSVI-UCB / LSVI-LEADER learners over tabulated feature maps.

LSVI-UCB is the one-representation case of LSVI-LEADER: the optimistic value
of each ``(h, s, a)`` is the minimum, over representations, of a ridge
prediction plus an elliptical bonus, capped at ``H``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import kernels
from .features import FeatureMap
from .mdp import DeterministicPolicy, ValueTables

BETA_KINDS = ("anytime-lsvi", "anytime-leader", "experiment-fixed-k")


@dataclass(frozen=True)
class BetaSchedule:
    """Confidence multiplier schedule.

    ``anytime-lsvi``:       c d H sqrt(log(2 d H k / delta))
    ``anytime-leader``:     c d H sqrt(N log(2 d N H k / delta))
    ``experiment-fixed-k``: c d H sqrt(log(d K)), or c d H sqrt(N log(N d K)) when N > 1
    """

    kind: str = "experiment-fixed-k"
    c_beta: float = 0.2
    delta: float = 0.05
    N: int = 1
    K: int | None = None

    def __post_init__(self):
        if self.kind not in BETA_KINDS:
            raise ValueError(f"schedule.kind: unknown kind {self.kind!r}")
        if self.c_beta < 0:
            raise ValueError("schedule.c_beta: must be non-negative")
        if not 0 < self.delta < 1:
            raise ValueError("schedule.delta: must lie in (0, 1)")
        if self.N < 1:
            raise ValueError("schedule.N: must be >= 1")
        if self.kind == "experiment-fixed-k" and (self.K is None or self.K < 1):
            raise ValueError("schedule.K: required (>= 1) for experiment-fixed-k")

    def with_n(self, n: int) -> "BetaSchedule":
        return BetaSchedule(self.kind, self.c_beta, self.delta, n, self.K)

    def to_json(self) -> dict:
        return {"kind": self.kind, "c_beta": self.c_beta, "delta": self.delta, "N": self.N, "K": self.K}


def beta(schedule: BetaSchedule, k: int, d: int, H: int) -> float:
    if k < 1:
        raise ValueError("episode index k must be >= 1")
    c, N = schedule.c_beta, schedule.N
    if schedule.kind == "anytime-lsvi":
        return c * d * H * math.sqrt(math.log(2 * d * H * k / schedule.delta))
    if schedule.kind == "anytime-leader":
        return c * d * H * math.sqrt(N * math.log(2 * d * N * H * k / schedule.delta))
    if N == 1:
        return c * d * H * math.sqrt(math.log(d * schedule.K))
    return c * d * H * math.sqrt(N * math.log(N * d * schedule.K))


def ridge_solve(Lam: np.ndarray, b: np.ndarray) -> np.ndarray:
    Lam = np.asarray(Lam, dtype=float)
    if Lam.ndim != 2 or Lam.shape[0] != Lam.shape[1] or not np.allclose(Lam, Lam.T, rtol=1e-12, atol=0):
        raise ValueError("design matrix must be square and symmetric")
    try:
        factor = cho_factor(Lam, lower=True)
    except LinAlgError:
        raise ValueError("design matrix is not positive definite") from None
    return cho_solve(factor, np.asarray(b, dtype=float))


class LeaderState:
    """Sufficient statistics of one learner.

    Features are stored padded to a common width ``D`` (zeros beyond ``d_h``);
    the matching design-matrix padding is ``lambda * I`` and never changes.
    """

    def __init__(self, reps: Sequence[FeatureMap], lambda_reg: float = 1.0):
        if not reps:
            raise ValueError("need at least one representation")
        if lambda_reg <= 0:
            raise ValueError("lambda_reg must be positive")
        self.reps = list(reps)
        self.lambda_reg = float(lambda_reg)
        H = reps[0].horizon
        S, A = reps[0].phi[0].shape[:2]
        for fm in reps:
            if fm.horizon != H or fm.phi[0].shape[:2] != (S, A):
                raise ValueError("representations disagree on (H, S, A)")
        N = len(reps)
        self.dims = np.array([fm.dims for fm in reps], dtype=np.int64)
        D = int(self.dims.max())
        self.phi = np.zeros((N, H, S, A, D))
        for j, fm in enumerate(reps):
            for h in range(H):
                self.phi[j, h, :, :, : fm.dims[h]] = fm.phi[h]
        self.design = np.zeros((N, H, D, D))
        self.design[...] = self.lambda_reg * np.eye(D)
        self.visit_count = np.zeros((H, S, A), dtype=np.int64)
        self.reward_sum = np.zeros((H, S, A))
        self.transition_count = np.zeros((H, S, A, S), dtype=np.int64)
        self.qbar = np.zeros((H, S, A))
        self.k = 0

    @property
    def shape(self) -> tuple[int, int, int]:
        _, H, S, A, _ = self.phi.shape
        return S, A, H

    @property
    def num_reps(self) -> int:
        return self.phi.shape[0]

    def design_matrix(self, h: int, j: int) -> np.ndarray:
        d = self.dims[j, h]
        return self.design[j, h, :d, :d]

    def features(self, h: int, j: int) -> np.ndarray:
        return self.phi[j, h, :, :, : self.dims[j, h]]

    def betas(self, schedule: BetaSchedule, k: int) -> np.ndarray:
        """``(H, N)`` confidence multipliers for episode ``k``."""
        _, _, H = self.shape
        return np.array([[beta(schedule, k, int(self.dims[j, h]), H) for j in range(self.num_reps)]
                         for h in range(H)])

    def snapshot(self) -> dict:
        """Plain-JSON dump of the statistics (used by ``run --dump-agent-state``)."""
        return {
            "episode": self.k,
            "lambda_reg": self.lambda_reg,
            "dims": self.dims.tolist(),
            "design": [[self.design_matrix(h, j).tolist() for h in range(self.shape[2])]
                       for j in range(self.num_reps)],
            "visit_count": self.visit_count.tolist(),
            "reward_sum": self.reward_sum.tolist(),
            "transition_count": self.transition_count.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)


def leader_plan(state: LeaderState, schedule: BetaSchedule, k: int | None = None,
                floor: bool = True, backend=None) -> tuple[np.ndarray, DeterministicPolicy]:
    """Optimistic Q-table and its greedy policy for episode ``k`` (default: next episode)."""
    k = state.k + 1 if k is None else k
    S, A, H = state.shape
    policy = np.zeros((H, S), dtype=np.int64)
    kernels.get_backend(backend).plan(
        state.phi, state.design, state.reward_sum, state.transition_count,
        np.ascontiguousarray(state.betas(schedule, k)), float(H), floor, state.qbar, policy)
    return state.qbar.copy(), DeterministicPolicy(policy)


def leader_update(state: LeaderState, h: int, s: int, a: int, r: float, s_next: int) -> None:
    S, A, H = state.shape
    if not (0 <= h < H and 0 <= s < S and 0 <= a < A and 0 <= s_next < S):
        raise IndexError(f"transition {(h, s, a, s_next)} out of range")
    state.visit_count[h, s, a] += 1
    state.reward_sum[h, s, a] += r
    state.transition_count[h, s, a, s_next] += 1
    f = state.phi[:, h, s, a]
    state.design[:, h] += f[:, :, None] * f[:, None, :]


def aggregated_regression(state: LeaderState, h: int, j: int,
                          v_next: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Design matrix, target vector and ridge solution for ``(h, j)`` from tabulated counts."""
    X = state.features(h, j)
    Lam = state.lambda_reg * np.eye(X.shape[-1]) + np.einsum(
        "sa,sai,saj->ij", state.visit_count[h], X, X)
    target = state.reward_sum[h] + state.transition_count[h] @ v_next
    b = np.einsum("sad,sa->d", X, target)
    return Lam, b, ridge_solve(Lam, b)


def bonus_widths(state: LeaderState, h: int, j: int) -> np.ndarray:
    """``||phi(s, a)||`` in the inverse design-matrix norm, shape ``(S, A)``."""
    X = state.features(h, j)
    L = np.linalg.cholesky(state.design_matrix(h, j))
    Z = np.linalg.solve(L, X.reshape(-1, X.shape[-1]).T)
    return np.sqrt((Z * Z).sum(axis=0)).reshape(X.shape[:2])


@dataclass
class OptimismAudit:
    fraction: float
    violations: list


def optimism_audit(qbar: np.ndarray, vstar: ValueTables, init_dist: np.ndarray,
                   tol: float = 1e-9) -> OptimismAudit:
    """Share of start states (in the support of ``init_dist``) where the plan is optimistic."""
    if qbar.shape != vstar.Q.shape:
        raise ValueError("plan and value tables disagree on shape")
    starts = np.flatnonzero(np.asarray(init_dist) > 0)
    ok = qbar[0].max(axis=1)[starts] >= vstar.V[0, starts] - tol
    violations = [tuple(int(x) for x in idx) for idx in np.argwhere(qbar < vstar.Q - tol)]
    return OptimismAudit(float(ok.mean()), violations)
