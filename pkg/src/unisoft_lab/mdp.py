"""Finite-horizon tabular MDPs and exact dynamic programming.

Stages are indexed ``0 .. H-1`` throughout the package. Arrays follow the
layout ``reward[h, s, a]`` and ``transition[h, s, a, s']``; the value at stage
``H`` is identically zero and never stored.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12
TIE_TOL = 1e-9

NOISE_KINDS = ("bernoulli", "gaussian", "deterministic")


class MdpError(ValueError):
    """Raised when an MDP (or something built on one) is malformed."""


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "bernoulli"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise MdpError(f"noise_model: unknown kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise MdpError("noise_model: gaussian sigma must be positive")

    def to_json(self):
        if self.kind == "gaussian":
            return {"kind": "gaussian", "sigma": self.sigma}
        return {"kind": self.kind}

    @classmethod
    def from_json(cls, obj) -> "NoiseModel":
        if isinstance(obj, str):
            return cls(obj.lower())
        return cls(str(obj["kind"]).lower(), float(obj.get("sigma", 1.0)))


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Time-inhomogeneous finite-horizon MDP with mean rewards."""

    reward: np.ndarray
    transition: np.ndarray
    init_dist: np.ndarray
    noise_model: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        reward = _frozen(self.reward)
        transition = _frozen(self.transition)
        init_dist = _frozen(self.init_dist)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "init_dist", init_dist)

        if reward.ndim != 3 or min(reward.shape) < 1:
            raise MdpError(f"reward: expected shape (H, S, A), got {reward.shape}")
        H, S, A = reward.shape
        if transition.shape != (H, S, A, S):
            raise MdpError(f"transition: expected shape {(H, S, A, S)}, got {transition.shape}")
        if init_dist.shape != (S,):
            raise MdpError(f"init_dist: expected shape ({S},), got {init_dist.shape}")
        if not (np.all(np.isfinite(reward)) and np.all(np.isfinite(transition))):
            raise MdpError("reward/transition: non-finite entries")
        if np.any(transition < 0) or np.any(np.abs(transition.sum(-1) - 1.0) > PROB_TOL):
            raise MdpError("transition: rows must be probability vectors")
        if np.any(init_dist < 0) or abs(init_dist.sum() - 1.0) > PROB_TOL:
            raise MdpError("init_dist: must be a probability vector")
        if self.noise_model.kind == "bernoulli" and (reward.min() < 0 or reward.max() > 1):
            raise MdpError("reward: Bernoulli noise requires mean rewards in [0, 1]")

    @property
    def horizon(self) -> int:
        return self.reward.shape[0]

    @property
    def num_states(self) -> int:
        return self.reward.shape[1]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.num_states, self.num_actions, self.horizon

    def to_json(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
            "init_dist": self.init_dist.tolist(),
            "noise_model": self.noise_model.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TabularMdp":
        try:
            mdp = cls(
                reward=obj["reward"],
                transition=obj["transition"],
                init_dist=obj["init_dist"],
                noise_model=NoiseModel.from_json(obj.get("noise_model", "bernoulli")),
            )
        except KeyError as exc:
            raise MdpError(f"missing field {exc.args[0]!r}") from None
        for key, value in (("num_states", mdp.num_states), ("num_actions", mdp.num_actions),
                           ("horizon", mdp.horizon)):
            if key in obj and int(obj[key]) != value:
                raise MdpError(f"{key}: declared {obj[key]} but arrays imply {value}")
        return mdp

    @classmethod
    def load(cls, path) -> "TabularMdp":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """``action[h, s]``: the action taken in state ``s`` at stage ``h``."""

    action: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "action", _frozen(self.action, dtype=np.int64))
        if self.action.ndim != 2:
            raise MdpError("policy: expected a (H, S) action table")

    def check(self, mdp: TabularMdp) -> None:
        if self.action.shape != (mdp.horizon, mdp.num_states):
            raise MdpError(f"policy: shape {self.action.shape} does not match MDP")
        if self.action.min() < 0 or self.action.max() >= mdp.num_actions:
            raise MdpError("policy: action index out of range")

    def __eq__(self, other):
        return isinstance(other, DeterministicPolicy) and np.array_equal(self.action, other.action)

    def __hash__(self):
        return hash(self.action.tobytes())


@dataclass(frozen=True, eq=False)
class ValueTables:
    Q: np.ndarray
    V: np.ndarray


@dataclass(frozen=True, eq=False)
class GapTable:
    gap: np.ndarray
    delta_min: float
    optimal_unique: bool


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    rho: np.ndarray
    rho_sa: np.ndarray


def greedy(q: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; numpy already breaks ties by lowest index."""
    return np.argmax(q, axis=-1)


def backward_induction(mdp: TabularMdp) -> tuple[ValueTables, DeterministicPolicy, GapTable]:
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    Q = np.zeros((H, S, A))
    V = np.zeros((H, S))
    v_next = np.zeros(S)
    for h in reversed(range(H)):
        Q[h] = mdp.reward[h] + mdp.transition[h] @ v_next
        V[h] = Q[h].max(axis=-1)
        v_next = V[h]
    action = greedy(Q)

    gap = V[..., None] - Q
    gap[gap < 0] = 0.0
    positive = gap[gap > TIE_TOL]
    delta_min = float(positive.min()) if positive.size else float("inf")

    # two actions within TIE_TOL of the max means the argmax was a coin flip
    near_max = (gap <= TIE_TOL).sum(axis=-1)
    unique = bool(np.all(near_max == 1))
    if not unique:
        h, s = np.argwhere(near_max > 1)[0]
        logger.warning("optimal action not unique (first tie at stage %d, state %d); "
                       "using lowest index", h, s)
    gap[gap <= TIE_TOL] = 0.0
    return ValueTables(Q, V), DeterministicPolicy(action), GapTable(gap, delta_min, unique)


def policy_evaluation(mdp: TabularMdp, policy: DeterministicPolicy) -> ValueTables:
    policy.check(mdp)
    H, S = mdp.horizon, mdp.num_states
    Q = np.zeros((H, S, mdp.num_actions))
    V = np.zeros((H, S))
    v_next = np.zeros(S)
    states = np.arange(S)
    for h in reversed(range(H)):
        Q[h] = mdp.reward[h] + mdp.transition[h] @ v_next
        V[h] = Q[h, states, policy.action[h]]
        v_next = V[h]
    return ValueTables(Q, V)


def occupancy(mdp: TabularMdp, policy: DeterministicPolicy) -> OccupancyMeasure:
    policy.check(mdp)
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    rho = np.zeros((H, S))
    rho_sa = np.zeros((H, S, A))
    states = np.arange(S)
    rho[0] = mdp.init_dist
    for h in range(H):
        rho_sa[h, states, policy.action[h]] = rho[h]
        if h + 1 < H:
            rho[h + 1] = rho[h] @ mdp.transition[h, states, policy.action[h]]
    return OccupancyMeasure(rho, rho_sa)


def reachable_states(mdp: TabularMdp) -> np.ndarray:
    """Boolean ``(H, S)`` table: can any deterministic policy visit ``s`` at ``h``?"""
    H, S = mdp.horizon, mdp.num_states
    reach = np.zeros((H, S), dtype=bool)
    reach[0] = mdp.init_dist > 0
    for h in range(H - 1):
        nxt = mdp.transition[h][reach[h]] > 0
        reach[h + 1] = nxt.reshape(-1, S).any(axis=0)
    return reach


def reachable_sets(mdp: TabularMdp) -> list[set[tuple[int, int]]]:
    reach = reachable_states(mdp)
    return [{(int(s), a) for s in np.flatnonzero(reach[h]) for a in range(mdp.num_actions)}
            for h in range(mdp.horizon)]


def expected_features(mdp: TabularMdp, policy: DeterministicPolicy, fm) -> list[np.ndarray]:
    """Occupancy-weighted feature means, one vector per stage."""
    fm.check(mdp)
    occ = occupancy(mdp, policy)
    return [np.einsum("sa,sad->d", occ.rho_sa[h], fm.phi[h]) for h in range(mdp.horizon)]


def gap_decomposition(mdp: TabularMdp, policy: DeterministicPolicy,
                      gaps: GapTable | None = None) -> np.ndarray:
    """Expected sum of suboptimality gaps along ``policy``, per start state.

    Independent of ``policy_evaluation``: it walks forward with the occupancy of
    each start state and never touches ``V^pi``.
    """
    policy.check(mdp)
    if gaps is None:
        gaps = backward_induction(mdp)[2]
    H, S = mdp.horizon, mdp.num_states
    out = np.zeros(S)
    states = np.arange(S)
    for s0 in range(S):
        dist = np.zeros(S)
        dist[s0] = 1.0
        for h in range(H):
            acts = policy.action[h]
            out[s0] += dist @ gaps.gap[h, states, acts]
            if h + 1 < H:
                dist = dist @ mdp.transition[h, states, acts]
    return out


def all_policies(mdp: TabularMdp) -> Iterator[DeterministicPolicy]:
    """Every deterministic time-inhomogeneous policy (``A ** (S*H)`` of them)."""
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    for combo in itertools.product(range(A), repeat=H * S):
        yield DeterministicPolicy(np.array(combo).reshape(H, S))
