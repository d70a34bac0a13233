"""Seeded regret experiments with exact regret accounting and theory-facing diagnostics."""
from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .agents import BetaSchedule, LeaderState, beta, bonus_widths
from .bounds import ProblemConstants, default_g
from .features import (BUILTIN_FEATURES, FeatureMap, builtin_example, min_positive_eigenvalue,
                       optimal_covariance, span_basis)
from .mdp import DeterministicPolicy, MdpError, TabularMdp, backward_induction, reachable_states

logger = logging.getLogger(__name__)

AGENT_KINDS = ("lsvi-ucb", "lsvi-leader")
OPTIMISM_TOL = 1e-9
# |V* - V^pi| below this is summation round-off, not regret
REGRET_SNAP = 1e-12


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the offending field."""


# --------------------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    mdp: dict
    representations: list
    agent_kind: str = "lsvi-ucb"
    agent_reps: list = field(default_factory=lambda: [0])
    schedule: dict = field(default_factory=dict)
    episodes: int = 1000
    seeds: list = field(default_factory=lambda: [0])
    diagnostics_every: int = 100
    lambda_reg: float = 1.0
    floor_at_zero: bool = True
    out: str | None = None
    backend: str = "auto"
    base_dir: str = "."

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.mdp, dict) or len({"builtin", "file"} & set(self.mdp)) != 1:
            raise ConfigError("mdp: expected {\"builtin\": name} or {\"file\": path}")
        if "builtin" in self.mdp and self.mdp["builtin"] != "appendix-f":
            raise ConfigError(f"mdp.builtin: unknown example {self.mdp['builtin']!r}")
        if not self.representations:
            raise ConfigError("representations: at least one required")
        if self.agent_kind not in AGENT_KINDS:
            raise ConfigError(f"agent.kind: expected one of {AGENT_KINDS}")
        if not self.agent_reps or any(
                not isinstance(j, int) or not 0 <= j < len(self.representations) for j in self.agent_reps):
            raise ConfigError("agent.reps: indices must refer to listed representations")
        if self.agent_kind == "lsvi-ucb" and len(self.agent_reps) != 1:
            raise ConfigError("agent.reps: lsvi-ucb uses exactly one representation")
        if not isinstance(self.episodes, int) or self.episodes < 1:
            raise ConfigError("episodes: must be an integer >= 1")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed required")
        if any(not isinstance(s, int) or not 0 <= s < 2 ** 64 for s in self.seeds):
            raise ConfigError("seeds: must be unsigned 64-bit integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: duplicates")
        if not isinstance(self.diagnostics_every, int) or self.diagnostics_every < 0:
            raise ConfigError("diagnostics_every: must be a non-negative integer (0 disables)")
        if not self.lambda_reg > 0:
            raise ConfigError("lambda_reg: must be positive")
        if self.backend not in ("auto", "python", "compiled"):
            raise ConfigError("backend: expected auto, python or compiled")
        try:
            self.beta_schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def beta_schedule(self) -> BetaSchedule:
        s = dict(self.schedule)
        unknown = set(s) - {"kind", "c_beta", "delta", "K"}
        if unknown:
            raise ConfigError(f"schedule: unknown keys {sorted(unknown)}")
        return BetaSchedule(
            kind=s.get("kind", "experiment-fixed-k"),
            c_beta=float(s.get("c_beta", 0.2)),
            delta=float(s.get("delta", 0.05)),
            N=len(self.agent_reps),
            K=s.get("K", self.episodes),
        )

    @classmethod
    def from_json(cls, obj: dict, base_dir: str | os.PathLike = ".") -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config: expected a JSON object")
        known = {"mdp", "representations", "agent", "schedule", "episodes", "seeds", "num_seeds",
                 "diagnostics_every", "lambda_reg", "floor_at_zero", "out", "backend"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        for key in ("mdp", "representations"):
            if key not in obj:
                raise ConfigError(f"{key}: missing")
        agent = obj.get("agent", {"kind": "lsvi-ucb", "reps": [0]})
        if not isinstance(agent, dict):
            raise ConfigError("agent: expected an object")
        seeds = obj.get("seeds")
        if seeds is None:
            seeds = list(range(int(obj.get("num_seeds", 1))))
        return cls(
            mdp=obj["mdp"],
            representations=list(obj["representations"]),
            agent_kind=agent.get("kind", "lsvi-ucb"),
            agent_reps=list(agent.get("reps", [0])),
            schedule=obj.get("schedule", {}),
            episodes=obj.get("episodes", 1000),
            seeds=list(seeds),
            diagnostics_every=obj.get("diagnostics_every", 100),
            lambda_reg=float(obj.get("lambda_reg", 1.0)),
            floor_at_zero=bool(obj.get("floor_at_zero", True)),
            out=obj.get("out"),
            backend=obj.get("backend", "auto"),
            base_dir=str(base_dir),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: not valid JSON ({exc})") from None
        return cls.from_json(obj, base_dir=path.parent)

    def to_json(self) -> dict:
        return {
            "mdp": self.mdp,
            "representations": self.representations,
            "agent": {"kind": self.agent_kind, "reps": self.agent_reps},
            "schedule": self.beta_schedule().to_json(),
            "episodes": self.episodes,
            "seeds": self.seeds,
            "diagnostics_every": self.diagnostics_every,
            "lambda_reg": self.lambda_reg,
            "floor_at_zero": self.floor_at_zero,
            "backend": self.backend,
        }

    def _resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def load_problem(self) -> tuple[TabularMdp, list[FeatureMap]]:
        """The MDP and the representations the agent uses (in ``agent_reps`` order)."""
        if "builtin" in self.mdp:
            mdp, builtin_fms, _ = builtin_example(self.mdp["builtin"])
        else:
            mdp, builtin_fms = TabularMdp.load(self._resolve(self.mdp["file"])), None
        fms = []
        for entry in self.representations:
            if entry in BUILTIN_FEATURES:
                if builtin_fms is None:
                    builtin_fms = builtin_example("appendix-f")[1]
                fms.append(builtin_fms[BUILTIN_FEATURES[entry]])
            else:
                fms.append(FeatureMap.load(self._resolve(entry)))
        for fm in fms:
            fm.check(mdp)
        return mdp, [fms[j] for j in self.agent_reps]


# --------------------------------------------------------------------------- traces

@dataclass
class DiagnosticRow:
    episode: int
    stage: int
    min_eig_on_span: float
    growth_bound_rhs: float
    max_conf_width: float
    width_envelope: float
    optimism_ok: bool

    def csv(self) -> str:
        return (f"{self.episode},{self.stage},{self.min_eig_on_span!r},{self.growth_bound_rhs!r},"
                f"{self.max_conf_width!r},{self.width_envelope!r},{str(self.optimism_ok).lower()}")


@dataclass
class RegretTrace:
    seed: int
    initial_state: np.ndarray
    instant_regret: np.ndarray
    cum_regret: np.ndarray
    vbar1: np.ndarray
    optimistic: np.ndarray
    policies: np.ndarray | None = None
    diagnostics: list = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.instant_regret)

    def optimism_violation_fraction(self) -> float:
        return float(1.0 - self.optimistic.mean())


TRACE_HEADER = "episode,instant_regret,cum_regret"
SUMMARY_HEADER = "episode,mean_cum_regret,std_cum_regret"
DIAG_HEADER = ("episode,stage,min_eig_on_span,growth_bound_rhs,max_conf_width,"
               "width_envelope,optimism_ok")


def _csv_rows(start: int, inst: np.ndarray, cum: np.ndarray) -> str:
    return "".join(f"{start + i},{float(r)!r},{float(c)!r}\n" for i, (r, c) in enumerate(zip(inst, cum)))


class _AtomicWriter:
    """Text file written incrementally to a temp sibling, renamed into place on close."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=f".{self.path.name}.", suffix=".tmp")
        self._tmp = Path(tmp)
        self._fh = os.fdopen(fd, "w", newline="\n")

    def write(self, text: str) -> None:
        self._fh.write(text)

    def commit(self) -> None:
        self._fh.close()
        os.replace(self._tmp, self.path)

    def abort(self) -> None:
        self._fh.close()
        self._tmp.unlink(missing_ok=True)


def write_atomic(path, text: str) -> None:
    w = _AtomicWriter(Path(path))
    try:
        w.write(text)
    except BaseException:
        w.abort()
        raise
    w.commit()


# --------------------------------------------------------------------------- simulation

def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    # one stream for initial states and transitions, one for reward noise
    ss = np.random.SeedSequence(seed)
    a, b = ss.spawn(2)
    return np.random.Generator(np.random.Philox(a)), np.random.Generator(np.random.Philox(b))


def _cdfs(mdp: TabularMdp) -> tuple[np.ndarray, np.ndarray]:
    trans_cdf = np.cumsum(mdp.transition, axis=-1)
    trans_cdf[..., -1] = 1.0
    init_cdf = np.cumsum(mdp.init_dist)
    init_cdf[-1] = 1.0
    return np.ascontiguousarray(trans_cdf), np.ascontiguousarray(init_cdf)


def _draw(cdf: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf, u, side="right")), cdf.shape[0] - 1)


def _sample_reward(mdp: TabularMdp, mean: float, rng: np.random.Generator) -> float:
    kind = mdp.noise_model.kind
    if kind == "bernoulli":
        return 1.0 if rng.random() < mean else 0.0
    if kind == "gaussian":
        return mean + mdp.noise_model.sigma * rng.standard_normal()
    return float(mean)


def run_episode(mdp: TabularMdp, policy: DeterministicPolicy,
                rng: np.random.Generator) -> list[tuple[int, int, int, float, int]]:
    """One episode of ``H`` steps as ``(h, s, a, r_sample, s_next)`` tuples."""
    policy.check(mdp)
    trans_cdf, init_cdf = _cdfs(mdp)
    s = _draw(init_cdf, rng.random())
    out = []
    for h in range(mdp.horizon):
        a = int(policy.action[h, s])
        r = _sample_reward(mdp, mdp.reward[h, s, a], rng)
        s_next = _draw(trans_cdf[h, s, a], rng.random())
        out.append((h, s, a, r, s_next))
        s = s_next
    return out


def _schedule_betas(state: LeaderState, schedule: BetaSchedule, k0: int, n: int) -> np.ndarray:
    if schedule.kind == "experiment-fixed-k":
        return np.ascontiguousarray(np.broadcast_to(state.betas(schedule, 1), (n,) + state.dims.T.shape))
    return np.ascontiguousarray(np.stack([state.betas(schedule, k0 + i) for i in range(n)]))


@dataclass
class _TheoryContext:
    """Per-run constants the diagnostics need (taken from the first representation)."""

    lam_star: list
    lambda_plus: list
    reachable: np.ndarray
    delta_min: float
    g: Callable
    delta: float


def _theory_context(mdp: TabularMdp, fm: FeatureMap, schedule: BetaSchedule,
                    lambda_reg: float) -> _TheoryContext:
    _, policy, gaps = backward_induction(mdp)
    lam_star = optimal_covariance(mdp, fm, policy)
    lam_plus = [min_positive_eigenvalue(m) for m in lam_star]
    positive = [x for x in lam_plus if x > 0]
    delta_min = gaps.delta_min if math.isfinite(gaps.delta_min) else 1.0
    pc = ProblemConstants(d=max(fm.dims), H=mdp.horizon, delta=schedule.delta, delta_min=delta_min,
                          lambda_plus=min(positive) if positive else 1.0, lambda_reg=lambda_reg,
                          c_beta=schedule.c_beta)
    return _TheoryContext(lam_star, lam_plus, reachable_states(mdp), delta_min, default_g(pc),
                          schedule.delta)


@dataclass
class GrowthRecord:
    stage: int
    episode: int
    lhs_min_eig_on_span: float
    rhs_bound: float
    holds: bool
    vacuous: bool
    note: str = ""


def _concentration_term(k: int, d: int, H: int, delta: float) -> float:
    return 0.0 if k < 1 else 8.0 * math.sqrt(k * math.log(2 * d * H * k / delta))


def design_growth_diagnostic(state: LeaderState, lam_star: Sequence[np.ndarray],
                             g: Callable[[int], float], delta_min: float, delta: float,
                             rep: int = 0, k: int | None = None) -> list[GrowthRecord]:
    """Compare ``lambda_min(U^T Lambda_h U)`` on the optimal span with its guaranteed growth."""
    k = state.k if k is None else k
    _, _, H = state.shape
    out = []
    for h in range(H):
        basis = span_basis(lam_star[h])
        if basis.shape[1] == 0:
            out.append(GrowthRecord(h, k, math.nan, math.nan, True, True, "optimal covariance is zero"))
            continue
        Lam = state.design_matrix(h, rep)
        lhs = float(np.linalg.eigvalsh(basis.T @ Lam @ basis)[0])
        lam_plus = min_positive_eigenvalue(lam_star[h])
        d = int(state.dims[rep, h])
        g_k = g(k) if k >= 1 else 0.0
        rhs = k * lam_plus + state.lambda_reg - g_k / delta_min - _concentration_term(k, d, H, delta)
        out.append(GrowthRecord(h, k, lhs, rhs, lhs >= rhs - 1e-9, rhs <= 0))
    return out


def width_envelope(beta_k: float, k: int, lambda_reg: float, lambda_plus: float, f_k: float) -> float:
    """``beta_k (k + lambda - f) / (k lambda_plus + lambda - f)^{3/2}``; inf while the bound is vacuous."""
    denom = k * lambda_plus + lambda_reg - f_k
    if denom <= 0:
        return math.inf
    return beta_k * (k + lambda_reg - f_k) / denom ** 1.5


def confidence_width_diagnostic(state: LeaderState, schedule: BetaSchedule,
                                reachable: np.ndarray, k: int | None = None) -> list[float]:
    """Per stage, max over reachable ``(s, a)`` of the effective bonus ``min_j beta_j ||phi_j||``.

    ``reachable`` is the boolean ``(H, S)`` state table; every action counts.
    """
    k = state.k + 1 if k is None else k
    _, _, H = state.shape
    betas = state.betas(schedule, k)
    out = []
    for h in range(H):
        width = np.min([betas[h, j] * bonus_widths(state, h, j) for j in range(state.num_reps)], axis=0)
        out.append(float(width[reachable[h]].max()) if reachable[h].any() else 0.0)
    return out


def _diagnostic_rows(state: LeaderState, schedule: BetaSchedule, ctx: _TheoryContext,
                     optimism_ok: bool) -> list[DiagnosticRow]:
    k = state.k
    _, _, H = state.shape
    growth = design_growth_diagnostic(state, ctx.lam_star, ctx.g, ctx.delta_min, ctx.delta)
    widths = confidence_width_diagnostic(state, schedule, ctx.reachable, k=k + 1)
    rows = []
    for h in range(H):
        d = int(state.dims[0, h])
        f_k = (ctx.g(k) if k >= 1 else 0.0) + _concentration_term(k, d, H, ctx.delta)
        env = width_envelope(beta(schedule, k + 1, d, H), k, state.lambda_reg, ctx.lambda_plus[h], f_k)
        rows.append(DiagnosticRow(k, h + 1, growth[h].lhs_min_eig_on_span, growth[h].rhs_bound,
                                  widths[h], env, optimism_ok))
    return rows


def run_single(config: ExperimentConfig, seed: int, out_dir: Path | None = None,
               keep_policies: bool = False) -> RegretTrace:
    """One seeded run; CSVs (if ``out_dir``) are streamed chunk by chunk and committed at the end."""
    return _run(config, seed, out_dir, keep_policies)[0]


def _run(config, seed, out_dir, keep_policies) -> tuple[RegretTrace, LeaderState]:
    mdp, reps = config.load_problem()
    schedule = config.beta_schedule()
    backend = kernels.get_backend(config.backend)
    state = LeaderState(reps, config.lambda_reg)
    vstar, _, _ = backward_induction(mdp)
    vstar1 = np.ascontiguousarray(vstar.V[0])
    trans_cdf, init_cdf = _cdfs(mdp)
    mean_reward = np.ascontiguousarray(mdp.reward)
    transition = np.ascontiguousarray(mdp.transition)
    noise = kernels.NOISE_CODES[mdp.noise_model.kind]
    sigma = float(mdp.noise_model.sigma)
    rng_state, rng_reward = _streams(seed)
    ctx = _theory_context(mdp, reps[0], schedule, config.lambda_reg) if config.diagnostics_every else None

    K, H, S = config.episodes, mdp.horizon, mdp.num_states
    s1 = np.zeros(K, dtype=np.int64)
    inst = np.zeros(K)
    vbar1 = np.zeros(K)
    policies = np.zeros((K, H, S), dtype=np.int64)
    cum = np.zeros(K)
    diagnostics: list[DiagnosticRow] = []

    writers = {}
    if out_dir is not None:
        writers["trace"] = _AtomicWriter(out_dir / f"trace_seed{seed}.csv")
        writers["trace"].write(TRACE_HEADER + "\n")
        if config.diagnostics_every:
            writers["diag"] = _AtomicWriter(out_dir / f"diagnostics_seed{seed}.csv")
            writers["diag"].write(DIAG_HEADER + "\n")

    chunk = config.diagnostics_every or K
    running = 0.0
    try:
        for start in range(0, K, chunk):
            n = min(chunk, K - start)
            u_state = rng_state.random((n, 1 + H))
            if noise == kernels.NOISE_CODES["gaussian"]:
                u_reward = rng_reward.standard_normal((n, H))
            elif noise == kernels.NOISE_CODES["bernoulli"]:
                u_reward = rng_reward.random((n, H))
            else:
                u_reward = np.zeros((n, H))
            betas = _schedule_betas(state, schedule, start + 1, n)
            sl = slice(start, start + n)
            backend.run_chunk(state.phi, state.design, state.reward_sum, state.visit_count,
                              state.transition_count, betas, float(H), config.floor_at_zero,
                              mean_reward, transition, trans_cdf, init_cdf, vstar1, noise, sigma,
                              u_state, u_reward, s1[sl], inst[sl], vbar1[sl], policies[sl], state.qbar)
            state.k = start + n
            seg = inst[sl]
            seg[np.abs(seg) <= REGRET_SNAP] = 0.0
            acc = np.add.accumulate(np.r_[running, seg])[1:]
            cum[sl] = acc
            running = float(acc[-1])
            if "trace" in writers:
                writers["trace"].write(_csv_rows(start + 1, seg, acc))
            if ctx is not None:
                last = start + n - 1
                ok = bool(vbar1[last] >= vstar1[s1[last]] - OPTIMISM_TOL)
                rows = _diagnostic_rows(state, schedule, ctx, ok)
                diagnostics.extend(rows)
                if "diag" in writers:
                    writers["diag"].write("".join(r.csv() + "\n" for r in rows))
    except BaseException:
        for w in writers.values():
            w.abort()
        raise
    for w in writers.values():
        w.commit()

    optimistic = vbar1 >= vstar1[s1] - OPTIMISM_TOL
    trace = RegretTrace(seed, s1, inst, cum, vbar1, optimistic,
                        policies if keep_policies else None, diagnostics)
    return trace, state


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    traces: list
    mean_cum_regret: np.ndarray
    std_cum_regret: np.ndarray


def aggregate(traces: Sequence[RegretTrace]) -> tuple[np.ndarray, np.ndarray]:
    cums = np.stack([t.cum_regret for t in traces])
    return cums.mean(axis=0), cums.std(axis=0)


def run_experiment(config: ExperimentConfig, threads: int = 1, out: str | os.PathLike | None = None,
                   keep_policies: bool = False, dump_agent_state: bool = False) -> ExperimentResult:
    """All seeds of ``config``; results are ordered by run index regardless of scheduling."""
    out = out if out is not None else config.out
    out_dir = Path(out) if out is not None else None
    config.load_problem()  # fail on bad inputs before any work starts

    def job(seed):
        return run_single(config, seed, out_dir, keep_policies)

    if threads > 1 and len(config.seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(job, config.seeds))
    else:
        traces = [job(seed) for seed in config.seeds]
    mean, std = aggregate(traces)
    result = ExperimentResult(config, traces, mean, std)
    if out_dir is not None:
        write_outputs(result, out_dir)
        if dump_agent_state:
            dump_states(config, out_dir)
    return result


def write_outputs(result: ExperimentResult, out_dir: Path) -> None:
    rows = "".join(f"{k + 1},{float(m)!r},{float(s)!r}\n"
                   for k, (m, s) in enumerate(zip(result.mean_cum_regret, result.std_cum_regret)))
    write_atomic(out_dir / "summary.csv", SUMMARY_HEADER + "\n" + rows)
    meta = {
        "config": result.config.to_json(),
        "seeds": result.config.seeds,
        "backend": kernels.backend_name(kernels.get_backend(result.config.backend)),
        "final_cum_regret": {str(t.seed): float(t.cum_regret[-1]) for t in result.traces},
        "optimism_violation_fraction": {str(t.seed): t.optimism_violation_fraction()
                                        for t in result.traces},
    }
    write_atomic(out_dir / "metadata.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")


def dump_states(config: ExperimentConfig, out_dir: Path) -> None:
    """Re-run each seed and snapshot the final learner statistics."""
    for seed in config.seeds:
        state = final_state(config, seed)
        write_atomic(out_dir / f"agent_state_seed{seed}.json", state.dumps() + "\n")


def final_state(config: ExperimentConfig, seed: int) -> LeaderState:
    """Learner statistics after a full run of ``seed``."""
    return _run(config, seed, None, False)[1]


# --------------------------------------------------------------------------- plateau

@dataclass(frozen=True)
class PlateauResult:
    kappa_hat: int | None
    plateaued: bool


def plateau_detector(trace, window: int, eps: float = 1e-9) -> PlateauResult:
    """``kappa_hat``: last (1-based) episode with regret above ``eps``."""
    if window < 1:
        raise ValueError("window must be >= 1")
    inst = np.asarray(trace.instant_regret if isinstance(trace, RegretTrace) else trace)
    above = np.flatnonzero(inst > eps)
    kappa = int(above[-1]) + 1 if above.size else None
    return PlateauResult(kappa, kappa is None or kappa <= len(inst) - window)


__all__ = [
    "ConfigError", "ExperimentConfig", "RegretTrace", "DiagnosticRow", "GrowthRecord", "PlateauResult",
    "ExperimentResult", "run_episode", "run_single", "run_experiment", "design_growth_diagnostic",
    "confidence_width_diagnostic", "width_envelope", "plateau_detector", "aggregate", "final_state",
    "write_atomic", "MdpError",
]
