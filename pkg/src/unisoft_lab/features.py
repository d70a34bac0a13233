"""Feature maps, low-rank certification and UniSOFT diagnostics."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction as F
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .mdp import (DeterministicPolicy, MdpError, NoiseModel, TabularMdp, backward_induction,
                  expected_features, occupancy, reachable_states)

logger = logging.getLogger(__name__)

RANK_TOL = 1e-8
CERT_TOL = 1e-8
# occupancies below this are treated as unreachable (they come from float products)
SUPPORT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-stage features; ``phi[h]`` has shape ``(S, A, d_h)``."""

    phi: tuple
    name: str = ""
    unit_norm: bool = False

    def __post_init__(self):
        stages = []
        for h, block in enumerate(self.phi):
            arr = np.array(block, dtype=float)
            if arr.ndim != 3 or arr.shape[-1] < 1:
                raise MdpError(f"phi[{h}]: expected shape (S, A, d), got {arr.shape}")
            arr.setflags(write=False)
            stages.append(arr)
        if not stages:
            raise MdpError("phi: at least one stage required")
        if len({a.shape[:2] for a in stages}) != 1:
            raise MdpError("phi: stages disagree on (S, A)")
        object.__setattr__(self, "phi", tuple(stages))
        if self.unit_norm and self.max_norm() > 1 + 1e-9:
            logger.warning("feature map %r: max norm %.6g exceeds 1", self.name, self.max_norm())

    @property
    def dims(self) -> list[int]:
        return [a.shape[-1] for a in self.phi]

    @property
    def horizon(self) -> int:
        return len(self.phi)

    def max_norm(self) -> float:
        return max(float(np.linalg.norm(a, axis=-1).max()) for a in self.phi)

    def check(self, mdp: TabularMdp) -> None:
        if self.horizon != mdp.horizon or self.phi[0].shape[:2] != (mdp.num_states, mdp.num_actions):
            raise MdpError(f"feature map {self.name!r}: dimensions do not match the MDP")

    def stacked(self, h: int) -> np.ndarray:
        return self.phi[h].reshape(-1, self.phi[h].shape[-1])

    def to_json(self) -> dict:
        return {"name": self.name, "dims": self.dims, "phi": [a.tolist() for a in self.phi]}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureMap":
        try:
            fm = cls(tuple(obj["phi"]), name=obj.get("name", ""))
        except KeyError:
            raise MdpError("feature map: missing field 'phi'") from None
        if "dims" in obj and list(obj["dims"]) != fm.dims:
            raise MdpError(f"dims: declared {obj['dims']} but phi implies {fm.dims}")
        return fm

    @classmethod
    def load(cls, path) -> "FeatureMap":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class LowRankModel:
    """Reward parameters ``theta[h]`` and next-state embeddings ``mu[h]`` (shape ``(S, d_h)``).

    ``mu`` covers stages ``0 .. H-2`` only: transitions out of the last stage
    never enter a value function.
    """

    theta: tuple
    mu: tuple

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(np.array(t, dtype=float) for t in self.theta))
        object.__setattr__(self, "mu", tuple(np.array(m, dtype=float) for m in self.mu))
        if len(self.mu) != len(self.theta) - 1:
            raise MdpError("low-rank model: need H theta vectors and H-1 mu tables")

    def to_json(self) -> dict:
        return {"theta": [t.tolist() for t in self.theta], "mu": [m.tolist() for m in self.mu]}

    @classmethod
    def from_json(cls, obj: dict) -> "LowRankModel":
        return cls(tuple(obj["theta"]), tuple(obj["mu"]))

    @classmethod
    def load(cls, path) -> "LowRankModel":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class ReprDiagnostics:
    reachable_span_rank: list[int]
    optimal_span_rank: list[int]
    is_unisoft: list[bool]
    optimal_cov: list[np.ndarray]
    lambda_plus: list[float]
    lambda_min: list[float]
    max_residual: list[float]

    @property
    def lambda_plus_overall(self) -> float:
        return min(self.lambda_plus)

    @property
    def unisoft(self) -> bool:
        return all(self.is_unisoft)

    def to_json(self) -> dict:
        return {
            "unisoft": self.is_unisoft,
            "reachable_span_rank": self.reachable_span_rank,
            "optimal_span_rank": self.optimal_span_rank,
            "optimal_cov": [m.tolist() for m in self.optimal_cov],
            "lambda_plus": self.lambda_plus,
            "lambda_min": self.lambda_min,
            "lambda_plus_overall": self.lambda_plus_overall,
            "max_residual": self.max_residual,
        }


# --------------------------------------------------------------------------- linear algebra

def span_basis(vectors: np.ndarray, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of the row span of ``vectors``."""
    vectors = np.atleast_2d(vectors)
    d = vectors.shape[-1]
    if vectors.size == 0:
        return np.zeros((d, 0))
    _, sv, vt = np.linalg.svd(vectors, full_matrices=False)
    if sv.size == 0 or sv[0] == 0.0:
        return np.zeros((d, 0))
    keep = sv > rank_tol * sv[0]
    return vt[keep].T


def projection_residual(v: np.ndarray, basis: np.ndarray) -> float:
    """Euclidean distance from ``v`` to the column span of ``basis``."""
    return float(np.linalg.norm(v - basis @ (basis.T @ v)))


def matrix_rank(vectors: np.ndarray, rank_tol: float = RANK_TOL) -> int:
    return span_basis(vectors, rank_tol).shape[1]


def min_positive_eigenvalue(M: np.ndarray, rank_tol: float = RANK_TOL) -> float:
    """Smallest eigenvalue above ``rank_tol * lambda_max``; 0 for a (numerically) zero matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.abs(M).max()))
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * scale):
        raise ValueError("matrix is not symmetric")
    eig = np.linalg.eigvalsh(M)
    if eig.size == 0 or eig[-1] <= 0:
        return 0.0
    if eig[0] < -1e-9 * scale:
        raise ValueError("matrix is not positive semi-definite")
    pos = eig[eig > rank_tol * eig[-1]]
    return float(pos[0])


def _chebyshev_residual(X: np.ndarray, y: np.ndarray) -> float:
    """``min_w ||X w - y||_inf``, exact when ``y`` lies in the span of ``X``."""
    w, *_ = np.linalg.lstsq(X, y, rcond=None)
    ls = float(np.abs(X @ w - y).max())
    if ls <= 1e-12 * max(1.0, float(np.abs(y).max())):
        return ls
    n, d = X.shape
    # variables (w, t): minimise t subject to -t <= Xw - y <= t
    c = np.r_[np.zeros(d), 1.0]
    A_ub = np.block([[X, -np.ones((n, 1))], [-X, -np.ones((n, 1))]])
    b_ub = np.r_[y, -y]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * d + [(0, None)],
                  method="highs")
    return min(ls, float(res.fun)) if res.success else ls


# --------------------------------------------------------------------------- certification

def verify_low_rank(mdp: TabularMdp, fm: FeatureMap, model: LowRankModel | None = None,
                    tol: float = CERT_TOL) -> tuple[LowRankModel, float, bool]:
    """Max residual of ``r = phi.theta`` and ``p(s'|s,a) = phi.mu(s')``.

    Without ``model``, theta and mu are fitted per stage by least squares over
    all ``(s, a)``. Transitions out of the final stage are not checked.
    """
    fm.check(mdp)
    H, S = mdp.horizon, mdp.num_states
    if model is None:
        thetas, mus = [], []
        for h in range(H):
            X = fm.stacked(h)
            thetas.append(np.linalg.lstsq(X, mdp.reward[h].ravel(), rcond=None)[0])
            if h + 1 < H:
                P = mdp.transition[h].reshape(-1, S)
                mus.append(np.linalg.lstsq(X, P, rcond=None)[0].T)
        model = LowRankModel(tuple(thetas), tuple(mus))
    if len(model.theta) != H:
        raise MdpError("low-rank model: horizon mismatch")

    worst = 0.0
    for h in range(H):
        if model.theta[h].shape != (fm.dims[h],):
            raise MdpError(f"theta[{h}]: expected length {fm.dims[h]}")
        worst = max(worst, float(np.abs(fm.phi[h] @ model.theta[h] - mdp.reward[h]).max()))
        if h + 1 < H:
            if model.mu[h].shape != (S, fm.dims[h]):
                raise MdpError(f"mu[{h}]: expected shape {(S, fm.dims[h])}")
            pred = np.einsum("sad,td->sat", fm.phi[h], model.mu[h])
            worst = max(worst, float(np.abs(pred - mdp.transition[h]).max()))
    return model, worst, worst <= tol


def optimal_covariance(mdp: TabularMdp, fm: FeatureMap,
                       policy: DeterministicPolicy | None = None) -> list[np.ndarray]:
    """``sum_s rho*_h(s) phi*_h(s) phi*_h(s)^T`` per stage."""
    fm.check(mdp)
    if policy is None:
        policy = backward_induction(mdp)[1]
    rho = occupancy(mdp, policy).rho
    out = []
    for h in range(mdp.horizon):
        opt = fm.phi[h][np.arange(mdp.num_states), policy.action[h]]
        out.append(np.einsum("s,si,sj->ij", rho[h], opt, opt))
    return out


def _optimal_features(mdp, fm, policy, rho, h):
    support = rho[h] > SUPPORT_TOL
    states = np.flatnonzero(support)
    return fm.phi[h][states, policy.action[h][states]]


def unisoft_check(mdp: TabularMdp, fm: FeatureMap, rank_tol: float = RANK_TOL) -> ReprDiagnostics:
    fm.check(mdp)
    _, policy, _ = backward_induction(mdp)
    rho = occupancy(mdp, policy).rho
    reach = reachable_states(mdp)
    covs = optimal_covariance(mdp, fm, policy)

    reach_rank, opt_rank, verdict, lam_plus, lam_min, resid = [], [], [], [], [], []
    for h in range(mdp.horizon):
        reachable = fm.phi[h][reach[h]].reshape(-1, fm.dims[h])
        basis = span_basis(_optimal_features(mdp, fm, policy, rho, h), rank_tol)
        worst_excess = 0.0
        ok = True
        for v in reachable:
            r = projection_residual(v, basis)
            if r > rank_tol * np.linalg.norm(v):
                ok = False
            worst_excess = max(worst_excess, r)
        reach_rank.append(matrix_rank(reachable, rank_tol))
        opt_rank.append(basis.shape[1])
        verdict.append(ok)
        lam_plus.append(min_positive_eigenvalue(covs[h], rank_tol))
        lam_min.append(float(np.linalg.eigvalsh(covs[h])[0]))
        resid.append(worst_excess)
    return ReprDiagnostics(reach_rank, opt_rank, verdict, covs, lam_plus, lam_min, resid)


@dataclass
class MixingReport:
    """``witness[(h, s, a)]`` is the first representation whose optimal span holds ``phi(s, a)``."""

    witness: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.failures

    def stage_witnesses(self, h: int) -> set[int]:
        return {j for (hh, _, _), j in self.witness.items() if hh == h}


def unisoft_mixing_check(mdp: TabularMdp, fms: Sequence[FeatureMap],
                         rank_tol: float = RANK_TOL) -> MixingReport:
    if not fms:
        raise ValueError("need at least one feature map")
    _, policy, _ = backward_induction(mdp)
    rho = occupancy(mdp, policy).rho
    reach = reachable_states(mdp)
    bases = []
    for fm in fms:
        fm.check(mdp)
        bases.append([span_basis(_optimal_features(mdp, fm, policy, rho, h), rank_tol)
                      for h in range(mdp.horizon)])

    report = MixingReport()
    for h in range(mdp.horizon):
        for s in np.flatnonzero(reach[h]):
            for a in range(mdp.num_actions):
                key = (h, int(s), a)
                for j, fm in enumerate(fms):
                    v = fm.phi[h][s, a]
                    if projection_residual(v, bases[j][h]) <= rank_tol * np.linalg.norm(v):
                        report.witness[key] = j
                        break
                else:
                    report.failures.append(key)
    return report


# --------------------------------------------------------------------------- transforms

def make_non_unisoft(fm: FeatureMap, model: LowRankModel, mdp: TabularMdp, stage: int,
                     name: str = "") -> tuple[FeatureMap, LowRankModel]:
    """Double the dimension at ``stage``, hiding optimal features in a separate block.

    Optimal actions get ``[0; phi]``, the others ``[phi; 0]``, and the stage's
    theta/mu are duplicated so every inner product is preserved.
    """
    if not 0 <= stage < mdp.horizon:
        raise ValueError(f"stage {stage} out of range")
    _, _, ok = verify_low_rank(mdp, fm, model)
    if not ok:
        raise MdpError("model does not certify the feature map")
    _, policy, _ = backward_induction(mdp)

    old = fm.phi[stage]
    S, A, d = old.shape
    new = np.zeros((S, A, 2 * d))
    optimal = np.zeros((S, A), dtype=bool)
    optimal[np.arange(S), policy.action[stage]] = True
    new[optimal, d:] = old[optimal]
    new[~optimal, :d] = old[~optimal]

    phi = list(fm.phi)
    phi[stage] = new
    theta = list(model.theta)
    theta[stage] = np.r_[theta[stage], theta[stage]]
    mu = list(model.mu)
    if stage < len(mu):
        mu[stage] = np.hstack([mu[stage], mu[stage]])
    return FeatureMap(tuple(phi), name=name or f"{fm.name}-split{stage}"), LowRankModel(tuple(theta), tuple(mu))


# --------------------------------------------------------------------------- built-in example

def _arr(rows) -> np.ndarray:
    return np.array([[float(F(x)) for x in r] for r in rows])


def appendix_f_mdp() -> TabularMdp:
    """Two states, two actions, two stages; all rewards at stage 0 equal one."""
    p_first = _arr([["1", "1/2"], ["1/2", "3/4"]])  # probability of landing in state 0
    trans = np.zeros((2, 2, 2, 2))
    trans[0, ..., 0] = p_first
    trans[0, ..., 1] = 1.0 - p_first
    # transitions out of the final stage are never used; uniform keeps rows valid
    trans[1] = 0.5
    reward = np.array([
        [[1.0, 1.0], [1.0, 1.0]],
        _arr([["1", "7/8"], ["1/2", "5/8"]]),
    ])
    return TabularMdp(reward, trans, np.array([0.5, 0.5]), NoiseModel("bernoulli"))


def _phi1_stages():
    h0 = np.array([_arr([["1", "0"], ["1/2", "1/2"]]), _arr([["1/2", "1/2"], ["3/4", "1/4"]])])
    h1 = np.array([_arr([["0", "1"], ["1/4", "3/4"]]), _arr([["1", "0"], ["3/4", "1/4"]])])
    return h0, h1


def builtin_example(name: str = "appendix-f") -> tuple[TabularMdp, list[FeatureMap], LowRankModel]:
    """The two-stage example and its four representations.

    Returns the MDP, ``[phi1, phi2, phi3, phi4]`` and the low-rank model
    certifying ``phi1`` (and ``phi2``, which shares its parameters).
    """
    if name != "appendix-f":
        raise KeyError(f"unknown example {name!r}")
    mdp = appendix_f_mdp()
    h0, h1 = _phi1_stages()
    phi1 = FeatureMap((h0, h1), name="phi1", unit_norm=True)
    h1_alt = h1.copy()
    h1_alt[0, 0] = _arr([["30/89", "74/89"]])[0]
    h1_alt[1, 1] = _arr([["75/356", "185/356"]])[0]
    phi2 = FeatureMap((h0, h1_alt), name="phi2", unit_norm=True)
    model = LowRankModel(
        theta=(np.array([1.0, 1.0]), np.array([0.5, 1.0])),
        mu=(np.array([[1.0, 0.0], [0.0, 1.0]]),),
    )
    phi3, _ = make_non_unisoft(phi2, model, mdp, 0, name="phi3")
    phi4, _ = make_non_unisoft(phi1, model, mdp, 0, name="phi4")
    return mdp, [phi1, phi2, phi3, phi4], model


BUILTIN_FEATURES = {"phi1": 0, "phi2": 1, "phi3": 2, "phi4": 3}


# --------------------------------------------------------------------------- Bellman closure

def _sample_theta(rng, X: np.ndarray, bound: float, max_tries: int = 100_000) -> np.ndarray:
    """Uniform draw from ``{theta in rowspan(X) : |X theta|_inf <= bound}`` by rejection."""
    basis = span_basis(X)
    r = basis.shape[1]
    sv = np.linalg.svd(X @ basis, compute_uv=False)
    radius = bound * np.sqrt(X.shape[0]) / sv[-1]
    for _ in range(max_tries):
        z = rng.standard_normal(r)
        z *= radius * rng.random() ** (1.0 / r) / np.linalg.norm(z)
        theta = basis @ z
        if np.abs(X @ theta).max() <= bound:
            return theta
    raise RuntimeError("rejection sampling did not accept a parameter")


def ibe_monte_carlo(mdp: TabularMdp, fm: FeatureMap, n_samples: int, bound: float | None = None,
                    seed: int = 0) -> float:
    """Monte-Carlo lower estimate of the inherent Bellman error of ``fm``.

    For each sampled bounded linear ``Q_{h+1}``, the Bellman backup is
    approximated by stage-``h`` features in sup norm; the worst residual over
    samples and stages is returned. Zero is evidence (not proof) of closure.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    fm.check(mdp)
    bound = float(mdp.horizon if bound is None else bound)
    rng = np.random.Generator(np.random.Philox(seed))
    H, S = mdp.horizon, mdp.num_states
    worst = 0.0
    for h in range(H):
        X = fm.stacked(h)
        if h + 1 == H:
            worst = max(worst, _chebyshev_residual(X, mdp.reward[h].ravel()))
            continue
        X_next = fm.stacked(h + 1)
        if not np.any(X_next):
            raise MdpError(f"degenerate feature span at stage {h + 1}")
        for _ in range(n_samples):
            theta = _sample_theta(rng, X_next, bound)
            v_next = (fm.phi[h + 1] @ theta).max(axis=-1)
            target = mdp.reward[h] + mdp.transition[h] @ v_next
            worst = max(worst, _chebyshev_residual(X, target.ravel()))
    return worst


# --------------------------------------------------------------------------- necessity witness

@dataclass(frozen=True, eq=False)
class NecessityWitness:
    stage: int
    state: int
    action: int
    policy: DeterministicPolicy
    psi: np.ndarray
    psi_star: np.ndarray
    residual: float


def _reaching_prefix(mdp: TabularMdp, policy_table: np.ndarray, h: int, s: int) -> None:
    """Overwrite stages ``< h`` of ``policy_table`` along one positive-probability path to ``s``."""
    reach = reachable_states(mdp)
    target = s
    for hh in reversed(range(h)):
        for sp in np.flatnonzero(reach[hh]):
            probs = mdp.transition[hh, sp, :, target]
            if probs.max() > 0:
                policy_table[hh, sp] = int(np.argmax(probs > 0))
                target = int(sp)
                break


def find_necessity_witness(mdp: TabularMdp, fm: FeatureMap,
                           rank_tol: float = RANK_TOL) -> NecessityWitness | None:
    """Suboptimal policy whose expected features leave the optimal span, if any."""
    fm.check(mdp)
    _, pi_star, gaps = backward_induction(mdp)
    if not gaps.optimal_unique:
        logger.warning("optimal policy is not unique; witness may not be strictly suboptimal")
    rho = occupancy(mdp, pi_star).rho
    reach = reachable_states(mdp)
    psi_star = expected_features(mdp, pi_star, fm)

    for h in range(mdp.horizon):
        basis = span_basis(_optimal_features(mdp, fm, pi_star, rho, h), rank_tol)
        for s in np.flatnonzero(reach[h]):
            for a in range(mdp.num_actions):
                v = fm.phi[h][s, a]
                if projection_residual(v, basis) <= rank_tol * np.linalg.norm(v):
                    continue
                table = np.array(pi_star.action)
                if rho[h, s] > SUPPORT_TOL:
                    if a == pi_star.action[h, s]:
                        continue
                else:
                    _reaching_prefix(mdp, table, h, int(s))
                table[h, s] = a
                policy = DeterministicPolicy(table)
                psi = expected_features(mdp, policy, fm)[h]
                resid = projection_residual(psi - psi_star[h], basis)
                if resid > rank_tol:
                    return NecessityWitness(h, int(s), a, policy, psi, psi_star[h], resid)
    return None


# --------------------------------------------------------------------------- trajectories

def empirical_covariance(trajectories: Sequence[Sequence[Sequence[float]]], d: int,
                         rank_tol: float = RANK_TOL) -> tuple[np.ndarray, int, float]:
    """Average over trajectories of the summed outer products of their features."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    M = np.zeros((d, d))
    for traj in trajectories:
        X = np.asarray(traj, dtype=float).reshape(-1, d)
        M += X.T @ X
    M /= len(trajectories)
    eig = np.linalg.eigvalsh(M)
    rank = int((eig > rank_tol * max(eig[-1], 0.0)).sum()) if eig[-1] > 0 else 0
    return M, rank, float(max(eig[0], 0.0))
