"""Compare the compiled and pure-Python episode kernels.

    python3 benchmarks/bench_kernels.py [--episodes 3000] [--seeds 3] [--repeat 3]

Times a full experiment run (plan, exact scoring, simulation, statistics update) for
LSVI-UCB on phi1 and LSVI-LEADER on {phi2, phi3, phi4}, and a single planning pass on a
larger random problem. Also checks that both backends produce the same regret traces.
"""
import argparse
import time

import numpy as np

from unisoft_lab import kernels
from unisoft_lab.agents import BetaSchedule, LeaderState, leader_plan
from unisoft_lab.features import FeatureMap
from unisoft_lab.harness import ExperimentConfig, run_experiment


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_runs(episodes, seeds, repeat):
    cases = [("lsvi-ucb phi1", ["phi1"], "lsvi-ucb"),
             ("leader phi2-4", ["phi2", "phi3", "phi4"], "lsvi-leader")]
    for label, reps, kind in cases:
        row, traces = [], []
        for backend in ("python", "compiled"):
            cfg = ExperimentConfig(mdp={"builtin": "appendix-f"}, representations=reps, agent_kind=kind,
                                   agent_reps=list(range(len(reps))), episodes=episodes,
                                   seeds=list(range(seeds)), diagnostics_every=0, backend=backend)
            secs, res = best_of(lambda: run_experiment(cfg), repeat)
            row.append(secs)
            traces.append(res.mean_cum_regret)
        diff = float(np.abs(traces[0] - traces[1]).max())
        print(f"{label:16s} {episodes * seeds:8d} episodes  python {row[0]:8.3f} s  "
              f"compiled {row[1]:8.3f} s  speedup {row[0] / row[1]:6.1f}x  max trace diff {diff:.1e}")


def bench_plan(repeat, S=20, A=5, H=10, d=8, N=3):
    rng = np.random.default_rng(0)
    fms = [FeatureMap(tuple(rng.standard_normal((S, A, d)) for _ in range(H))) for _ in range(N)]
    state = LeaderState(fms)
    state.visit_count[:] = rng.integers(0, 50, state.visit_count.shape)
    state.reward_sum[:] = state.visit_count * rng.random(state.visit_count.shape)
    for h in range(H):
        for j in range(N):
            X = state.phi[j, h].reshape(-1, d)
            state.design[j, h] += X.T @ (state.visit_count[h].reshape(-1, 1) * X)
    sched = BetaSchedule("anytime-leader", 0.2, 0.05, N)
    row = []
    for backend in ("python", "compiled"):
        secs, _ = best_of(lambda: [leader_plan(state, sched, k=100, backend=backend) for _ in range(200)], repeat)
        row.append(secs / 200)
    print(f"{'plan S=20 A=5':16s} H={H} d={d} N={N}   python {row[0] * 1e3:8.3f} ms "
          f"compiled {row[1] * 1e3:8.3f} ms  speedup {row[0] / row[1]:6.1f}x")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--episodes", type=int, default=3000)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not built; run `pip install --no-build-isolation -e .` first")
    bench_runs(args.episodes, args.seeds, args.repeat)
    bench_plan(args.repeat)


if __name__ == "__main__":
    main()
