"""``unisoft-lab`` command-line interface.

Exit codes: 0 success, 2 invalid input (the message names the field), 3 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .bounds import ProblemConstants, bounds_report
from .features import (FeatureMap, builtin_example, find_necessity_witness, unisoft_check,
                       unisoft_mixing_check, RANK_TOL)
from .mdp import MdpError, TabularMdp, backward_induction

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3

FEATURE_FILES = ("phi1.json", "phi2.json", "phi3.json", "phi4.json")


class UsageError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _bools(xs) -> str:
    return "[" + ", ".join(str(bool(x)).lower() for x in xs) + "]"


def _load_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from None


def _load_mdp(path) -> TabularMdp:
    try:
        return TabularMdp.from_json(_load_json(path))
    except MdpError as exc:
        raise MdpError(f"{path}: {exc}") from None


def _load_fm(path) -> FeatureMap:
    fm = FeatureMap.from_json(_load_json(path))
    return fm if fm.name else FeatureMap(fm.phi, name=Path(path).stem)


def _emit(text: str, report: str | None) -> None:
    print(text)
    if report:
        harness.write_atomic(report, text + "\n")


# --------------------------------------------------------------------------- subcommands

def cmd_example(args) -> int:
    mdp, fms, model = builtin_example(args.name)
    out = Path(args.out)
    harness.write_atomic(out / "mdp.json", _dumps(mdp.to_json()) + "\n")
    for fname, fm in zip(FEATURE_FILES, fms):
        harness.write_atomic(out / fname, _dumps(fm.to_json()) + "\n")
    harness.write_atomic(out / "model.json", _dumps(model.to_json()) + "\n")
    print(f"wrote mdp.json, {', '.join(FEATURE_FILES)}, model.json to {out}")
    return EXIT_OK


def cmd_check_repr(args) -> int:
    mdp = _load_mdp(args.mdp)
    fms = [_load_fm(p) for p in args.features]
    reports = []
    for path, fm in zip(args.features, fms):
        fm.check(mdp)
        diag = unisoft_check(mdp, fm, args.rank_tol)
        reports.append({"file": str(path), "name": fm.name, **diag.to_json()})
    result = {"representations": reports}
    if len(fms) > 1:
        mix = unisoft_mixing_check(mdp, fms, args.rank_tol)
        result["mixing"] = {
            "holds": mix.holds,
            "failures": [list(f) for f in mix.failures],
            "witness": [[h, s, a, j] for (h, s, a), j in sorted(mix.witness.items())],
        }
    if args.json:
        _emit(_dumps(result), args.report)
        return EXIT_OK
    lines = []
    for r in reports:
        lines.append(f"{r['name']} ({r['file']})")
        lines.append(f"  unisoft: {_bools(r['unisoft'])}")
        lines.append(f"  optimal span rank: {r['optimal_span_rank']}")
        lines.append(f"  reachable span rank: {r['reachable_span_rank']}")
        lines.append("  lambda_plus: [" + ", ".join(f"{x:.10g}" for x in r["lambda_plus"]) + "]")
    if "mixing" in result:
        lines.append(f"mixing: {str(result['mixing']['holds']).lower()}")
        for h, s, a in result["mixing"]["failures"]:
            lines.append(f"  uncovered: stage {h + 1}, state {s + 1}, action {a + 1}")
    _emit("\n".join(lines), args.report)
    return EXIT_OK


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError("--seeds: expected comma-separated integers") from None
    if not seeds:
        raise UsageError("--seeds: empty list")
    return seeds


def cmd_run(args) -> int:
    config = harness.ExperimentConfig.load(args.config)
    if args.seeds is not None:
        config.seeds = _parse_seeds(args.seeds)
    if args.episodes is not None:
        config.episodes = args.episodes
    if args.backend is not None:
        config.backend = args.backend
    config.validate()
    out = args.out if args.out is not None else config.out
    if out is None:
        raise UsageError("out: no output directory (use --out or the config's \"out\" field)")
    if args.threads < 1:
        raise UsageError("--threads: must be >= 1")
    result = harness.run_experiment(config, threads=args.threads, out=out,
                                    dump_agent_state=args.dump_agent_state)
    K = config.episodes
    print(f"{len(result.traces)} seed(s), {K} episodes: mean cumulative regret "
          f"{result.mean_cum_regret[-1]:.6g} (std {result.std_cum_regret[-1]:.6g}); outputs in {out}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    if args.mdp or args.features:
        if not (args.mdp and args.features):
            raise UsageError("--mdp and --features must be given together")
        mdp = _load_mdp(args.mdp)
        fm = _load_fm(args.features)
        fm.check(mdp)
        diag = unisoft_check(mdp, fm, RANK_TOL)
        gaps = backward_induction(mdp)[2]
        d = args.d if args.d is not None else max(fm.dims)
        H = args.horizon if args.horizon is not None else mdp.horizon
        delta_min = args.delta_min if args.delta_min is not None else gaps.delta_min
        lambda_plus = args.lambda_plus if args.lambda_plus is not None else diag.lambda_plus_overall
    else:
        missing = [flag for flag, v in (("--d", args.d), ("--horizon", args.horizon),
                                        ("--delta-min", args.delta_min),
                                        ("--lambda-plus", args.lambda_plus)) if v is None]
        if missing:
            raise UsageError(f"{missing[0]}: required (or pass --mdp and --features)")
        d, H, delta_min, lambda_plus = args.d, args.horizon, args.delta_min, args.lambda_plus
    try:
        pc = ProblemConstants(d=d, H=H, delta=args.delta, delta_min=float(delta_min),
                              lambda_plus=float(lambda_plus), lambda_reg=args.lambda_reg,
                              c1=args.c1, c2=args.c2)
    except ValueError as exc:
        raise UsageError(f"--{str(exc).replace('_', '-')}") from None
    rep = bounds_report(pc)
    if args.json:
        print(_dumps(rep))
        return EXIT_OK
    rows = [
        ("kappa_bar_lsvi", f"{rep['kappa_bar_lsvi']:.10g}"),
        ("binding branch", str(rep["kappa_bar_lsvi_branch"])),
        ("kappa_bar_eleanor", f"{rep['kappa_bar_eleanor']:.10g}"),
        ("binding branch", str(rep["kappa_bar_eleanor_branch"])),
        ("constant regret (lsvi)", f"{rep['constant_regret_lsvi']:.10g}"),
        ("constant regret (eleanor)", f"{rep['constant_regret_eleanor']:.10g}"),
    ]
    width = max(len(k) for k, _ in rows)
    print(f"d={d} H={H} delta={args.delta} delta_min={delta_min:.10g} lambda_plus={lambda_plus:.10g} "
          f"c1={args.c1} c2={args.c2}")
    for k, v in rows:
        print(f"  {k.ljust(width)}  {v}")
    print("  (constant-regret values are order-level: hidden constants set to 1)")
    return EXIT_OK


def cmd_witness(args) -> int:
    mdp = _load_mdp(args.mdp)
    fm = _load_fm(args.features)
    fm.check(mdp)
    w = find_necessity_witness(mdp, fm, args.rank_tol)
    if w is None:
        obj = {"witness": None}
    else:
        obj = {"witness": {
            "stage": w.stage + 1,
            "state": w.state + 1,
            "action": w.action + 1,
            "policy": (np.asarray(w.policy.action) + 1).tolist(),
            "psi": np.asarray(w.psi).tolist(),
            "psi_star": np.asarray(w.psi_star).tolist(),
            "residual": w.residual,
        }}
    if args.json:
        print(_dumps(obj))
    elif w is None:
        print("no witness: every reachable feature lies in the optimal span")
    else:
        print(f"witness at stage {w.stage + 1}: policy takes action {w.action + 1} in state {w.state + 1}; "
              f"residual of Psi - Psi* off the optimal span = {w.residual:.6g}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unisoft-lab",
                                description="Representation diagnostics and regret experiments "
                                            "for linear finite-horizon MDPs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = p.add_subparsers(dest="command", metavar="{example,check-repr,run,bounds,witness}")
    sub.required = True

    ex = sub.add_parser("example", help="write a built-in MDP and its feature maps as JSON")
    ex.add_argument("--name", default="appendix-f", choices=["appendix-f"])
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_example)

    cr = sub.add_parser("check-repr", help="UniSOFT verdicts, spans and spectra of feature maps")
    cr.add_argument("mdp")
    cr.add_argument("features", nargs="+")
    cr.add_argument("--rank-tol", type=float, default=RANK_TOL)
    cr.add_argument("--json", action="store_true", help="machine-readable output")
    cr.add_argument("--report", help="also write the output to this file")
    cr.set_defaults(func=cmd_check_repr)

    run = sub.add_parser("run", help="run a seeded regret experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seeds", help="comma-separated seeds (overrides the config)")
    run.add_argument("--episodes", type=int, help="override the number of episodes")
    run.add_argument("--out")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--backend", choices=["auto", "python", "compiled"])
    run.add_argument("--dump-agent-state", action="store_true",
                     help="write final design matrices and counts per seed")
    run.set_defaults(func=cmd_run)

    b = sub.add_parser("bounds", help="critical times and constant-regret expressions")
    b.add_argument("--d", type=int)
    b.add_argument("--horizon", type=int)
    b.add_argument("--delta", type=float, default=0.05)
    b.add_argument("--delta-min", type=float)
    b.add_argument("--lambda-plus", type=float)
    b.add_argument("--lambda-reg", type=float, default=1.0)
    b.add_argument("--c1", type=float, default=8.0)
    b.add_argument("--c2", type=float, default=1.0)
    b.add_argument("--mdp", help="take H and the minimum gap from this MDP")
    b.add_argument("--features", help="take d and lambda_plus from this feature map")
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bounds)

    w = sub.add_parser("witness", help="policy whose expected features leave the optimal span")
    w.add_argument("mdp")
    w.add_argument("features")
    w.add_argument("--rank-tol", type=float, default=RANK_TOL)
    w.add_argument("--json", action="store_true")
    w.set_defaults(func=cmd_witness)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, MdpError, ValueError, KeyError, TypeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename or ''}".rstrip(": "), file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
