import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unisoft_lab.bounds import (ProblemConstants, bounds_report, constant_regret_expressions,
                                g_worstcase, kappa_bar_eleanor, kappa_bar_eleanor_branches,
                                kappa_bar_lsvi, kappa_bar_lsvi_branches)

GOLDEN = json.loads((Path(__file__).parent / "golden_bounds.json").read_text())


def _pc(row):
    p, g = row["params"], row["golden"]
    return ProblemConstants(d=p["d"], H=p["H"], delta=float(p["delta"]),
                            delta_min=float(g["delta_min_value"]),
                            lambda_plus=float(g["lambda_plus_value"]),
                            lambda_reg=float(p["lam"]), c1=float(p["c1"]), c2=float(p["c2"]))


@pytest.mark.parametrize("row", GOLDEN, ids=[f"grid{i}" for i in range(len(GOLDEN))])
def test_golden_grid(row):
    pc, g, p = _pc(row), row["golden"], row["params"]
    rel = 1e-9
    assert g_worstcase(p["k"], pc, float(p["beta"])) == pytest.approx(float(g["g"]), rel=rel)
    b1, b2 = kappa_bar_lsvi_branches(pc)
    assert b1 == pytest.approx(float(g["lsvi_branch1"]), rel=rel)
    assert b2 == pytest.approx(float(g["lsvi_branch2"]), rel=rel)
    e1, e2 = kappa_bar_eleanor_branches(pc)
    assert e1 == pytest.approx(float(g["eleanor_branch1"]), rel=rel)
    assert e2 == pytest.approx(float(g["eleanor_branch2"]), rel=rel)
    kl, kl_branch = kappa_bar_lsvi(pc)
    ke, _ = kappa_bar_eleanor(pc)
    assert kl == pytest.approx(float(g["kappa_lsvi"]), rel=rel)
    assert ke == pytest.approx(float(g["kappa_eleanor"]), rel=rel)
    assert kl == max(b1, b2) and kl_branch == (1 if b1 >= b2 else 2)
    assert constant_regret_expressions(pc, kl)["lsvi"] == pytest.approx(float(g["regret_lsvi"]), rel=rel)
    assert constant_regret_expressions(pc, ke)["eleanor"] == pytest.approx(float(g["regret_eleanor"]), rel=rel)


def test_golden_file_matches_fresh_extended_precision():
    """Recompute the grid with mpmath so the frozen file cannot drift from its generator."""
    import importlib.util
    spec = importlib.util.spec_from_file_location(
        "gen", Path(__file__).parent / "oracles" / "gen_bounds_golden.py")
    gen = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(gen)
    for row, p in zip(GOLDEN, gen.grid()):
        assert row["params"] == p
        assert row["golden"] == gen.golden(p)


def test_g_at_one():
    pc = ProblemConstants(d=3, H=2, delta=0.1, delta_min=0.5, lambda_plus=0.2)
    b = 1.7
    expected = 2 * b * math.sqrt(2 * 3 * math.log(2)) + 2 * 4 * math.sqrt(math.log(2 * 2 / 0.1))
    assert g_worstcase(1, pc, b) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        g_worstcase(0, pc, b)


def test_g_doubling_and_sublinearity():
    pc = ProblemConstants(d=2, H=2, delta=0.05, delta_min=3 / 32, lambda_plus=0.02)
    k = 10 ** 6
    # the o(1) is the slowly vanishing log inflation
    inflation = math.sqrt(max(math.log(1 + 2 * k) / math.log(1 + k),
                              math.log(4 * 2 * k / 0.05) / math.log(4 * k / 0.05)))
    ratio = g_worstcase(2 * k, pc, 2.65) / g_worstcase(k, pc, 2.65)
    assert math.sqrt(2) < ratio <= math.sqrt(2) * inflation
    assert inflation < 1.03
    for k in (10 ** 3, 10 ** 4, 10 ** 5, 10 ** 6):
        assert g_worstcase(4 * k, pc, 2.65) / g_worstcase(k, pc, 2.65) <= 2.2


def test_kappa_divergence_and_gap_scaling():
    base = dict(d=2, H=2, delta=0.05, delta_min=0.1)
    small = ProblemConstants(lambda_plus=1e-6, **base)
    value, branch = kappa_bar_lsvi(small)
    assert branch == 2 and value > 1e20
    pc = ProblemConstants(lambda_plus=0.05, **base)
    half = ProblemConstants(lambda_plus=0.05, **{**base, "delta_min": 0.05})
    _, b2 = kappa_bar_lsvi_branches(pc)
    _, b2h = kappa_bar_lsvi_branches(half)
    lead = 432 * 16 * 4 / (0.1 ** 2 * 0.05 ** 3)
    log_ratio = math.log(288 * 8 * 32 / (0.05 ** 2 * 0.05 ** 3 * 0.05)) / math.log(288 * 8 * 32 / (0.1 ** 2 * 0.05 ** 3 * 0.05))
    assert b2 / lead == pytest.approx(math.log(288 * 8 * 32 / (0.1 ** 2 * 0.05 ** 3 * 0.05)), rel=1e-12)
    assert b2h / b2 == pytest.approx(4 * log_ratio, rel=1e-12)


def test_eleanor_vs_lsvi():
    for d in (1, 2, 5):
        pc = ProblemConstants(d=d, H=3, delta=0.05, delta_min=0.2, lambda_plus=0.1)
        assert kappa_bar_eleanor(pc)[0] <= kappa_bar_lsvi(pc)[0]
    pc = ProblemConstants(d=1, H=3, delta=0.05, delta_min=0.2, lambda_plus=0.1)
    l1, _ = kappa_bar_lsvi_branches(pc)
    e1, _ = kappa_bar_eleanor_branches(pc)
    # d = 1: identical prefactor 48 c1^2 H^4 / lambda_plus^2
    prefactor = 48 * 64 * 81 / 0.01
    assert l1 / math.log(32 * 64 * 243 / (0.01 * 0.05)) == pytest.approx(prefactor, rel=1e-12)
    assert e1 / math.log(32 * 64 * 243 / (0.01 * 0.05)) == pytest.approx(prefactor, rel=1e-12)


def test_constant_regret_unit_case():
    pc = ProblemConstants(d=1, H=1, delta=1 / math.e, delta_min=1.0, lambda_plus=1.0)
    out = constant_regret_expressions(pc, 1.0)
    assert out["lsvi"] == pytest.approx(1.0, rel=1e-14)
    assert out["eleanor"] == pytest.approx(math.sqrt(math.log(math.e)), rel=1e-14)
    with pytest.raises(ValueError):
        constant_regret_expressions(pc, 0.0)


PARAM_STEPS = {
    "lambda_plus": (0.05, 1.3, -1),
    "delta_min": (0.1, 1.3, -1),
    "d": (2, 1, +1),
    "H": (2, 1, +1),
    "c1": (8.0, 1.5, +1),
    "c2": (1.0, 1.5, +1),
    "delta": (0.05, 1 / 1.5, +1),  # smaller delta, i.e. larger 1/delta
}


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(PARAM_STEPS)), st.integers(1, 6), st.integers(1, 5),
       st.floats(0.01, 0.9), st.floats(0.001, 0.9), st.floats(0.01, 1.0))
def test_kappa_monotonicity(param, d, H, delta, lp, dm):
    base = dict(d=d, H=H, delta=delta, delta_min=dm, lambda_plus=lp, c1=8.0, c2=1.0)
    _, factor, direction = PARAM_STEPS[param]
    moved = dict(base)
    if param in ("d", "H"):
        moved[param] = base[param] + 1
    else:
        moved[param] = base[param] * factor
    for fn in (kappa_bar_lsvi, kappa_bar_eleanor):
        a, b = fn(ProblemConstants(**base))[0], fn(ProblemConstants(**moved))[0]
        if direction > 0:
            assert b >= a * (1 - 1e-12)
        else:
            assert b <= a * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(10.0, 1e8))
def test_lsvi_expression_nonincreasing_in_gap(dm1, dm2, kappa):
    lo, hi = sorted((dm1, dm2))
    a = constant_regret_expressions(ProblemConstants(2, 2, 0.05, lo, 0.1), kappa)["lsvi"]
    b = constant_regret_expressions(ProblemConstants(2, 2, 0.05, hi, 0.1), kappa)["lsvi"]
    assert b <= a


def test_validation_and_c1_flag(caplog):
    with pytest.raises(ValueError, match="lambda_plus"):
        ProblemConstants(2, 2, 0.05, 0.1, 0.0)
    with pytest.raises(ValueError, match="delta_min"):
        ProblemConstants(2, 2, 0.05, -1.0, 0.1)
    with pytest.raises(ValueError, match="delta"):
        ProblemConstants(2, 2, 1.5, 0.1, 0.1)
    with caplog.at_level("WARNING"):
        pc = ProblemConstants(2, 2, 0.05, 0.1, 0.1, c1=2.0)
    assert pc.c1_below_floor and "below" in caplog.text


def test_report_roundtrip():
    pc = ProblemConstants(d=2, H=2, delta=0.05, delta_min=3 / 32, lambda_plus=(13 - 3 * math.sqrt(17)) / 32)
    rep = bounds_report(pc)
    back = json.loads(json.dumps(rep))
    assert back == rep
    assert rep["kappa_bar_lsvi"] > 30000  # far beyond any desk-scale horizon
    assert np.isfinite(rep["constant_regret_eleanor"])
