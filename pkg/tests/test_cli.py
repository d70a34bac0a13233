import json
import math
import subprocess
import sys

import numpy as np
import pytest

from unisoft_lab.cli import dispatch
from unisoft_lab.features import FeatureMap, LowRankModel
from unisoft_lab.mdp import TabularMdp

SUBCOMMANDS = ("example", "check-repr", "run", "bounds", "witness")


@pytest.fixture(scope="module")
def fixtures(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures")
    assert dispatch(["example", "--name", "appendix-f", "--out", str(out)]) == 0
    return out


def test_example_writes_bundle(fixtures, appf):
    names = sorted(p.name for p in fixtures.iterdir())
    assert names == ["mdp.json", "model.json", "phi1.json", "phi2.json", "phi3.json", "phi4.json"]
    mdp, fms, _ = appf
    back = TabularMdp.from_json(json.loads((fixtures / "mdp.json").read_text()))
    assert np.array_equal(back.reward, mdp.reward) and np.array_equal(back.transition, mdp.transition)
    fm = FeatureMap.from_json(json.loads((fixtures / "phi4.json").read_text()))
    assert fm.dims == [4, 2]
    LowRankModel.from_json(json.loads((fixtures / "model.json").read_text()))


def test_check_repr_text(fixtures, capsys):
    assert dispatch(["check-repr", str(fixtures / "mdp.json"), str(fixtures / "phi2.json")]) == 0
    out = capsys.readouterr().out
    assert "unisoft: [true, false]" in out
    assert "mixing" not in out


def test_check_repr_json_roundtrip(fixtures, capsys, tmp_path):
    files = [str(fixtures / f) for f in ("phi1.json", "phi2.json", "phi3.json", "phi4.json")]
    report = tmp_path / "report.json"
    assert dispatch(["check-repr", str(fixtures / "mdp.json"), *files, "--json", "--report", str(report)]) == 0
    text = capsys.readouterr().out
    obj = json.loads(text)
    assert json.loads(report.read_text()) == obj
    assert [r["unisoft"] for r in obj["representations"]] == [[True, True], [True, False],
                                                               [False, False], [False, True]]
    assert obj["representations"][0]["lambda_plus"][0] == pytest.approx((13 - 3 * math.sqrt(17)) / 32, abs=1e-9)
    assert obj["mixing"]["holds"] is True


def test_check_repr_mixing_text(fixtures, capsys):
    assert dispatch(["check-repr", str(fixtures / "mdp.json"), str(fixtures / "phi3.json")]) == 0
    capsys.readouterr()
    assert dispatch(["check-repr", str(fixtures / "mdp.json"),
                     str(fixtures / "phi2.json"), str(fixtures / "phi4.json")]) == 0
    assert "mixing: true" in capsys.readouterr().out


def test_witness(fixtures, capsys):
    assert dispatch(["witness", str(fixtures / "mdp.json"), str(fixtures / "phi2.json"), "--json"]) == 0
    w = json.loads(capsys.readouterr().out)["witness"]
    assert w["stage"] == 2 and w["residual"] > 0.01
    assert dispatch(["witness", str(fixtures / "mdp.json"), str(fixtures / "phi1.json"), "--json"]) == 0
    assert json.loads(capsys.readouterr().out) == {"witness": None}


def test_bounds_flags_and_pair(fixtures, capsys):
    lp = (13 - 3 * math.sqrt(17)) / 32
    argv = ["bounds", "--d", "2", "--horizon", "2", "--delta", "0.05", "--delta-min", "0.09375",
            "--lambda-plus", repr(lp), "--c1", "8", "--c2", "1"]
    assert dispatch(argv) == 0
    text = capsys.readouterr().out
    assert "kappa_bar_lsvi" in text and "binding branch" in text
    assert dispatch(argv + ["--json"]) == 0
    from_flags = json.loads(capsys.readouterr().out)
    assert dispatch(["bounds", "--mdp", str(fixtures / "mdp.json"), "--features",
                     str(fixtures / "phi1.json"), "--json"]) == 0
    from_pair = json.loads(capsys.readouterr().out)
    assert from_pair["kappa_bar_lsvi"] == pytest.approx(from_flags["kappa_bar_lsvi"], rel=1e-9)
    assert from_pair["constants"]["delta_min"] == pytest.approx(3 / 32, abs=1e-12)


def test_bounds_invalid(capsys):
    assert dispatch(["bounds", "--d", "2"]) == 2
    assert "--horizon" in capsys.readouterr().err
    assert dispatch(["bounds", "--d", "2", "--horizon", "2", "--delta-min", "0.1", "--lambda-plus", "0"]) == 2
    assert "lambda-plus" in capsys.readouterr().err


def _write_config(path, **extra):
    cfg = {"mdp": {"builtin": "appendix-f"}, "representations": ["phi1"], "episodes": 300,
           "seeds": [0, 1], "diagnostics_every": 100}
    cfg.update(extra)
    path.write_text(json.dumps(cfg))
    return path


def test_run_and_overrides(tmp_path, capsys):
    conf = _write_config(tmp_path / "c.json")
    out = tmp_path / "out"
    assert dispatch(["run", "--config", str(conf), "--out", str(out), "--seeds", "4,7",
                     "--episodes", "150", "--threads", "2"]) == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "diagnostics_seed4.csv", "diagnostics_seed7.csv", "metadata.json", "summary.csv",
        "trace_seed4.csv", "trace_seed7.csv"]
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["seeds"] == [4, 7] and meta["config"]["episodes"] == 150
    assert meta["config"]["schedule"]["K"] == 150
    assert "mean cumulative regret" in capsys.readouterr().out


def test_run_bytes_identical_across_threads(tmp_path):
    conf = _write_config(tmp_path / "c.json", seeds=[0, 1, 2])
    for name, threads in (("a", "1"), ("b", "1"), ("c", "3")):
        assert dispatch(["run", "--config", str(conf), "--out", str(tmp_path / name), "--threads", threads]) == 0
    for f in ("trace_seed0.csv", "trace_seed1.csv", "trace_seed2.csv", "summary.csv", "diagnostics_seed2.csv"):
        ref = (tmp_path / "a" / f).read_bytes()
        assert (tmp_path / "b" / f).read_bytes() == ref
        assert (tmp_path / "c" / f).read_bytes() == ref


@pytest.mark.parametrize("extra, field", [
    ({"episodes": -3}, "episodes"),
    ({"agent": {"kind": "dqn"}}, "agent.kind"),
    ({"schedule": {"delta": 2.0}}, "schedule.delta"),
])
def test_run_invalid_config(tmp_path, capsys, extra, field):
    conf = _write_config(tmp_path / "c.json", **extra)
    assert dispatch(["run", "--config", str(conf), "--out", str(tmp_path / "o")]) == 2
    assert field in capsys.readouterr().err


def test_run_exit_codes(tmp_path, capsys):
    assert dispatch(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert dispatch(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    conf = _write_config(tmp_path / "c.json")
    assert dispatch(["run", "--config", str(conf)]) == 2
    assert "out" in capsys.readouterr().err
    assert dispatch(["run", "--config", str(conf), "--out", str(tmp_path / "o"), "--seeds", "a,b"]) == 2
    assert dispatch(["run", "--config", str(conf), "--out", str(tmp_path / "o"), "--threads", "0"]) == 2


def test_missing_inputs(tmp_path, fixtures):
    assert dispatch(["check-repr", str(tmp_path / "nope.json"), str(fixtures / "phi1.json")]) == 3
    assert dispatch(["witness", str(fixtures / "mdp.json"), str(tmp_path / "nope.json")]) == 3


def test_mismatched_feature_map(tmp_path, fixtures, capsys):
    wrong = FeatureMap((np.ones((3, 2, 2)), np.ones((3, 2, 2))))
    path = tmp_path / "wrong.json"
    path.write_text(json.dumps(wrong.to_json()))
    assert dispatch(["check-repr", str(fixtures / "mdp.json"), str(path)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_help_lists_subcommands(capsys):
    assert dispatch(["--help"]) == 0
    out = capsys.readouterr().out
    for name in SUBCOMMANDS:
        assert name in out
    assert dispatch(["nonsense"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "unisoft_lab", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "check-repr" in proc.stdout
