import csv
import json
import re

import numpy as np
import pytest

import smcpace.cli as cli
from smcpace.cli import main
from smcpace.integrate import BlowUpError, OscillationReport
from smcpace.model import TABLE1

ERROR_LINE = re.compile(r"^ERROR (\d+): \S.*$")


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _error(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    m = ERROR_LINE.match(lines[0])
    assert m
    return int(m.group(1))


@pytest.mark.parametrize("argv", [
    ["simulate", "--set", "bogus=1"],
    ["simulate", "--set", "gK"],
    ["simulate", "--set", "gK=abc"],
    ["simulate", "--step", "-1"],
    ["simulate", "--jobs", "0"],
    ["simulate", "--init", "0,0,0"],
    ["simulate", "--track-v3"],
    ["sweep", "--free", "v1b", "--range", "0:-1"],
    ["sweep", "--free", "v1b", "--range", "oops"],
    ["continue", "--free", "gK"],
    ["continue", "--free", "v1b", "--tol", "0.5"],
    ["block", "--model", "dimless"],
    ["reproduce", "fig99"],
    ["no-such-command"],
])
def test_config_errors_exit_2_with_one_line_message(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert _error(capsys) == 2


def test_blowup_exits_3(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise BlowUpError(1.0)
    monkeypatch.setattr(cli, "rk4_integrate", boom)
    assert main(["simulate", "--out", str(tmp_path)]) == 3
    assert _error(capsys) == 3


def test_undecided_block_exits_4(tmp_path, capsys, monkeypatch):
    rep = OscillationReport("undecided", None, -40.0, -30.0)
    monkeypatch.setattr(cli, "channel_block", lambda *a, **k: rep)
    assert main(["block", "--model", "full", "--duration", "10", "--out", str(tmp_path)]) == 4
    assert _error(capsys) == 4
    # The verdict table is still written.
    assert (tmp_path / "block.csv").exists()


def test_missing_seed_exits_5(tmp_path, capsys, monkeypatch):
    real = cli.one_parameter_diagram

    def no_branches(*a, **k):
        d = real(*a, **{**k, "with_cycles": False})
        d.equilibria = []
        return d
    monkeypatch.setattr(cli, "one_parameter_diagram", no_branches)
    assert main(["continue", "--free", "vLb", "--no-cycles", "--out", str(tmp_path)]) == 5
    assert _error(capsys) == 5


def test_simulate_dimless_is_periodic_and_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--out", str(a)]) == 0
    assert main(["simulate", "--out", str(b)]) == 0
    assert capsys.readouterr().out.startswith("periodic")
    for name in ("trajectory.csv", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    report = json.loads((a / "report.json").read_text())
    assert report["classification"] == "periodic"
    assert _rows(a / "trajectory.csv")[0] == ["t", "V", "N"]
    man = json.loads((a / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["argv"] == ["simulate", "--out", str(a)]
    assert "timestamp" in man


def test_manifest_argv_reruns_to_identical_outputs(tmp_path):
    a = tmp_path / "a"
    assert main(["sweep", "--free", "v1b", "--range", "-0.3:-0.1", "--samples", "3",
                 "--out", str(a)]) == 0
    argv = json.loads((a / "manifest.json").read_text())["argv"]
    b = tmp_path / "b"
    argv[argv.index("--out") + 1] = str(b)
    assert main(argv) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()


def test_numbers_round_trip_exactly(tmp_path):
    main(["simulate", "--duration", "20", "--out", str(tmp_path)])
    rows = _rows(tmp_path / "trajectory.csv")[1:]
    for r in rows[:50]:
        for s in r:
            assert repr(float(s)) == s
    assert b"\r" not in (tmp_path / "trajectory.csv").read_bytes()


def test_full_model_v3_stays_within_its_bounds(tmp_path):
    assert main(["simulate", "--model", "full", "--track-v3", "--out", str(tmp_path)]) == 0
    v3 = np.array([float(r[1]) for r in _rows(tmp_path / "v3.csv")[1:]])
    lo, hi = TABLE1.v6 - TABLE1.v5 / 2, TABLE1.v6 + TABLE1.v5 / 2
    assert (lo, hi) == (-19.0, -11.0)
    assert lo <= v3.min() and v3.max() <= hi
    # Most of the time is spent near the upper bound.
    assert np.mean(v3 > hi - 1.0) > 0.5


def test_potassium_block_in_full_model_is_quiescent(tmp_path, capsys):
    assert main(["simulate", "--model", "full", "--set", "gK=0", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "quiescent"


def test_params_file_and_overrides(tmp_path, capsys):
    pf = tmp_path / "p.txt"
    pf.write_text("v1b = -0.1\n", encoding="utf-8")
    assert main(["simulate", "--params", str(pf), "--out", str(tmp_path / "o")]) == 0
    assert capsys.readouterr().out.strip() == "quiescent"
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["params"]["v1b"] == -0.1


def test_continue_writes_branches_and_events(tmp_path, capsys):
    assert main(["continue", "--free", "v1b", "--at", "v3b=-0.1375", "--orbits", "2",
                 "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.split() == ["SN", "SNIC", "HB", "SNC"]
    kinds = {e["kind"] for e in json.loads((tmp_path / "events.json").read_text())}
    assert kinds == {"SN", "SNIC", "HB", "SNC"}
    eq = _rows(tmp_path / "equilibria_0.csv")
    assert eq[0] == ["param", "V", "N", "re_eig1", "im_eig1", "re_eig2", "im_eig2",
                     "stability", "event"]
    assert {r[-1] for r in eq[1:]} >= {"SN", "SNIC", "HB"}
    cyc = sorted(tmp_path.glob("cycles_*.csv"))
    assert cyc and _rows(cyc[0])[0] == ["param", "period", "v_min", "v_max", "mult_re",
                                        "mult_im", "stability", "event"]
    assert _rows(tmp_path / "period.csv")[0] == ["param", "period", "stability", "branch"]
    assert list(tmp_path.glob("orbit_*.csv"))
    # Bistable window: a stable cycle coexists with the stable equilibrium
    # between the Hopf point and the cycle fold.
    ev = {e["kind"]: e["v1b"] for e in json.loads((tmp_path / "events.json").read_text())}
    stable = [float(r[0]) for f in cyc for r in _rows(f)[1:] if r[6] == "stable"]
    assert any(ev["SNC"] < v < ev["HB"] for v in stable)


def test_v_lb_diagram_mirrors_v1b(tmp_path, capsys):
    assert main(["continue", "--free", "vLb", "--no-cycles", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.split() == ["HB", "SN", "SN"]


def test_reproduce_fig1_bundle(tmp_path):
    assert main(["reproduce", "fig1", "--out", str(tmp_path)]) == 0
    b = tmp_path / "fig1"
    rows = _rows(b / "block" / "block.csv")
    assert rows[0] == ["channel", "classification", "period", "v_min", "v_max", "expected",
                       "match"]
    assert {r[0]: r[1] for r in rows[1:]} == {"gL": "periodic", "gCa": "quiescent",
                                              "gK": "quiescent"}
    assert all(r[-1] == "1" for r in rows[1:])
    for ch in ("gL", "gCa", "gK"):
        assert (b / "block" / f"block_{ch}.csv").exists()
    assert (b / "plot.txt").read_text().strip()
    man = json.loads((b / "manifest.json").read_text())
    assert man["figure"] == "fig1" and man["runs"][0]["dir"] == "block"


def test_reproduce_fig3_bundle(tmp_path):
    assert main(["reproduce", "fig3", "--out", str(tmp_path)]) == 0
    for sub in ("full", "reduced", "dimless"):
        rep = json.loads((tmp_path / "fig3" / sub / "report.json").read_text())
        assert rep["classification"] == "periodic"
