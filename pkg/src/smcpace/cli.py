"""Command-line front end.

Subcommands: simulate, block, sweep, continue, map and reproduce.  Every
run writes its data files plus ``manifest.json`` into ``--out``.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .codim2 import (SLICE_WINDOW, SLICES, WINDOW, classify_excitability,
                     render_two_param_map, slice_diagram)
from .continuation import Settings
from .cycles import ShootingError, detect_homoclinic_termination, refine_cycle
from .diagram import OneParamDiagram, one_parameter_diagram
from .equilibria import classify_point, find_equilibria
from .integrate import (BLOCKABLE, DEFAULT_STEP, BlowUpError, Budget, channel_block,
                        classify_oscillation, rk4_integrate, sweep)
from .model import (FULL, ParameterError, SystemDef, apply_overrides, get_system,
                    load_params, v3_of_Ca, with_param)

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_UNDECIDED, EXIT_NO_SEED = 0, 2, 3, 4, 5

# Expected outcome of blocking each conductance in the full model.
BLOCK_PATTERN = {"gL": "periodic", "gCa": "quiescent", "gK": "quiescent"}

# Default continuation windows per freed parameter.
DEFAULT_RANGES = {"v1b": SLICE_WINDOW, "v3b": WINDOW[1], "vLb": (-1.5, -0.3),
                  "v1": (-40.0, -10.0)}
CONTINUABLE = {"dimless": ("v1b", "v3b", "vLb"), "reduced": ("v1",), "full": ("v1",)}

# Default simulated span in dimensionless time units.
SIM_SPAN = 160.0

FIGURES = tuple(f"fig{i}" for i in range(1, 13))


class CliError(Exception):
    def __init__(self, code: int, text: str):
        super().__init__(text)
        self.code = code
        self.text = text


# ---------------------------------------------------------------------------
# Argument handling

class _Parser(argparse.ArgumentParser):
    """Reports usage errors as a single ``ERROR`` line instead of usage text."""

    def error(self, message):
        raise CliError(EXIT_CONFIG, f"{self.prog}: {message}")


# Flags whose values may start with '-' without being numbers (LO:HI ranges
# and comma separated states); argparse would read them as options.
DASH_VALUE_FLAGS = ("--range", "--init")


def _attach_dash_values(argv: Sequence[str]) -> list:
    out = []
    i = 0
    while i < len(argv):
        a = argv[i]
        if (a in DASH_VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-")
                and any(c in argv[i + 1] for c in ":,")):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def _global_flags() -> argparse.ArgumentParser:
    g = _Parser(add_help=False)
    g.add_argument("--model", choices=("full", "reduced", "dimless"), default="dimless")
    g.add_argument("--set", dest="overrides", action="append", default=[], metavar="NAME=VALUE",
                   help="parameter override (repeatable)")
    g.add_argument("--params", metavar="FILE", help="parameter file of 'name = value' lines")
    g.add_argument("--out", default="out", help="output directory")
    g.add_argument("--jobs", type=int, default=1, help="worker processes")
    g.add_argument("--step", type=float, help="integration step in model time")
    g.add_argument("--tol", type=float, help="corrector tolerance for cycle continuation")
    return g


def build_parser() -> argparse.ArgumentParser:
    g = _global_flags()
    ap = _Parser(prog="smcpace", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[g], help="integrate one trajectory")
    p.add_argument("--init", help="initial state, comma separated (default zeros)")
    p.add_argument("--duration", type=float, help="simulated time in model units")
    p.add_argument("--track-v3", action="store_true", help="also write v3(t) (full model)")

    p = sub.add_parser("block", parents=[g], help="channel-block experiment (full model)")
    p.add_argument("--duration", type=float, help="length of the written time series")

    p = sub.add_parser("sweep", parents=[g], help="classify behaviour over a parameter range")
    p.add_argument("--free", required=True)
    p.add_argument("--range", dest="prange", required=True, metavar="LO:HI")
    p.add_argument("--samples", type=int, default=41)
    p.add_argument("--policy", choices=("fixed", "continuation"), default="fixed")
    p.add_argument("--init", help="initial state, comma separated")

    p = sub.add_parser("continue", parents=[g], help="one-parameter bifurcation diagram")
    p.add_argument("--free", required=True)
    p.add_argument("--at", action="append", default=[], metavar="NAME=VALUE",
                   help="fix another parameter (same as --set)")
    p.add_argument("--range", dest="prange", metavar="LO:HI")
    p.add_argument("--no-cycles", action="store_true", help="equilibria only")
    p.add_argument("--orbits", type=int, default=0,
                   help="dump this many evenly spaced orbits per cycle branch")

    p = sub.add_parser("map", parents=[g], help="two-parameter (v1b, v3b) map")
    p.add_argument("--slice", type=float, help="single slice at this v3b")
    p.add_argument("--phase-portrait", action="store_true",
                   help="with --slice: nullclines, equilibria, cycles and trajectories")
    p.add_argument("--v1b", type=float, help="v1b of the phase portrait")
    p.add_argument("--resolution", type=float, help="maximal step along equilibrium loci")

    p = sub.add_parser("reproduce", parents=[g], help="data bundle for one figure")
    p.add_argument("figure")
    return ap


def _parse_assignments(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise CliError(EXIT_CONFIG, f"expected NAME=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        try:
            out[k] = float(v)
        except ValueError:
            raise CliError(EXIT_CONFIG, f"bad number in {item!r}") from None
    return out


def _parse_range(text: str) -> tuple:
    try:
        lo, hi = (float(s) for s in text.split(":"))
    except ValueError:
        raise CliError(EXIT_CONFIG, f"expected LO:HI, got {text!r}") from None
    if not lo < hi:
        raise CliError(EXIT_CONFIG, "range must satisfy LO < HI")
    return lo, hi


def _parse_state(text: Optional[str], system: SystemDef) -> np.ndarray:
    if not text:
        return np.zeros(system.dimension)
    try:
        x = np.array([float(s) for s in text.split(",")])
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad initial state {text!r}") from None
    if len(x) != system.dimension:
        raise CliError(EXIT_CONFIG, f"model {system.name} needs {system.dimension} state values")
    return x


def _setup(args) -> tuple:
    system = get_system(args.model)
    params = system.default_params()
    if args.params:
        params = load_params(args.params, params)
    overrides = _parse_assignments(args.overrides + list(getattr(args, "at", [])))
    params = apply_overrides(params, overrides)
    params.validate()
    if args.jobs < 1:
        raise CliError(EXIT_CONFIG, "--jobs must be at least 1")
    if args.step is not None and args.step <= 0:
        raise CliError(EXIT_CONFIG, "--step must be positive")
    if args.tol is not None and not 0 < args.tol < 1e-3:
        raise CliError(EXIT_CONFIG, "--tol must lie in (0, 1e-3)")
    return system, params


def _budget(system: SystemDef, args) -> Budget:
    return Budget.for_system(system, step=args.step)


def _cycle_settings(args) -> Optional[Settings]:
    if args.tol is None:
        return None
    return Settings(ds=1e-2, ds_min=1e-7, ds_max=0.2, tol=args.tol, step_tol=args.tol,
                    max_iter=10, shrink_at=7)


def _finish(out: Path, args, argv, params, outputs, **extra) -> None:
    io.write_manifest(out / "manifest.json", args.command, argv, params, outputs,
                      model=args.model, **extra)


# ---------------------------------------------------------------------------
# Commands

def cmd_simulate(args, argv) -> int:
    system, params = _setup(args)
    if args.track_v3 and system is not FULL:
        raise CliError(EXIT_CONFIG, "--track-v3 needs --model full")
    out = Path(args.out)
    x0 = _parse_state(args.init, system)
    step = args.step or DEFAULT_STEP * system.time_unit
    span = args.duration if args.duration is not None else SIM_SPAN * system.time_unit
    if span <= 0:
        raise CliError(EXIT_CONFIG, "--duration must be positive")
    traj = rk4_integrate(system, params, x0, (0.0, span), step)
    report = classify_oscillation(system, params, x0, _budget(system, args))
    outputs = [io.write_trajectory(out / "trajectory.csv", traj, system.state_names),
               io.write_json(out / "report.json", report.as_dict())]
    if args.track_v3:
        v3 = v3_of_Ca(traj.states[:, 2], params)
        outputs.append(io.write_csv(out / "v3.csv", ["t", "v3"], zip(traj.times, v3)))
    _finish(out, args, argv, params, outputs, initial_state=x0.tolist(), step=step)
    print(f"{report.classification}" + (f" period={report.period!r}" if report.period else ""))
    return EXIT_OK


def cmd_block(args, argv) -> int:
    if args.model != "full":
        raise CliError(EXIT_CONFIG, "block needs --model full")
    system, params = _setup(args)
    out = Path(args.out)
    budget = _budget(system, args)
    span = args.duration if args.duration is not None else SIM_SPAN * system.time_unit
    rows, outputs, undecided = [], [], []
    for which in BLOCKABLE:
        rep = channel_block(which, params, budget=budget)
        expected = BLOCK_PATTERN[which]
        rows.append([which, rep.classification, rep.period, rep.v_min, rep.v_max, expected,
                     int(rep.classification == expected)])
        if rep.classification == "undecided":
            undecided.append(which)
        traj = rk4_integrate(system, with_param(params, which, 0.0), np.zeros(3), (0.0, span),
                             budget.step)
        outputs.append(io.write_trajectory(out / f"block_{which}.csv", traj, system.state_names))
        print(f"{which}: {rep.classification} (expected {expected})")
    outputs.append(io.write_csv(out / "block.csv", ["channel", "classification", "period",
                                                    "v_min", "v_max", "expected", "match"], rows))
    _finish(out, args, argv, params, outputs)
    if undecided:
        raise CliError(EXIT_UNDECIDED, "undecided classification for " + ", ".join(undecided))
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    system, params = _setup(args)
    system.handle(args.free)
    lo, hi = _parse_range(args.prange)
    if args.samples < 2:
        raise CliError(EXIT_CONFIG, "--samples must be at least 2")
    out = Path(args.out)
    results = sweep(system, params, args.free, (lo, hi), samples=args.samples,
                    s0=_parse_state(args.init, system), s0_policy=args.policy,
                    budget=_budget(system, args), jobs=args.jobs)
    outputs = [io.write_sweep(out / "sweep.csv", results)]
    _finish(out, args, argv, params, outputs, free=args.free, range=[lo, hi])
    counts = {}
    for _, r in results:
        counts[r.classification] = counts.get(r.classification, 0) + 1
    print(", ".join(f"{k}: {v}" for k, v in sorted(counts.items())))
    return EXIT_OK


def _write_diagram(out: Path, diag: OneParamDiagram, orbits: int = 0) -> list:
    system, handle = diag.system, diag.handle
    outputs = []
    for i, br in enumerate(diag.equilibria):
        # Folds re-tagged as SNIC at the diagram level carry that tag here too.
        events = [next((e for e in diag.events if e.param == b.param and e.kind == "SNIC"), b)
                  for b in br.events]
        outputs.append(io.write_equilibrium_branch(out / f"equilibria_{i}.csv",
                                                   replace(br, events=events), system,
                                                   diag.params))
    folds = [e for e in diag.events if e.kind in ("SN", "SNIC")]
    period_rows = []
    for i, br in enumerate(diag.cycles):
        terminal = None
        if br.termination == "period-blowup":
            terminal = detect_homoclinic_termination(br, system, diag.params, folds).kind
        elif br.termination == "hopf":
            terminal = "HB"
        outputs.append(io.write_cycle_branch(out / f"cycles_{i}.csv", br, terminal))
        period_rows += [[c.param, c.period, c.stability, i] for c in br.points]
        if orbits > 0 and br.points:
            idx = np.unique(np.linspace(0, len(br.points) - 1, orbits).round().astype(int))
            for j in idx:
                outputs.append(io.write_orbit(out / f"orbit_{i}_{j}.csv", br.points[j],
                                              system.state_names))
    outputs.append(io.write_csv(out / "period.csv", ["param", "period", "stability", "branch"],
                                period_rows))
    outputs.append(io.write_events(out / "events.json", diag.events, [handle]))
    return outputs


def cmd_continue(args, argv) -> int:
    system, params = _setup(args)
    if args.free not in CONTINUABLE[system.name]:
        raise CliError(EXIT_CONFIG, f"--free must be one of {CONTINUABLE[system.name]} "
                                    f"for model {system.name}")
    limits = _parse_range(args.prange) if args.prange else DEFAULT_RANGES[args.free]
    out = Path(args.out)
    diag = one_parameter_diagram(system, params, args.free, limits,
                                 with_cycles=not args.no_cycles, step=args.step,
                                 cycle_settings=_cycle_settings(args))
    if not diag.equilibria:
        raise CliError(EXIT_NO_SEED, f"no equilibrium found for {args.free} in {limits}")
    outputs = _write_diagram(out, diag, args.orbits)
    _finish(out, args, argv, params, outputs, free=args.free, range=list(limits),
            sequence=diag.sequence())
    print(" ".join(diag.sequence()))
    return EXIT_OK


def _cycles_at(diag: OneParamDiagram, value: float) -> list:
    """Cycles of every computed branch at the freed-parameter ``value``,
    refined from the nearest branch point."""
    found = []
    for br in diag.cycles:
        for a, b in zip(br.points[:-1], br.points[1:]):
            if min(a.param, b.param) <= value <= max(a.param, b.param):
                src = a if abs(a.param - value) <= abs(b.param - value) else b
                pp = with_param(diag.params, diag.handle, value)
                try:
                    c = refine_cycle(diag.system, pp, src.anchor_state, src.period,
                                     param_name=diag.handle)
                except ShootingError:
                    continue
                c.param = value
                if not any(abs(c.period - f.period) < 1e-6 * f.period for f in found):
                    found.append(c)
    return found


def phase_portrait(diag: OneParamDiagram, v1b: float, samples: int = 401) -> dict:
    """Nullclines, equilibria, cycles and sample trajectories of the planar
    model at one point of a slice."""
    system = diag.system
    pp = with_param(diag.params, diag.handle, v1b)
    lo, hi = system.voltage_window(pp)
    V = np.linspace(lo, hi, samples)
    f0 = np.array([system.rhs(np.array([v, 0.0]), pp)[0] for v in V])
    f1 = np.array([system.rhs(np.array([v, 1.0]), pp)[0] for v in V])
    with np.errstate(divide="ignore", invalid="ignore"):
        n_v = -f0 / (f1 - f0)
    n_n = np.array([system.quasi_steady(v, pp)[1] for v in V])
    eqs = []
    for x in find_equilibria(system, pp):
        eigs, label = classify_point(system.jacobian(x, pp))
        eqs.append((x, label))
    cycles = _cycles_at(diag, v1b)
    rng = np.random.default_rng(0)
    starts = np.column_stack([rng.uniform(lo, hi, 8), rng.uniform(0.0, 1.0, 8)])
    trajs = [rk4_integrate(system, pp, s, (0.0, 100.0)) for s in starts]
    return {"V": V, "n_vnull": n_v, "n_nnull": n_n, "equilibria": eqs, "cycles": cycles,
            "trajectories": trajs}


def cmd_map(args, argv) -> int:
    if args.model != "dimless":
        raise CliError(EXIT_CONFIG, "map needs --model dimless")
    system, params = _setup(args)
    out = Path(args.out)
    if args.phase_portrait and args.slice is None:
        raise CliError(EXIT_CONFIG, "--phase-portrait needs --slice")
    if args.slice is not None:
        diag = slice_diagram(args.slice, params, step=args.step,
                             cycle_settings=_cycle_settings(args))
        label = classify_excitability(args.slice, params, diagram=diag)
        outputs = _write_diagram(out, diag)
        outputs.append(io.write_csv(out / "excitability.csv", ["v3b", "label", "onset"],
                                    [[args.slice, label.label,
                                      label.onset_event.kind if label.onset_event else ""]]))
        extra = {}
        if args.phase_portrait:
            v1b = args.v1b if args.v1b is not None else _portrait_v1b(diag)
            outputs += _write_portrait(out, diag, v1b)
            extra["v1b"] = v1b
        _finish(out, args, argv, params, outputs, slice=args.slice, label=label.label, **extra)
        print(" ".join(diag.sequence()), "|", label.label)
        return EXIT_OK

    m = render_two_param_map(WINDOW, args.resolution, params, jobs=args.jobs)
    outputs = []
    for i, locus in enumerate(m.loci):
        outputs.append(io.write_locus(out / f"locus_{i}_{locus.kind}.csv", locus))
    outputs.append(io.write_events(out / "events.json", m.events, ["v1b", "v3b"]))
    rows = [[name, SLICES[name], lab.label, lab.onset_event.kind if lab.onset_event else ""]
            for name, lab in m.excitability.items()]
    outputs.append(io.write_csv(out / "excitability.csv", ["slice", "v3b", "label", "onset"],
                                rows))
    for name, d in m.slices.items():
        outputs.append(io.write_events(out / f"slice_{name}_events.json", d.events, ["v1b"]))
    loci = [{"file": f"locus_{i}_{L.kind}.csv", "kind": L.kind, "truncated": L.truncated,
             "note": L.note} for i, L in enumerate(m.loci)]
    _finish(out, args, argv, params, outputs, window=[list(w) for w in WINDOW],
            slices=dict(SLICES), loci=loci, counts=m.counts())
    print(", ".join(f"{k}: {v}" for k, v in sorted(m.counts().items())))
    for name, lab in m.excitability.items():
        print(f"{name} ({SLICES[name]}): {lab.label}")
    return EXIT_OK


def _portrait_v1b(diag: OneParamDiagram) -> float:
    """Middle of the stable-cycle window, which on a slice with homoclinic
    onset lies between HC and SNC."""
    w = diag.stable_cycle_window()
    if w is None:
        return getattr(diag.params, diag.handle)
    return 0.5 * (w[0] + w[1])


def _write_portrait(out: Path, diag: OneParamDiagram, v1b: float) -> list:
    pp = phase_portrait(diag, v1b)
    names = diag.system.state_names
    outputs = [io.write_csv(out / "nullclines.csv", ["V", "N_on_V_nullcline", "N_on_N_nullcline"],
                            zip(pp["V"], pp["n_vnull"], pp["n_nnull"])),
               io.write_csv(out / "portrait_equilibria.csv", [*names, "stability"],
                            [[*x, lab] for x, lab in pp["equilibria"]])]
    for i, c in enumerate(pp["cycles"]):
        outputs.append(io.write_orbit(out / f"portrait_cycle_{i}_{c.stability}.csv", c, names))
    for i, tr in enumerate(pp["trajectories"]):
        outputs.append(io.write_trajectory(out / f"portrait_traj_{i}.csv", tr, names))
    return outputs


# ---------------------------------------------------------------------------
# Figure bundles

def _figure_runs(fig: str) -> list:
    """(subdirectory, argv) pairs for one figure, with pinned settings."""
    dim = ["--model", "dimless"]
    sl = {k: ["map", "--slice", repr(v)] + dim for k, v in SLICES.items()}
    runs = {
        "fig1": [("block", ["block", "--model", "full"])],
        "fig2": [("full_v3", ["simulate", "--model", "full", "--track-v3"])],
        "fig3": [("full", ["simulate", "--model", "full"]),
                 ("reduced", ["simulate", "--model", "reduced"]),
                 ("dimless", ["simulate", "--model", "dimless"])],
        "fig4": [("full", ["continue", "--model", "full", "--free", "v1", "--range", "-40:-10"]),
                 ("reduced", ["continue", "--model", "reduced", "--free", "v1",
                              "--range", "-40:-10"]),
                 ("dimless", ["continue", "--free", "v1b", "--range", "-0.5:-0.125"] + dim)],
        "fig5": [("dimless_v3b", ["continue", "--free", "v3b"] + dim)],
        "fig6": [("dimless_vLb", ["continue", "--free", "vLb"] + dim)],
        "fig7": [("map", ["map"] + dim)],
        "fig8": [("l1", sl["l1"]), ("l2", sl["l2"])],
        "fig9": [("l3", sl["l3"]), ("l4", sl["l4"])],
        "fig10": [("l3_portrait", sl["l3"] + ["--phase-portrait"])],
        "fig11": [("l5", sl["l5"])],
        "fig12": [("l6", sl["l6"])],
    }
    return runs[fig]


PLOT_NOTES = {
    "fig1": "one panel per blocked channel: x = t, y = v from block/block_<channel>.csv",
    "fig2": "x = t, y = v3 from full_v3/v3.csv",
    "fig3": "one panel per model: x = t, y = first state column of <model>/trajectory.csv",
    "fig4": ("panels a-c: x = param, y = first state column of <model>/equilibria_*.csv "
             "(colour by stability, event rows labelled), cycle branches as v_min and v_max "
             "of <model>/cycles_*.csv; panel d: x = param, y = period from dimless/period.csv"),
    "fig5": ("x = param, y = V from dimless_v3b/equilibria_*.csv, cycles as v_min and v_max; "
             "period from dimless_v3b/period.csv"),
    "fig6": "x = param, y = V from dimless_vLb/equilibria_*.csv, cycles as v_min and v_max",
    "fig7": ("x = v1b, y = v3b for every map/locus_*.csv (colour by kind), markers from "
             "map/events.json, horizontal slice lines at the v3b values in map/manifest.json"),
    "fig8": "per slice: x = param, y = V from <slice>/equilibria_*.csv and <slice>/cycles_*.csv",
    "fig9": "per slice: x = param, y = V from <slice>/equilibria_*.csv and <slice>/cycles_*.csv",
    "fig10": ("x = V, y = N: nullclines from l3_portrait/nullclines.csv, points from "
              "portrait_equilibria.csv, closed curves from portrait_cycle_*.csv, thin curves "
              "from portrait_traj_*.csv"),
    "fig11": "x = param, y = V from l5/equilibria_*.csv and l5/cycles_*.csv",
    "fig12": "x = param, y = V from l6/equilibria_*.csv and l6/cycles_*.csv",
}


def cmd_reproduce(args, argv) -> int:
    if args.figure not in FIGURES:
        raise CliError(EXIT_CONFIG, f"unknown figure {args.figure!r}; expected fig1..fig12")
    out = Path(args.out) / args.figure
    runs = _figure_runs(args.figure)
    for sub, run_argv in runs:
        code = main(run_argv + ["--out", str(out / sub), "--jobs", str(args.jobs)])
        if code != EXIT_OK:
            return code
    (out / "plot.txt").write_text(PLOT_NOTES[args.figure] + "\n", encoding="utf-8")
    io.write_manifest(out / "manifest.json", "reproduce", argv, None, [out / "plot.txt"],
                      figure=args.figure, runs=[{"dir": s, "argv": a} for s, a in runs])
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "block": cmd_block, "sweep": cmd_sweep,
            "continue": cmd_continue, "map": cmd_map, "reproduce": cmd_reproduce}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(_attach_dash_values(argv))
        except SystemExit as exc:
            # --help and friends
            return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
        return COMMANDS[args.command](args, argv)
    except CliError as exc:
        print(f"ERROR {exc.code}: {exc.text}", file=sys.stderr)
        return exc.code
    except ParameterError as exc:
        print(f"ERROR {EXIT_CONFIG}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"ERROR {EXIT_BLOWUP}: integration blew up ({exc})", file=sys.stderr)
        return EXIT_BLOWUP
