"""File output: CSV tables with round-trip number formatting, JSON event
lists and run manifests."""
from __future__ import annotations

import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .cycles import ORBIT_SAMPLES, CycleBranch, CycleSolution
from .equilibria import BifurcationEvent, EquilibriumBranch, eigenvalues, stability_label
from .integrate import Trajectory
from .model import SystemDef, format_params, with_param

LOCUS_DIAGNOSTICS = {
    "fold": ("trace", "V"),
    "snic": ("trace", "V"),
    "hopf": ("omega", "l1"),
    "homoclinic": ("saddle_quantity", "orbit_distance"),
    "snc": ("period", "amplitude"),
}


def fmt(x) -> str:
    """Shortest decimal that reads back to the same double; blank for
    missing values."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    v = float(x)
    if math.isnan(v):
        return ""
    return repr(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return None if not math.isfinite(v) else v
    return x


def write_json(path: Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(data), indent=1, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Tables

def write_trajectory(path: Path, traj: Trajectory, names: Sequence[str]) -> Path:
    rows = (np.concatenate(([t], x)) for t, x in zip(traj.times, traj.states))
    return write_csv(path, ["t", *names], rows)


def _eig_columns(d: int) -> list:
    cols = []
    for i in range(1, d + 1):
        cols += [f"re_eig{i}", f"im_eig{i}"]
    return cols


def _sorted_eigs(eigs) -> list:
    eigs = sorted(np.asarray(eigs, dtype=complex), key=lambda z: (-z.real, -z.imag))
    out = []
    for z in eigs:
        out += [z.real, z.imag]
    return out


def write_equilibrium_branch(path: Path, branch: EquilibriumBranch, system: SystemDef,
                             params) -> Path:
    """One row per continuation point; each localized event is inserted as
    its own row next to the nearest point, with the kind in ``event``."""
    rows = [[pt.param, *pt.state, *_sorted_eigs(pt.eigenvalues), pt.stability, ""]
            for pt in branch.points]
    s = np.asarray(system.state_scale, dtype=float)
    ps = system.param_scale(branch.freed_handle)
    keyed = [(i, r) for i, r in enumerate(rows)]
    for ev in branch.events:
        dist = [abs(pt.param - ev.param) / ps + np.max(np.abs((pt.state - ev.state) / s))
                for pt in branch.points]
        i = int(np.argmin(dist))
        J = system.jacobian(ev.state, with_param(params, branch.freed_handle, ev.param))
        eig = eigenvalues(J)
        keyed.append((i + 0.5, [ev.param, *ev.state, *_sorted_eigs(eig),
                                stability_label(eig), ev.kind]))
    keyed.sort(key=lambda kr: kr[0])
    header = ["param", *system.state_names, *_eig_columns(system.dimension), "stability", "event"]
    return write_csv(path, header, (r for _, r in keyed))


def _leading_multiplier(c: CycleSolution) -> complex:
    nt = c.nontrivial()
    if len(nt) == 0:
        return complex(math.nan, math.nan)
    return complex(nt[int(np.argmax(np.abs(nt)))])


def write_cycle_branch(path: Path, branch: CycleBranch, terminal: Optional[str] = None) -> Path:
    """One row per cycle; SNC events are tagged on the nearest row and the
    last row carries ``terminal`` (how the branch ended) when given."""
    tags = [""] * len(branch.points)
    for ev in branch.events:
        if ev.kind != "SNC":
            continue
        i = int(np.argmin([abs(c.param - ev.param) for c in branch.points]))
        tags[i] = ev.kind
    if terminal and tags:
        tags[-1] = terminal
    rows = []
    for c, tag in zip(branch.points, tags):
        mu = _leading_multiplier(c)
        rows.append([c.param, c.period, c.v_min, c.v_max, mu.real, mu.imag, c.stability, tag])
    header = ["param", "period", "v_min", "v_max", "mult_re", "mult_im", "stability", "event"]
    return write_csv(path, header, rows)


def write_orbit(path: Path, cycle: CycleSolution, names: Sequence[str]) -> Path:
    """One period of ``cycle`` at ORBIT_SAMPLES evenly spaced times."""
    samples = cycle.samples[:ORBIT_SAMPLES]
    t = np.arange(len(samples)) * cycle.period / len(samples)
    rows = (np.concatenate(([ti], x)) for ti, x in zip(t, samples))
    return write_csv(path, ["t", *names], rows)


def write_sweep(path: Path, results) -> Path:
    rows = [[v, r.classification, r.period if r.classification == "periodic" else None,
             r.v_min, r.v_max] for v, r in results]
    return write_csv(path, ["param", "classification", "period", "v_min", "v_max"], rows)


def write_locus(path: Path, locus) -> Path:
    k1, k2 = LOCUS_DIAGNOSTICS.get(locus.kind, ("", ""))

    def diag(p, k):
        if k == "V":
            return p.state[0]
        return p.diagnostics.get(k)
    rows = [[p.v1b, p.v3b, locus.kind, diag(p, k1), diag(p, k2)] for p in locus.points]
    return write_csv(path, ["v1b", "v3b", "kind", "diag1", "diag2"], rows)


# ---------------------------------------------------------------------------
# Events and manifests

def event_record(ev: BifurcationEvent, names: Sequence[str]) -> dict:
    """Flat record ``{kind, <parameter names...>, state, diagnostics...}``."""
    rec = {"kind": ev.kind}
    for name, val in zip(names, ev.param_values):
        rec[name] = float(val)
    rec["state"] = [float(v) for v in ev.state]
    if ev.source:
        rec["source"] = ev.source
    for k, v in ev.diagnostics.items():
        rec.setdefault(k, v)
    return rec


def write_events(path: Path, events: Sequence[BifurcationEvent], names: Sequence[str]) -> Path:
    ordered = sorted(events, key=lambda e: (e.kind, *[float(v) for v in e.param_values[::-1]]))
    return write_json(path, [event_record(e, names) for e in ordered])


def write_manifest(path: Path, command: str, argv: Sequence[str], params=None,
                   outputs: Sequence[Path] = (), **extra) -> Path:
    """Run record: the exact argument list (re-running it reproduces every
    data file), parameters, outputs and a timestamp."""
    from . import __version__

    data = {"command": command, "argv": list(argv), "version": __version__,
            "python": sys.version.split()[0],
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "outputs": sorted(str(Path(p).name) for p in outputs)}
    if params is not None:
        data["params"] = {k.split(" = ")[0]: float(k.split(" = ")[1])
                          for k in format_params(params).splitlines()}
    data.update(extra)
    return write_json(Path(path), data)
