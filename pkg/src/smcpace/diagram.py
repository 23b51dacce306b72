"""One-parameter bifurcation diagrams: equilibrium branches, periodic-orbit
branches seeded from Hopf points and from forward simulation, and a single
ordered list of localized events."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .continuation import Settings
from .cycles import (ShootingError, continue_cycle,
                     detect_homoclinic_termination, find_cycle)
from .equilibria import (BifurcationEvent, NoConvergence, SingularJacobian,
                         classify_point, equilibrium_branches, newton_equilibrium,
                         tag_snic)
from .integrate import BlowUpError, Budget
from .model import SystemDef, with_param

SEED_GRID = 25
HOPF_OFFSETS = (2e-4, 1e-3, 5e-3)


@dataclass
class OneParamDiagram:
    system: SystemDef
    params: object
    handle: str
    limits: tuple
    equilibria: list = field(default_factory=list)
    cycles: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def sequence(self, decreasing: bool = True) -> list:
        """Event kinds ordered along the freed parameter."""
        evs = sorted(self.events, key=lambda e: e.param, reverse=decreasing)
        return [e.kind for e in evs]

    def ordered_events(self, decreasing: bool = True) -> list:
        return sorted(self.events, key=lambda e: e.param, reverse=decreasing)

    def first(self, kind: str) -> Optional[BifurcationEvent]:
        for e in self.ordered_events():
            if e.kind == kind:
                return e
        return None

    def stable_cycle_window(self) -> Optional[tuple]:
        """(min, max) freed-parameter values carrying a stable cycle."""
        ps = [c.param for br in self.cycles for c in br.points if c.stability == "stable"]
        if not ps:
            return None
        return min(ps), max(ps)

    def oscillation_onset(self) -> Optional[BifurcationEvent]:
        """Event at which stable oscillations appear when the freed parameter
        decreases from the quiescent upper end of the window."""
        window = self.stable_cycle_window()
        if window is None:
            return None
        top = window[1]
        tol = 0.02 * self.system.param_scale(self.handle)
        cands = [e for e in self.events if e.kind in ("SNIC", "HC", "HB", "SNC")
                 and abs(e.param - top) <= tol]
        if not cands:
            return None
        return min(cands, key=lambda e: abs(e.param - top))


def _covered(branches: list, param: float, period: float, v_max: float, scale: float) -> bool:
    for br in branches:
        pts = br.points
        for a, b in zip(pts[:-1], pts[1:]):
            lo, hi = sorted((a.param, b.param))
            if not (lo - 1e-12 <= param <= hi + 1e-12):
                continue
            w = 0.0 if hi == lo else (param - a.param) / (b.param - a.param)
            T = a.period + w * (b.period - a.period)
            vm = a.v_max + w * (b.v_max - a.v_max)
            if abs(T - period) <= 0.03 * period and abs(vm - v_max) <= 0.02 * scale:
                return True
    return False


def _normal_form_kick(system: SystemDef, params, x, l1: float) -> np.ndarray:
    """Offset from the equilibrium to the predicted small cycle, with radius
    sqrt(|Re lambda / l1|) along the critical eigenvector (scaled units)."""
    s = np.asarray(system.state_scale, dtype=float)
    A = system.jacobian(x, params) * s[None, :] / s[:, None]
    lam, vecs = np.linalg.eig(A)
    k = int(np.argmax(lam.imag))
    q = vecs[:, k] / np.linalg.norm(vecs[:, k])
    r = np.sqrt(abs(lam[k].real) / max(abs(l1), 1e-12))
    return 2.0 * np.real(r * q) * s


def hopf_cycle_seed(system: SystemDef, params, handle: str, event: BifurcationEvent,
                    budget: Optional[Budget] = None):
    """A small cycle near a Hopf point: forward simulation on the unstable
    side of a supercritical Hopf, time-reversed simulation on the stable side
    of a subcritical one (planar systems only)."""
    l1 = event.diagnostics.get("l1")
    if l1 is None:
        return None
    sub = l1 > 0
    if sub and system.dimension != 2:
        return None
    ps = system.param_scale(handle)
    omega = event.diagnostics.get("omega", 0.0)
    for off in HOPF_OFFSETS:
        for side in (1, -1):
            pv = event.param + side * off * ps
            pp = with_param(params, handle, pv)
            try:
                x = newton_equilibrium(system, pp, event.state)
            except (NoConvergence, SingularJacobian):
                continue
            eigs, label = classify_point(system.jacobian(x, pp))
            unstable = label in ("unstable-focus", "unstable-node")
            if sub == unstable:
                continue
            kick = _normal_form_kick(system, pp, x, l1)
            try:
                cyc = find_cycle(system, pp, x + kick, budget=budget, param_name=handle,
                                 time_direction=-1 if sub else 1)
            except (ShootingError, BlowUpError, NoConvergence):
                continue
            if omega > 0 and abs(cyc.period * omega - 2 * np.pi) > 0.3 * 2 * np.pi:
                continue
            if (cyc.stability == "unstable") != sub:
                continue
            cyc.param = pv
            return cyc
    return None


def one_parameter_diagram(system: SystemDef, params, handle: str, limits: tuple,
                          seed_grid: int = SEED_GRID, initial_states: Optional[list] = None,
                          budget: Optional[Budget] = None, with_cycles: bool = True,
                          step: Optional[float] = None,
                          cycle_settings: Optional[Settings] = None) -> OneParamDiagram:
    """Equilibria, periodic orbits and events for the freed parameter over
    ``limits``.

    Cycle branches are seeded at each Hopf point and at parameter values on
    a uniform grid where forward simulation settles onto an oscillation that
    no computed branch covers yet.
    """
    lo, hi = limits
    diag = OneParamDiagram(system, params, handle, limits)
    diag.equilibria = equilibrium_branches(system, params, handle, limits)
    eq_events = _merge_events([e for br in diag.equilibria for e in br.events], system, handle)
    if not with_cycles:
        diag.events = eq_events
        return diag

    budget = budget or Budget.for_system(system)
    scale0 = system.state_scale[0]
    branches: list = []

    def trace(seed):
        for direction in (1, -1):
            br = continue_cycle(system, params, handle, seed, direction, limits,
                                settings=cycle_settings, step=step)
            branches.append(br)

    for ev in eq_events:
        if ev.kind != "HB":
            continue
        seed = hopf_cycle_seed(system, params, handle, ev, budget)
        if seed is not None and not _covered(branches, seed.param, seed.period, seed.v_max, scale0):
            trace(seed)

    starts = initial_states or [np.zeros(system.dimension)]
    for pv in np.linspace(lo, hi, seed_grid):
        pp = with_param(params, handle, pv)
        for s0 in starts:
            try:
                cyc = find_cycle(system, pp, np.asarray(s0, float), budget=budget,
                                 param_name=handle)
            except (ShootingError, BlowUpError, NoConvergence):
                continue
            cyc.param = pv
            if not _covered(branches, pv, cyc.period, cyc.v_max, scale0):
                trace(cyc)

    diag.cycles = branches
    folds = [e for e in eq_events if e.kind == "SN"]
    events = list(eq_events)
    for br in branches:
        events.extend(e for e in br.events if e.kind == "SNC")
        if br.termination == "period-blowup":
            term = detect_homoclinic_termination(br, system, params, folds)
            if term.kind == "SNIC":
                for i, e in enumerate(events):
                    if e.kind == "SN" and e.param == term.param:
                        events[i] = tag_snic(e, br, 1e-4 * system.param_scale(handle),
                                             scale=system.state_scale)
            elif term.kind == "HC":
                events.append(term)
    diag.events = _merge_events(events, system, handle)
    return diag


def _merge_events(events: list, system: SystemDef, handle: str) -> list:
    """Drop duplicates of the same kind at the same parameter."""
    tol = 1e-6 * system.param_scale(handle)
    out: list = []
    for e in sorted(events, key=lambda e: (e.param, e.kind)):
        # Period-capped homoclinic ends scatter more than localized events.
        t = 1e2 * tol if e.kind == "HC" else tol
        dup = next((o for o in out if o.kind == e.kind and abs(o.param - e.param) <= t), None)
        if dup is None:
            out.append(e)
    return out
