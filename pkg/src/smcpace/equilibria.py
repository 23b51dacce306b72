"""Equilibria: Newton solves, stability classification, pseudo-arclength
continuation in one parameter, and localisation of fold / Hopf points."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .continuation import CorrectorError, Curve, Settings
from .model import SystemDef, with_param
from .normalform import system_lyapunov

NONHYPERBOLIC_TOL = 1e-9

CODIM1_KINDS = ("SN", "HB", "SNIC", "SNC", "HC")
CODIM2_KINDS = ("BT", "CP", "GH", "NSH", "RHom")


class NoConvergence(RuntimeError):
    pass


class SingularJacobian(RuntimeError):
    pass


@dataclass
class BifurcationEvent:
    kind: str
    param_values: tuple
    state: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    source: str = ""

    @property
    def param(self) -> float:
        return self.param_values[0]

    def as_dict(self) -> dict:
        out = {"kind": self.kind, "params": [float(v) for v in self.param_values],
               "state": [float(v) for v in self.state], "source": self.source}
        out.update({k: (float(v) if isinstance(v, (int, float, np.floating)) else v)
                    for k, v in self.diagnostics.items()})
        return out


@dataclass
class BranchPoint:
    param: float
    state: np.ndarray
    eigenvalues: np.ndarray
    stability: str
    testfns: dict


@dataclass
class EquilibriumBranch:
    freed_handle: str
    points: list = field(default_factory=list)
    events: list = field(default_factory=list)
    truncated: bool = False
    # Scaled (z, tangent) pairs kept for event localisation and restarts.
    _path: list = field(default_factory=list, repr=False)

    @property
    def params(self) -> np.ndarray:
        return np.array([pt.param for pt in self.points])

    @property
    def states(self) -> np.ndarray:
        return np.array([pt.state for pt in self.points])


# ---------------------------------------------------------------------------
# Linear stability

def _cubic_roots(a2: float, a1: float, a0: float) -> np.ndarray:
    """Roots of x^3 + a2 x^2 + a1 x + a0 by Cardano, Newton-polished."""
    p = a1 - a2 * a2 / 3.0
    q = 2.0 * a2 ** 3 / 27.0 - a2 * a1 / 3.0 + a0
    disc = cmath.sqrt((q / 2.0) ** 2 + (p / 3.0) ** 3)
    u = (-q / 2.0 + disc)
    if abs(u) < abs(-q / 2.0 - disc):
        u = -q / 2.0 - disc
    roots = []
    if abs(u) == 0.0:
        base = [0.0, 0.0, 0.0]
    else:
        c = u ** (1.0 / 3.0)
        w = complex(-0.5, math.sqrt(3.0) / 2.0)
        base = []
        for k in range(3):
            ck = c * w ** k
            base.append(ck - p / (3.0 * ck))
    for t in base:
        x = complex(t) - a2 / 3.0
        for _ in range(3):
            fx = ((x + a2) * x + a1) * x + a0
            dfx = (3.0 * x + 2.0 * a2) * x + a1
            if dfx == 0:
                break
            # Near a multiple root the derivative vanishes and a Newton step
            # can jump away; keep only steps that reduce the residual.
            x_new = x - fx / dfx
            if abs(((x_new + a2) * x_new + a1) * x_new + a0) >= abs(fx):
                break
            x = x_new
        roots.append(x)
    r = np.array(roots)
    # Clean up round-off imaginary parts of real roots.
    r = np.where(np.abs(r.imag) <= 1e-12 * np.maximum(1.0, np.abs(r)), r.real + 0j, r)
    return r


def eigenvalues(J: np.ndarray) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    n = J.shape[0]
    if n == 2:
        tr = J[0, 0] + J[1, 1]
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        disc = tr * tr / 4.0 - det
        if disc >= 0:
            s = math.sqrt(disc)
            # Avoid cancellation in the smaller root.
            big = tr / 2.0 + math.copysign(s, tr) if tr != 0 else s
            small = det / big if big != 0 else tr / 2.0 - s
            return np.array(sorted([big, small], reverse=True), dtype=complex)
        s = math.sqrt(-disc)
        return np.array([complex(tr / 2.0, s), complex(tr / 2.0, -s)])
    if n == 3:
        tr = np.trace(J)
        minors = (J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
                  + J[0, 0] * J[2, 2] - J[0, 2] * J[2, 0]
                  + J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1])
        det = np.linalg.det(J)
        r = _cubic_roots(-tr, minors, -det)
        return r[np.lexsort((-r.imag, -r.real))]
    return np.linalg.eigvals(J)


def stability_label(eigs: np.ndarray, tol: float = NONHYPERBOLIC_TOL) -> str:
    re = np.real(eigs)
    if np.any(np.abs(re) <= tol):
        return "non-hyperbolic"
    focus = bool(np.any(np.abs(np.imag(eigs)) > 0))
    if np.all(re < 0):
        return "stable-focus" if focus else "stable-node"
    if np.all(re > 0):
        return "unstable-focus" if focus else "unstable-node"
    return "saddle"


def classify_point(J: np.ndarray, tol: float = NONHYPERBOLIC_TOL):
    """Eigenvalues (closed form for 2x2 and 3x3) and stability label."""
    eigs = eigenvalues(J)
    return eigs, stability_label(eigs, tol)


def bialternate_det(J: np.ndarray) -> float:
    """Product of all pairwise eigenvalue sums; zero at Hopf points and
    neutral saddles."""
    n = J.shape[0]
    if n == 2:
        return float(J[0, 0] + J[1, 1])
    if n == 3:
        a = J
        M = np.array([[a[0, 0] + a[1, 1], a[1, 2], -a[0, 2]],
                      [a[2, 1], a[0, 0] + a[2, 2], a[0, 1]],
                      [-a[2, 0], a[1, 0], a[1, 1] + a[2, 2]]])
        return float(np.linalg.det(M))
    lam = np.linalg.eigvals(J)
    prod = 1.0
    for i in range(n):
        for j in range(i + 1, n):
            prod *= lam[i] + lam[j]
    return float(np.real(prod))


def test_functions(J: np.ndarray) -> dict:
    return {"fold": float(np.linalg.det(J)), "hopf": bialternate_det(J)}


# ---------------------------------------------------------------------------
# Newton

def residual_scale(system: SystemDef) -> np.ndarray:
    return system.time_unit / np.asarray(system.state_scale, dtype=float)


def default_tol(system: SystemDef) -> float:
    return 1e-12 if system.name == "dimless" else 1e-10


def newton_equilibrium(system: SystemDef, params, guess, tol: Optional[float] = None,
                       maxiter: int = 50, history: Optional[list] = None) -> np.ndarray:
    """Equilibrium near ``guess``.  Residuals are measured in scaled units
    (rhs * time_unit / state_scale).  ``history`` collects residual norms."""
    tol = default_tol(system) if tol is None else tol
    p = system.pvec(params)
    rs = residual_scale(system)
    x = np.asarray(guess, dtype=float).copy()
    for _ in range(maxiter + 1):
        r = system.rhs_kernel(x, p)
        norm = float(np.max(np.abs(r * rs)))
        if history is not None:
            history.append(norm)
        if not math.isfinite(norm):
            break
        if norm <= tol:
            return x
        J = system.jac_kernel(x, p)
        try:
            if abs(np.linalg.det(J * rs[:, None] * np.asarray(system.state_scale))) < 1e-300:
                raise np.linalg.LinAlgError
            dx = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            raise SingularJacobian(f"singular Jacobian at {x}") from None
        x = x - dx
    raise NoConvergence(f"Newton did not converge from {guess}")


def find_equilibria(system: SystemDef, params, samples: int = 2001,
                    dedupe: float = 1e-6) -> list:
    """All equilibria by bracketing sign changes of the first rhs component
    along the quasi-steady curve, each polished by Newton."""
    lo, hi = system.voltage_window(params)
    p = system.pvec(params)
    vs = np.linspace(lo, hi, samples)
    g = np.array([system.rhs_kernel(system.quasi_steady(v, params), p)[0] for v in vs])
    found = []
    scale = np.asarray(system.state_scale)
    for i in np.nonzero(np.sign(g[:-1]) != np.sign(g[1:]))[0]:
        # Secant guess inside the bracket.
        v = vs[i] - g[i] * (vs[i + 1] - vs[i]) / (g[i + 1] - g[i])
        try:
            x = newton_equilibrium(system, params, system.quasi_steady(v, params))
        except (NoConvergence, SingularJacobian):
            continue
        if all(np.max(np.abs((x - y) / scale)) > dedupe for y in found):
            found.append(x)
    return sorted(found, key=lambda x: x[0])


# ---------------------------------------------------------------------------
# Continuation

class EquilibriumProblem:
    """Residual G(x, p) = rhs(x; p) in scaled units for a freed parameter."""

    def __init__(self, system: SystemDef, params, handle: str):
        self.system = system
        self.base = system.pvec(params)
        self.index = system.handle(handle)
        self.handle = handle
        self.params = params
        self.rs = residual_scale(system)
        self.dp = 1e-7 * system.param_scale(handle)
        self.scale = np.append(np.asarray(system.state_scale, dtype=float),
                               system.param_scale(handle))

    def pvec(self, value):
        p = self.base.copy()
        p[self.index] = value
        return p

    def residual(self, u):
        return self.system.rhs_kernel(u[:-1], self.pvec(u[-1])) * self.rs

    def jacobian(self, u):
        x, a = u[:-1], u[-1]
        J = self.system.jac_kernel(x, self.pvec(a))
        dfp = (self.system.rhs_kernel(x, self.pvec(a + self.dp))
               - self.system.rhs_kernel(x, self.pvec(a - self.dp))) / (2 * self.dp)
        return np.column_stack([J, dfp]) * self.rs[:, None]

    def point(self, u) -> BranchPoint:
        x, a = u[:-1].copy(), float(u[-1])
        J = self.system.jac_kernel(x, self.pvec(a))
        eigs, label = classify_point(J)
        return BranchPoint(a, x, eigs, label, test_functions(J))

    def J(self, u):
        return self.system.jac_kernel(u[:-1], self.pvec(u[-1]))

    def params_at(self, value):
        return with_param(self.params, self.handle, value)


def _fold_test(problem):
    return lambda u: float(np.linalg.det(problem.J(u) * problem.rs[:, None]
                                         * np.asarray(problem.system.state_scale)))


def _hopf_test(problem):
    s = np.asarray(problem.system.state_scale)
    return lambda u: bialternate_det(problem.J(u) * problem.rs[:, None] * s)


def locate_fold(curve: Curve, problem: EquilibriumProblem, z0, t0, ds, source=""):
    z = curve.locate(z0, t0, ds, _fold_test(problem))
    u = z * curve.scale
    pt = problem.point(u)
    J = problem.J(u)
    eigs = pt.eigenvalues
    k = int(np.argmin(np.abs(eigs)))
    others = np.delete(eigs, k)
    return BifurcationEvent("SN", (pt.param,), pt.state,
                            {"trace": float(np.trace(J)),
                             "other_eig": float(np.real(others[0])) if len(others) else 0.0},
                            source=source)


def locate_hopf(curve: Curve, problem: EquilibriumProblem, z0, t0, ds, source="",
                with_lyapunov: bool = True):
    """Returns a Hopf event, or None for a neutral saddle."""
    z = curve.locate(z0, t0, ds, _hopf_test(problem))
    u = z * curve.scale
    pt = problem.point(u)
    eigs = pt.eigenvalues
    cplx = eigs[np.abs(eigs.imag) > 0]
    if len(cplx) == 0:
        return None
    lam = cplx[np.argmin(np.abs(cplx.real))]
    omega = abs(lam.imag) / problem.system.time_unit
    diag = {"omega": float(omega), "det": pt.testfns["fold"]}
    if with_lyapunov:
        try:
            l1 = system_lyapunov(problem.system, problem.pvec(pt.param), pt.state)
            diag["l1"] = l1
            diag["criticality"] = "supercritical" if l1 < 0 else "subcritical"
        except (ValueError, np.linalg.LinAlgError):
            pass
    if omega < 1e-6:
        diag["bt_candidate"] = 1
    return BifurcationEvent("HB", (pt.param,), pt.state, diag, source=source)


def _initial_tangent(curve: Curve, z: np.ndarray, direction: int) -> np.ndarray:
    t = curve.tangent(z)
    if t[-1] * direction < 0:
        t = -t
    return t


def continue_equilibrium(system: SystemDef, params, freed_handle: str, start_state,
                         direction: int = 1, limits: tuple = (-np.inf, np.inf),
                         settings: Optional[Settings] = None, locate: bool = True,
                         max_steps: Optional[int] = None, state_bounds: float = 1e3,
                         lyapunov: bool = True) -> EquilibriumBranch:
    """Trace the equilibrium branch through ``start_state`` in the freed
    parameter.  Sign changes of det J and of the Hopf test function are
    bisected (in arclength) to single events."""
    problem = EquilibriumProblem(system, params, freed_handle)
    settings = settings or Settings()
    settings = Settings(**{**settings.__dict__})
    settings.tol = default_tol(system)
    curve = Curve(problem.residual, problem.jacobian, problem.scale, settings)
    p0 = getattr(params, freed_handle)
    x0 = newton_equilibrium(system, params, start_state)
    if abs(np.linalg.det(system.jacobian(x0, params) * residual_scale(system)[:, None]
                         * np.asarray(system.state_scale))) < 1e-10:
        # Degenerate start on a fold: nudge the parameter.
        p0 = p0 + 1e-6 * system.param_scale(freed_handle) * direction
        x0 = newton_equilibrium(system, with_param(params, freed_handle, p0), x0)
    u = np.append(x0, p0)
    z = u / problem.scale
    t = _initial_tangent(curve, z, direction)
    branch = EquilibriumBranch(freed_handle)
    branch.points.append(problem.point(u))
    branch._path.append((z, t))
    ds = settings.ds
    src = f"equilibrium:{freed_handle}"
    fold_t, hopf_t = _fold_test(problem), _hopf_test(problem)
    f_prev, h_prev = fold_t(u), hopf_t(u)
    lo, hi = limits
    for _ in range(max_steps or settings.max_steps):
        try:
            z_new, t_new, ds_used, ds = curve.step(z, t, ds)
        except CorrectorError:
            branch.truncated = True
            break
        u_new = z_new * problem.scale
        f_new, h_new = fold_t(u_new), hopf_t(u_new)
        if locate:
            evs = []
            if np.sign(f_new) != np.sign(f_prev) and f_prev != 0:
                evs.append(locate_fold(curve, problem, z, t, ds_used, src))
            if np.sign(h_new) != np.sign(h_prev) and h_prev != 0:
                ev = locate_hopf(curve, problem, z, t, ds_used, src, lyapunov)
                if ev is not None:
                    evs.append(ev)
            if len(evs) == 2 and abs(evs[0].param - evs[1].param) <= 1e-6:
                # Both test functions vanish together: hand over as codim-2.
                evs = [BifurcationEvent("BT", (evs[0].param,), evs[0].state,
                                        {"candidate": 1}, source=src)]
            for ev in sorted(evs, key=lambda e: e.param * direction):
                if lo <= ev.param <= hi:
                    branch.events.append(ev)
        if not (lo <= u_new[-1] <= hi):
            # Land the final point exactly on the window edge.
            edge = lo if u_new[-1] < lo else hi
            frac = (edge - u[-1]) / (u_new[-1] - u[-1])
            try:
                z_edge = curve.correct(z + frac * (z_new - z), t,
                                       fixed=(len(z) - 1, edge / problem.scale[-1]))[0]
                z_new = z_edge
                u_new = z_edge * problem.scale
            except CorrectorError:
                pass
            branch.points.append(problem.point(u_new))
            branch._path.append((z_new, t_new))
            break
        z, t, u = z_new, t_new, u_new
        f_prev, h_prev = f_new, h_new
        branch.points.append(problem.point(u_new))
        branch._path.append((z, t))
        if np.max(np.abs(u_new[:-1] / problem.scale[:-1])) > state_bounds:
            break
    return branch


def equilibrium_branches(system: SystemDef, params, freed_handle: str, limits: tuple,
                         settings: Optional[Settings] = None, lyapunov: bool = True) -> list:
    """Every equilibrium branch crossing the parameter window, seeded by
    :func:`find_equilibria` at both window ends."""
    lo, hi = limits
    branches = []
    ends = []  # (param end, state) of finished branches

    def covered(x, at):
        s = np.asarray(system.state_scale)
        for pend, xend in ends:
            if abs(pend - at) < 1e-3 * system.param_scale(freed_handle) and \
                    np.max(np.abs((x - xend) / s)) < 1e-3:
                return True
        return False

    for at, direction in ((lo, 1), (hi, -1)):
        pa = with_param(params, freed_handle, at)
        for x in find_equilibria(system, pa):
            if covered(x, at):
                continue
            br = continue_equilibrium(system, pa, freed_handle, x, direction,
                                      (lo - 1e-9, hi + 1e-9), settings, lyapunov=lyapunov)
            branches.append(br)
            ends.append((br.points[0].param, br.points[0].state))
            ends.append((br.points[-1].param, br.points[-1].state))
    return branches


def tag_snic(fold_event: BifurcationEvent, cycle_branch, param_tol: float = 1e-4,
             distance_tol: float = 1e-3, period_threshold: Optional[float] = None,
             scale=None) -> BifurcationEvent:
    """Re-tag a fold as SNIC when a cycle branch blows up in period at the
    fold and its orbit passes through the saddle-node point."""
    if cycle_branch is None or not cycle_branch.points:
        return fold_event
    tail = cycle_branch.points[-1]
    threshold = period_threshold or cycle_branch.period_max
    if tail.period < 0.999 * threshold:
        return fold_event
    if abs(tail.param - fold_event.param) > param_tol:
        return fold_event
    s = np.ones(len(fold_event.state)) if scale is None else np.asarray(scale)
    dist = np.min(np.max(np.abs((tail.samples - fold_event.state) / s), axis=1))
    if dist > distance_tol:
        return fold_event
    diag = dict(fold_event.diagnostics)
    diag["orbit_distance"] = float(dist)
    diag["period"] = float(tail.period)
    return BifurcationEvent("SNIC", fold_event.param_values, fold_event.state, diag,
                            source=fold_event.source + "+cycles")
