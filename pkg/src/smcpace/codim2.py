"""Two-parameter loci in the (v1b, v3b) plane for the planar dimensionless
model: folds, Hopf points, homoclinic orbits (large fixed-period proxy) and
folds of cycles, with detection of the codimension-two points on them.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import fsolve

from .continuation import CorrectorError, Curve, Settings
from .cycles import (T_MAX, CycleSolution, Shooting, ShootingError,
                     _rk4_flow, mesh_for)
from .diagram import OneParamDiagram, one_parameter_diagram
from .equilibria import (BifurcationEvent, NoConvergence, SingularJacobian, eigenvalues,
                         newton_equilibrium)
from .model import DIMLESS, DIMLESS_DEFAULT, SystemDef, with_param
from .normalform import lyapunov_coeff_1, system_lyapunov

__all__ = ["LocusPoint", "LocusCurve", "ExcitabilityLabel", "TwoParamMap",
           "continue_fold_curve", "continue_hopf_curve", "continue_homoclinic_curve",
           "continue_snc_curve", "classify_excitability", "excitability_transition",
           "render_two_param_map", "lyapunov_coeff_1", "SLICES", "WINDOW"]

P1, P2 = "v1b", "v3b"
WINDOW = ((-0.7, 0.1), (-0.4, 0.5))
SLICES = {"l1": 0.45, "l2": 0.25, "l3": -0.047, "l4": -0.088, "l5": -0.26, "l6": -0.32}
SLICE_WINDOW = (-0.7, 0.1)
HOMOCLINIC_DISTANCE = 1e-3


@dataclass
class LocusPoint:
    v1b: float
    v3b: float
    state: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class LocusCurve:
    kind: str
    points: list = field(default_factory=list)
    endpoints: list = field(default_factory=list)
    events: list = field(default_factory=list)
    truncated: bool = False
    note: str = ""

    @property
    def v1b(self) -> np.ndarray:
        return np.array([p.v1b for p in self.points])

    @property
    def v3b(self) -> np.ndarray:
        return np.array([p.v3b for p in self.points])


@dataclass
class ExcitabilityLabel:
    slice_param: float
    label: str
    onset_event: Optional[BifurcationEvent] = None


def _params(base, a: float, b: float):
    return with_param(with_param(base, P1, a), P2, b)


def _in_box(a: float, b: float, box=WINDOW) -> bool:
    (a0, a1), (b0, b1) = box
    return a0 <= a <= a1 and b0 <= b <= b1


def _event(kind: str, a: float, b: float, state, diag: dict, source: str) -> BifurcationEvent:
    return BifurcationEvent(kind, (float(a), float(b)), np.asarray(state, dtype=float), diag,
                            source=source)


# ---------------------------------------------------------------------------
# Generic curve following

def _follow(curve: Curve, z0: np.ndarray, t0: np.ndarray, accept: Callable,
            max_steps: int) -> tuple:
    """Step along ``curve`` until ``accept(z)`` returns False or the corrector
    fails.  Returns ([(z, t, ds_used)...], truncated)."""
    path = [(z0, t0, 0.0)]
    z, t, ds = z0, t0, curve.settings.ds
    for _ in range(max_steps):
        try:
            z_new, t_new, ds_used, ds = curve.step(z, t, ds)
        except CorrectorError:
            return path, True
        path.append((z_new, t_new, ds_used))
        if not accept(z_new):
            break
        z, t = z_new, t_new
    return path, False


def _sign_changes(values: list) -> list:
    return [i for i in range(1, len(values))
            if np.isfinite(values[i - 1]) and np.isfinite(values[i])
            and values[i - 1] != 0 and np.sign(values[i]) != np.sign(values[i - 1])]


# ---------------------------------------------------------------------------
# Equilibrium loci (fold and Hopf)

class _EquilibriumLocus:
    """rhs = 0 plus one scalar condition in u = (V, N, v1b, v3b)."""

    def __init__(self, system: SystemDef, base, condition: str):
        if system.dimension != 2:
            raise ValueError("two-parameter loci are implemented for planar systems")
        self.system, self.base, self.condition = system, base, condition
        self.i1, self.i2 = system.handle(P1), system.handle(P2)
        self.pv0 = system.pvec(base)

    def pvec(self, a, b):
        p = self.pv0.copy()
        p[self.i1], p[self.i2] = a, b
        return p

    def J(self, u):
        return self.system.jac_kernel(u[:2], self.pvec(u[2], u[3]))

    def residual(self, u):
        p = self.pvec(u[2], u[3])
        f = self.system.rhs_kernel(u[:2], p)
        J = self.system.jac_kernel(u[:2], p)
        extra = np.linalg.det(J) if self.condition == "fold" else np.trace(J)
        return np.array([f[0], f[1], extra])

    def point(self, u, **diag) -> LocusPoint:
        J = self.J(u)
        eig = eigenvalues(J)
        d = {"det": float(np.linalg.det(J)), "trace": float(np.trace(J)),
             "omega": float(np.max(np.abs(eig.imag)))}
        d.update(diag)
        return LocusPoint(float(u[2]), float(u[3]), u[:2].copy(), d)


def _locus_settings(resolution: Optional[float] = None) -> Settings:
    ds_max = 1e-2 if resolution is None else resolution
    return Settings(ds=min(2e-3, ds_max), ds_min=1e-9, ds_max=ds_max, tol=1e-12, step_tol=1e-12,
                    max_iter=12, grow_at=3, shrink_at=8)


def _start_tangent(curve: Curve, z: np.ndarray, direction: int) -> np.ndarray:
    t = curve.tangent(z)
    # Orient by the v3b component, falling back to v1b.
    ref = t[3] if abs(t[3]) > 1e-8 else t[2]
    return t if ref * direction > 0 else -t


def refine_bt(system: SystemDef, base, guess) -> np.ndarray:
    """Newton on (rhs = 0, det J = 0, trace J = 0) in (V, N, v1b, v3b)."""
    fold = _EquilibriumLocus(system, base, "fold")

    def F(u):
        r = fold.residual(u)
        return np.append(r, np.trace(fold.J(u)))

    sol, info, ier, _ = fsolve(F, np.asarray(guess, float), full_output=True, xtol=1e-14)
    if ier != 1 and np.max(np.abs(F(sol))) > 1e-10:
        raise NoConvergence("Bogdanov-Takens refinement failed")
    return sol


def _reduced_scalar(system: SystemDef, base):
    """g(V; a, b): first rhs component on the second nullcline; equilibria
    are its zeros, folds its double zeros, the cusp a triple zero."""
    loc = _EquilibriumLocus(system, base, "fold")

    def g(V, a, b):
        pp = _params(base, a, b)
        return float(system.rhs_kernel(system.quasi_steady(V, pp), loc.pvec(a, b))[0])
    return g


def refine_cusp(system: SystemDef, base, guess, h: float = 1e-3) -> np.ndarray:
    """Solve g = g' = g'' = 0 for (V, v1b, v3b) with difference quotients
    (fourth-order stencils)."""
    g = _reduced_scalar(system, base)

    def F(w):
        V, a, b = w
        gm2, gm1, g0, gp1, gp2 = (g(V + k * h, a, b) for k in (-2, -1, 0, 1, 2))
        d1 = (gm2 - 8 * gm1 + 8 * gp1 - gp2) / (12 * h)
        d2 = (-gm2 + 16 * gm1 - 30 * g0 + 16 * gp1 - gp2) / (12 * h * h)
        return [g0, d1, d2]

    sol, info, ier, _ = fsolve(F, np.asarray(guess, float), full_output=True, xtol=1e-13)
    if ier != 1 and np.max(np.abs(F(sol))) > 1e-8:
        raise NoConvergence("cusp refinement failed")
    return sol


def continue_fold_curve(start: BifurcationEvent, limits=WINDOW, system: SystemDef = DIMLESS,
                        base=None, max_steps: int = 5000,
                        resolution: Optional[float] = None) -> LocusCurve:
    """Fold locus through a localized fold, traced both ways to the window
    edges.  Bogdanov-Takens points (trace J = 0) and the cusp (both
    parameter components of the tangent reversing) are located on the way."""
    base = base or DIMLESS_DEFAULT
    prob = _EquilibriumLocus(system, base, "fold")
    a0, b0 = start.param_values if len(start.param_values) == 2 else \
        (start.param_values[0], getattr(base, P2))
    u0 = np.array([*start.state, a0, b0])
    curve = Curve(prob.residual, None, np.ones(4), _locus_settings(resolution))
    z0 = curve.correct(u0, np.zeros(4), fixed=(3, b0))[0]
    locus = LocusCurve("fold")
    halves = []
    for direction in (1, -1):
        t0 = _start_tangent(curve, z0, direction)
        path, trunc = _follow(curve, z0, t0, lambda z: _in_box(z[2], z[3], limits), max_steps)
        locus.truncated |= trunc
        halves.append(path)
    path = halves[1][::-1] + halves[0][1:]
    # Re-orient tangents of the reversed half so that they follow the path.
    n_rev = len(halves[1])
    path = [(z, -t if i < n_rev else t, ds) for i, (z, t, ds) in enumerate(path)]
    locus.points = [prob.point(z) for z, _, _ in path]

    src = "locus:fold"
    trace = [np.trace(prob.J(z)) for z, _, _ in path]
    for i in _sign_changes(trace):
        z_prev, t_prev, _ = path[i - 1]
        z_next = path[i][0]
        ds = float(np.dot(z_next - z_prev, t_prev))
        try:
            zb = curve.locate(z_prev, t_prev, ds, lambda u: np.trace(prob.J(u)), xtol=1e-12)
            zb = refine_bt(system, base, zb)
        except (CorrectorError, ValueError, NoConvergence):
            continue
        eig = eigenvalues(prob.J(zb))
        locus.events.append(_event("BT", zb[2], zb[3], zb[:2],
                                   {"max_abs_eig": float(np.max(np.abs(eig)))}, src))
    ta = [t[2] for _, t, _ in path]
    tb = [t[3] for _, t, _ in path]
    for i in _sign_changes(tb):
        # A cusp reverses both parameter components of the tangent at once.
        lo, hi = max(0, i - 2), min(len(ta), i + 2)
        if not _sign_changes(ta[lo:hi]):
            continue
        z = path[i][0]
        try:
            V, a, b = refine_cusp(system, base, [z[0], z[2], z[3]])
        except NoConvergence:
            continue
        x = system.quasi_steady(V, _params(base, a, b))
        locus.events.append(_event("CP", a, b, x, {}, src))
    return locus


def continue_hopf_curve(start: BifurcationEvent, limits=WINDOW, system: SystemDef = DIMLESS,
                        base=None, max_steps: int = 5000,
                        resolution: Optional[float] = None) -> LocusCurve:
    """Hopf locus (rhs = 0, trace J = 0, det J > 0) through a localized Hopf
    point.  Ends at Bogdanov-Takens points (det J -> 0) or at the window;
    generalized Hopf points are sign changes of the first Lyapunov
    coefficient."""
    base = base or DIMLESS_DEFAULT
    prob = _EquilibriumLocus(system, base, "hopf")
    a0, b0 = start.param_values if len(start.param_values) == 2 else \
        (start.param_values[0], getattr(base, P2))
    u0 = np.array([*start.state, a0, b0])
    curve = Curve(prob.residual, None, np.ones(4), _locus_settings(resolution))
    z0 = curve.correct(u0, np.zeros(4), fixed=(3, b0))[0]
    locus = LocusCurve("hopf")
    src = "locus:hopf"

    def l1_at(z):
        return system_lyapunov(system, prob.pvec(z[2], z[3]), z[:2])

    def accept(z):
        return _in_box(z[2], z[3], limits) and np.linalg.det(prob.J(z)) > 0

    halves = []
    for direction in (1, -1):
        t0 = _start_tangent(curve, z0, direction)
        path, trunc = _follow(curve, z0, t0, accept, max_steps)
        locus.truncated |= trunc
        z_last, t_last, ds_last = path[-1]
        if np.linalg.det(prob.J(z_last)) <= 0 and len(path) >= 2:
            # Crossed det J = 0: that end is a Bogdanov-Takens point.
            z_prev, t_prev, _ = path[-2]
            try:
                ds = float(np.dot(z_last - z_prev, t_prev))
                zb = curve.locate(z_prev, t_prev, ds, lambda u: np.linalg.det(prob.J(u)),
                                  xtol=1e-12)
                zb = refine_bt(system, base, zb)
                eig = eigenvalues(prob.J(zb))
                locus.endpoints.append(_event("BT", zb[2], zb[3], zb[:2],
                                              {"max_abs_eig": float(np.max(np.abs(eig)))}, src))
            except (CorrectorError, ValueError, NoConvergence):
                pass
            path = path[:-1]
        halves.append(path)
    path = [(z, -t, ds) for z, t, ds in halves[1][::-1]] + halves[0][1:]
    l1 = [l1_at(z) for z, _, _ in path]
    locus.points = [prob.point(z, l1=v) for (z, _, _), v in zip(path, l1)]
    for i in _sign_changes(l1):
        z_prev, t_prev, _ = path[i - 1]
        ds = float(np.dot(path[i][0] - z_prev, t_prev))
        try:
            zg = curve.locate(z_prev, t_prev, ds, l1_at, xtol=1e-10)
        except (CorrectorError, ValueError):
            continue
        J = prob.J(zg)
        locus.events.append(_event("GH", zg[2], zg[3], zg[:2],
                                   {"omega": float(math.sqrt(max(np.linalg.det(J), 0.0))),
                                    "l1": float(l1_at(zg))}, src))
    locus.events.extend(locus.endpoints)
    return locus


# ---------------------------------------------------------------------------
# Homoclinic proxy: cycles of fixed large period in two parameters

def _saddle_near(system: SystemDef, pp, samples: np.ndarray):
    """Equilibrium near the slowest orbit point and its distance to the
    orbit, or (None, slow point, inf)."""
    p = system.pvec(pp)
    speeds = np.array([np.max(np.abs(system.rhs_kernel(x, p))) for x in samples])
    x_slow = samples[int(np.argmin(speeds))]
    try:
        x = newton_equilibrium(system, pp, x_slow)
    except (NoConvergence, SingularJacobian):
        return None, x_slow, math.inf
    dist = float(np.min(np.max(np.abs(samples - x), axis=1)))
    return x, x_slow, dist


def _stretch_orbit(system: SystemDef, pp, cyc: CycleSolution, T_new: float, m: int, nseg: int):
    """Initial guess for an orbit of period T_new: the old orbit with the
    extra time spent at its slowest point."""
    p = system.pvec(pp)
    s = cyc.samples
    n = len(s) - 1
    t_old = np.linspace(0.0, cyc.period, n + 1)
    speeds = np.array([np.max(np.abs(system.rhs_kernel(x, p))) for x in s])
    k = int(np.argmin(speeds[:-1]))
    extra = T_new - cyc.period
    X = []
    for i in range(m):
        t = i * T_new / m
        if t <= t_old[k]:
            tt = t
        elif t <= t_old[k] + extra:
            tt = t_old[k]
        else:
            tt = t - extra
        j = min(int(round(tt / cyc.period * n)), n)
        X.append(s[j])
    return np.array(X)


def homoclinic_proxy_start(system: SystemDef, base, cyc: CycleSolution, a: float, b: float,
                           period: float = T_MAX) -> tuple:
    """Orbit of period ``period`` at v3b = b with v1b free, grown from a
    long cycle near the homoclinic orbit.  Returns (Shooting, u)."""
    pp = _params(base, a, b)
    current, u_sol, p_a = cyc, None, a
    T = cyc.period
    while T < period:
        T_next = min(period, T * 1.5)
        m, nseg = mesh_for(system, T_next)
        sh = Shooting(system, pp, m, nseg, (P1,), fixed_period=T_next)
        X = _stretch_orbit(system, _params(base, p_a, b), current, T_next, m, nseg)
        u = sh.pack(X, T_next, [p_a])
        u = _fixed_newton(sh, u)
        current = sh.solution(u)
        p_a = float(u[-1])
        T, u_sol = T_next, u
    sh2 = Shooting(system, pp, sh.m, sh.nseg, (P1, P2), fixed_period=period)
    return sh2, np.append(u_sol, b)


def _fixed_newton(sh: Shooting, u, tol=1e-10, maxiter=40):
    for _ in range(maxiter):
        r = sh.residual(u)
        if not np.all(np.isfinite(r)):
            raise ShootingError("non-finite residual")
        du = np.linalg.solve(sh.jacobian(u), -r)
        lim = 0.02
        if abs(du[-1]) > lim:
            du *= lim / abs(du[-1])
        u = u + du
        if np.max(np.abs(du)) < 1e-11 or np.max(np.abs(sh.residual(u))) < tol:
            if np.max(np.abs(sh.residual(u))) < 1e-8:
                return u
    raise ShootingError("fixed-period Newton did not converge")


def _homoclinic_segment(d: dict) -> bool:
    """True when the orbit passes through a hyperbolic saddle."""
    return (d.get("orbit_distance", math.inf) <= HOMOCLINIC_DISTANCE
            and d.get("lambda_u", 0.0) > 0.0 > d.get("lambda_s", 0.0))


def continue_homoclinic_curve(start: BifurcationEvent, cycle: CycleSolution, limits=WINDOW,
                              system: SystemDef = DIMLESS, base=None, period: float = T_MAX,
                              max_steps: int = 600) -> LocusCurve:
    """Homoclinic locus traced as a curve of cycles with fixed period
    ``period`` in (v1b, v3b).

    Points whose orbit runs through a hyperbolic saddle form the homoclinic
    segment.  Elsewhere the orbit passes a saddle-node ghost, so the proxy
    follows the SNIC part of the fold locus.  NSH points are the boundaries
    between the two segments (the saddle's det J tends to zero there).  RHom
    is the zero of the saddle quantity on the homoclinic segment.
    """
    base = base or DIMLESS_DEFAULT
    a, b = start.param_values if len(start.param_values) == 2 else \
        (start.param_values[0], getattr(base, P2))
    sh, u0 = homoclinic_proxy_start(system, base, cycle, a, b, period)
    settings = Settings(ds=5e-3, ds_min=1e-7, ds_max=0.05, tol=1e-9, step_tol=1e-9,
                        max_iter=10, grow_at=3, shrink_at=7)
    curve = Curve(sh.residual, sh.jacobian, sh.scale(), settings)
    z0 = u0 / curve.scale
    locus = LocusCurve("homoclinic", note=f"fixed-period proxy, T = {period:g}")
    src = "locus:homoclinic"
    amp_min = 0.02

    def info(u) -> LocusPoint:
        sol = sh.solution(u)
        a_, b_ = float(u[-2]), float(u[-1])
        pp = _params(base, a_, b_)
        x, x_slow, dist = _saddle_near(system, pp, sol.samples)
        d = {"period": period, "amplitude": sol.amplitude}
        if x is not None:
            J = system.jacobian(x, pp)
            eig = eigenvalues(J)
            d.update(saddle_quantity=float(np.trace(J)), saddle_det=float(np.linalg.det(J)),
                     orbit_distance=dist,
                     lambda_u=float(np.max(eig.real)), lambda_s=float(np.min(eig.real)))
        d["segment"] = "homoclinic" if _homoclinic_segment(d) else "snic"
        return LocusPoint(a_, b_, x if x is not None else x_slow, d)

    def accept(z):
        u = z * curve.scale
        if not _in_box(u[-2], u[-1], limits):
            return False
        return sh.solution(u).amplitude > amp_min

    halves = []
    for direction in (1, -1):
        t0 = curve.tangent(z0)
        if t0[-1] * direction < 0:
            t0 = -t0
        path, trunc = _follow(curve, z0, t0, accept, max_steps)
        locus.truncated |= trunc
        halves.append(path)
    path = [(z, -t, ds) for z, t, ds in halves[1][::-1]] + halves[0][1:]
    pts = [info(z * curve.scale) for z, _, _ in path]
    locus.points = pts

    def bracket(i, test, xtol):
        z_prev, t_prev, _ = path[i - 1]
        ds = float(np.dot(path[i][0] - z_prev, t_prev))
        return curve.locate(z_prev, t_prev, ds, test, xtol=xtol)

    on_hc = [1.0 if p.diagnostics["segment"] == "homoclinic" else -1.0 for p in pts]
    sigma = [p.diagnostics["saddle_quantity"] if s > 0 else math.nan for p, s in zip(pts, on_hc)]
    for i in _sign_changes(sigma):
        try:
            zr = bracket(i, lambda u: info(u).diagnostics.get("saddle_quantity", math.nan), 1e-9)
        except (CorrectorError, ValueError):
            continue
        pt = info(zr * curve.scale)
        locus.events.append(_event("RHom", pt.v1b, pt.v3b, pt.state, dict(pt.diagnostics), src))

    for i in _sign_changes(on_hc):
        try:
            zn = bracket(i, lambda u: 1.0 if info(u).diagnostics["segment"] == "homoclinic"
                         else -1.0, 1e-7)
        except (CorrectorError, ValueError):
            continue
        pt = info(zn * curve.scale)
        locus.events.append(_event("NSH", pt.v1b, pt.v3b, pt.state, dict(pt.diagnostics), src))
    return locus


# ---------------------------------------------------------------------------
# Folds of cycles

def continue_snc_curve(start: BifurcationEvent, limits=WINDOW, system: SystemDef = DIMLESS,
                       base=None, period_max: float = T_MAX, max_steps: int = 800) -> LocusCurve:
    """Locus of folds of cycles: the shooting system in (v1b, v3b) with the
    nontrivial multiplier pinned at +1 (log multiplier, the trace integral,
    equal to zero).  Ends where the period blows up (homoclinic end) or
    the amplitude collapses (Hopf end)."""
    base = base or DIMLESS_DEFAULT
    a, b = start.param_values if len(start.param_values) == 2 else \
        (start.param_values[0], getattr(base, P2))
    T0 = start.diagnostics["period"]
    pp = _params(base, a, b)
    m, nseg = mesh_for(system, T0)
    xs = _rk4_flow(system.rhs_kernel, np.asarray(start.state, float), system.pvec(pp), T0, m * nseg)
    src = "locus:snc"
    locus = LocusCurve("snc")
    settings = Settings(ds=5e-3, ds_min=1e-7, ds_max=0.05, tol=1e-9, step_tol=1e-9,
                        max_iter=10, grow_at=3, shrink_at=7)

    def build(X, T, a_, b_):
        m_, n_ = mesh_for(system, T)
        if m_ != len(X):
            xs_ = _rk4_flow(system.rhs_kernel, X[0], system.pvec(_params(base, a_, b_)), T, m_ * n_)
            X = xs_[: m_ * n_: n_]
        sh_ = Shooting(system, base, m_, n_, (P1, P2), snc=True)
        u_ = sh_.pack(X, T, [a_, b_])
        cv = Curve(sh_.residual, sh_.jacobian, sh_.scale(), settings)
        z_ = cv.correct(u_ / cv.scale, np.zeros(len(u_)), fixed=(len(u_) - 1, b_ / cv.scale[-1]))[0]
        return sh_, cv, z_

    sh, curve, z0 = build(xs[: m * nseg: nseg].copy(), T0, a, b)
    tails = {}
    halves = []
    for direction in (1, -1):
        sh_d, cv, z = sh, curve, z0
        t = cv.tangent(z)
        if t[-1] * direction < 0:
            t = -t
        path = [(z, t, sh_d)]
        ds = settings.ds
        end = "max-steps"
        for _ in range(max_steps):
            try:
                z_new, t_new, ds_used, ds = cv.step(z, t, ds)
            except CorrectorError:
                end = "corrector-failure"
                break
            u = z_new * cv.scale
            sol = sh_d.solution(u)
            if not _in_box(u[-2], u[-1], limits):
                end = "limit"
                break
            if sol.amplitude < 0.02:
                end = "hopf"
                path.append((z_new, t_new, sh_d))
                break
            if sol.period > period_max or _stalled(path, cv, z_new):
                end = "homoclinic"
                path.append((z_new, t_new, sh_d))
                break
            path.append((z_new, t_new, sh_d))
            z, t = z_new, t_new
            m_new, n_new = mesh_for(system, sol.period)
            if m_new != sh_d.m or abs(n_new - sh_d.nseg) > 0.25 * sh_d.nseg:
                X, T, _ = sh_d.unpack(u)
                ref = (t[-3], t[-2], t[-1])
                try:
                    sh_d, cv, z = build(X.copy(), T, u[-2], u[-1])
                except CorrectorError:
                    end = "corrector-failure"
                    break
                t = cv.tangent(z)
                if t[-3] * ref[0] + t[-2] * ref[1] + t[-1] * ref[2] < 0:
                    t = -t
        tails[direction] = end
        halves.append(path)
    locus.truncated = any(e == "corrector-failure" for e in tails.values())
    locus.note = f"ends: {tails[-1]}, {tails[1]}"
    path = halves[1][::-1] + halves[0][1:]
    for z, _, sh_d in path:
        u = z * (sh_d.scale())
        sol = sh_d.solution(u)
        locus.points.append(LocusPoint(float(u[-2]), float(u[-1]), sol.anchor_state,
                                       {"period": sol.period, "amplitude": sol.amplitude,
                                        "log_multiplier": sol.log_multiplier}))
    for direction, path_d in zip((1, -1), halves):
        z, _, sh_d = path_d[-1]
        u = z * sh_d.scale()
        kind = {"hopf": "GH", "homoclinic": "RHom"}.get(tails[direction])
        if kind:
            sol = sh_d.solution(u)
            locus.endpoints.append(_event(kind, u[-2], u[-1], sol.anchor_state,
                                          {"period": sol.period, "amplitude": sol.amplitude,
                                           "endpoint": 1}, src))
    return locus


def _stalled(path, cv, z_new, count: int = 4) -> bool:
    """Period growing while both parameters stand still."""
    if len(path) < count:
        return False
    zs = [p[0] for p in path[-count:]] + [z_new]
    dpar = np.abs(np.diff([z[-2:] * cv.scale[-2:] for z in zs], axis=0))
    return bool(np.all(dpar < 1e-9))


# ---------------------------------------------------------------------------
# Slices and excitability

def slice_diagram(v3b: float, base=None, limits=SLICE_WINDOW, **kw) -> OneParamDiagram:
    base = base or DIMLESS_DEFAULT
    return one_parameter_diagram(DIMLESS, with_param(base, P2, v3b), P1, limits, **kw)


def excitability_from_diagram(diag: OneParamDiagram) -> ExcitabilityLabel:
    """Label from the event at which stable oscillations appear as v1b
    decreases from the quiescent side."""
    v3b = getattr(diag.params, P2)
    # No stable oscillation anywhere on the slice: the cell stays excitable
    # without ever pacing, whatever unstable cycles exist.
    if diag.stable_cycle_window() is None:
        return ExcitabilityLabel(v3b, "none")
    onset = diag.oscillation_onset()
    if onset is None:
        return ExcitabilityLabel(v3b, "undecided")
    if onset.kind == "SNIC":
        label = "type-I"
    elif onset.kind == "HB" and onset.diagnostics.get("omega", 0.0) > 0:
        label = "type-II"
    elif onset.kind == "HC":
        label = "bistable-with-HC-onset"
    else:
        label = "undecided"
    return ExcitabilityLabel(v3b, label, onset)


def classify_excitability(v3b: float, base=None, diagram: Optional[OneParamDiagram] = None) \
        -> ExcitabilityLabel:
    diag = diagram or slice_diagram(v3b, base)
    return excitability_from_diagram(diag)


def excitability_transition(lo: float = SLICES["l5"], hi: float = SLICES["l4"],
                            base=None, tol: float = 2e-3) -> tuple:
    """Bisect in v3b between a type-II slice ``lo`` and a type-I slice
    ``hi``.  Returns (bracket_lo, bracket_hi, labels visited)."""
    visited = {}

    def label(v):
        if v not in visited:
            visited[v] = classify_excitability(v, base).label
        return visited[v]

    if label(hi) != "type-I" or label(lo) != "type-II":
        raise ValueError("slices do not bracket a type-I/type-II transition")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if label(mid) == "type-I":
            hi = mid
        else:
            lo = mid
    return lo, hi, visited


# ---------------------------------------------------------------------------
# The full map

@dataclass
class TwoParamMap:
    loci: list
    events: list
    slices: dict
    excitability: dict
    window: tuple = WINDOW

    def events_of(self, kind: str) -> list:
        return [e for e in self.events if e.kind == kind]

    def counts(self) -> dict:
        out: dict = {}
        for e in self.events:
            out[e.kind] = out.get(e.kind, 0) + 1
        return out


def _slice_job(args):
    name, v3b, base = args
    diag = slice_diagram(v3b, base)
    return name, diag


def _dedupe(events: list, tol: float = 1e-4) -> list:
    out: list = []
    for e in sorted(events, key=lambda e: (e.kind, e.param_values[1], e.param_values[0])):
        if not any(o.kind == e.kind and max(abs(o.param_values[0] - e.param_values[0]),
                                            abs(o.param_values[1] - e.param_values[1])) < tol
                   for o in out):
            out.append(e)
    return out


def _tag_snic_segment(fold: LocusCurve, nsh: list) -> None:
    """Mark fold-locus points between the two NSH points as SNIC."""
    for p in fold.points:
        p.diagnostics["segment"] = "sn"
    if len(nsh) != 2 or not fold.points:
        return
    A = np.column_stack([fold.v1b, fold.v3b])
    idx = sorted(int(np.argmin(np.sum((A - np.array(e.param_values)) ** 2, axis=1))) for e in nsh)
    for p in fold.points[idx[0]: idx[1] + 1]:
        p.diagnostics["segment"] = "snic"


def render_two_param_map(ranges=WINDOW, resolution: Optional[float] = None, base=None,
                         jobs: int = 1, slices: Optional[dict] = None,
                         diagrams: Optional[dict] = None) -> TwoParamMap:
    """All loci of the (v1b, v3b) map, their codimension-two points, the
    slice diagrams and the excitability label of each slice.

    ``resolution`` caps the arclength step of the equilibrium loci.
    Precomputed slice diagrams (name -> diagram) may be passed as
    ``diagrams``; missing slices are computed.
    """
    base = base or DIMLESS_DEFAULT
    slices = dict(SLICES if slices is None else slices)
    diagrams = {k: d for k, d in (diagrams or {}).items() if k in slices}
    tasks = [(k, v, base) for k, v in slices.items() if k not in diagrams]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            diagrams.update(ex.map(_slice_job, tasks))
    else:
        diagrams.update(_slice_job(t) for t in tasks)
    diagrams = {k: diagrams[k] for k in slices}

    def first_event(kind, *names, pick=None):
        for n in names:
            d = diagrams.get(n)
            if d is None:
                continue
            evs = [e for e in d.events if e.kind == kind and (pick is None or pick(e))]
            if evs:
                return n, evs
        return None, []

    loci: list = []
    # Folds: both folds of the top slice.
    _, folds = first_event("SN", "l1", "l2")
    fold_loci = []
    for ev in folds:
        if any(_near_locus(L, ev.param, getattr(_slice_params(diagrams, ev), P2)) for L in fold_loci):
            continue
        ev2 = _with_slice(ev, diagrams)
        fold_loci.append(continue_fold_curve(ev2, ranges, base=base, resolution=resolution))
    loci.extend(fold_loci)

    # Hopf loci: from the top Hopf slice and from the bottom slice.
    hopf_loci = []
    for name in ("l2", "l6", "l5"):
        d = diagrams.get(name)
        if d is None:
            continue
        for ev in (e for e in d.events if e.kind == "HB"):
            v3 = getattr(d.params, P2)
            if any(_near_locus(L, ev.param, v3) for L in hopf_loci):
                continue
            hopf_loci.append(continue_hopf_curve(_with_slice(ev, diagrams), ranges, base=base,
                                                 resolution=resolution))
    loci.extend(hopf_loci)

    # Homoclinic proxy from the HC termination of the slice with a
    # homoclinic onset.
    for name in ("l3", "l2"):
        d = diagrams.get(name)
        if d is None:
            continue
        hcs = [e for e in d.events if e.kind == "HC"]
        if not hcs:
            continue
        hc = hcs[0]
        br = _branch_ending_at(d, hc.param)
        if br is None:
            continue
        try:
            loci.append(continue_homoclinic_curve(_with_slice(hc, diagrams), br.points[-1], ranges,
                                                  base=base))
        except (ShootingError, CorrectorError, np.linalg.LinAlgError):
            pass
        break

    # SNC locus from the first slice that carries one.
    for name in ("l3", "l4", "l5"):
        d = diagrams.get(name)
        if d is None:
            continue
        sncs = [e for e in d.events if e.kind == "SNC"]
        if sncs:
            try:
                loci.append(continue_snc_curve(_with_slice(sncs[0], diagrams), ranges, base=base))
            except (ShootingError, CorrectorError, np.linalg.LinAlgError):
                pass
            break

    events = _dedupe([e for L in loci for e in L.events])
    nsh = [e for e in events if e.kind == "NSH"]
    for L in fold_loci:
        _tag_snic_segment(L, nsh)
        snic = [p for p in L.points if p.diagnostics["segment"] == "snic"]
        if snic:
            loci.append(LocusCurve("snic", snic, endpoints=nsh, note="fold segment between NSH points"))
    excit = {name: excitability_from_diagram(d) for name, d in diagrams.items()}
    return TwoParamMap(loci, events, diagrams, excit, ranges)


def _slice_params(diagrams: dict, ev: BifurcationEvent):
    for d in diagrams.values():
        if any(e is ev for e in d.events):
            return d.params
    return DIMLESS_DEFAULT


def _with_slice(ev: BifurcationEvent, diagrams: dict) -> BifurcationEvent:
    v3 = getattr(_slice_params(diagrams, ev), P2)
    return BifurcationEvent(ev.kind, (ev.param, v3), ev.state, ev.diagnostics, ev.source)


def _near_locus(locus: LocusCurve, a: float, b: float, tol: float = 1e-5) -> bool:
    if not locus.points:
        return False
    d = np.hypot(locus.v1b - a, locus.v3b - b)
    # Interpolation between points: accept anything within a step.
    steps = np.hypot(np.diff(locus.v1b), np.diff(locus.v3b))
    lim = max(tol, float(np.max(steps)) if len(steps) else tol)
    return bool(np.min(d) <= lim)


def _branch_ending_at(diag: OneParamDiagram, param: float):
    best = None
    for br in diag.cycles:
        if br.termination == "period-blowup" and abs(br.points[-1].param - param) < 1e-4:
            if best is None or br.points[-1].period > best.points[-1].period:
                best = br
    return best
