"""Periodic orbits: shooting, Floquet multipliers, continuation in one
parameter, and classification of period blow-up terminations.

Orbits are computed by multiple shooting on m segments of equal duration
(m = 1 is plain single shooting).  Long periods get more segments so that the
shooting Jacobian stays well conditioned near homoclinic orbits.  The period
enters the unknowns as log T.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .continuation import CorrectorError, Curve, Settings
from .equilibria import (BifurcationEvent, NoConvergence, SingularJacobian,
                         classify_point, newton_equilibrium, residual_scale)
from .integrate import (DEFAULT_STEP, Budget, _rk4_flow, _rk4_flow_sens, _rk4_flow_var,
                        classify_oscillation, rk4_integrate, upward_crossings)
from .model import SystemDef, with_param

T_MAX = 1000.0
SEGMENT_LENGTH = 10.0
# Bound on |det M / exp(integral of trace J) - 1|; a branch whose cycles miss
# it continues on a finer mesh.
LIOUVILLE_TOL = 1e-6
MAX_REFINEMENTS = 3
ORBIT_SAMPLES = 512


class ShootingError(RuntimeError):
    pass


@dataclass
class CycleSolution:
    anchor_state: np.ndarray
    period: float
    samples: np.ndarray
    multipliers: np.ndarray
    stability: str
    param: float
    log_multiplier: float = float("nan")
    trivial_error: float = float("nan")
    residual: float = float("nan")
    liouville_error: float = float("nan")

    @property
    def v_min(self) -> float:
        return float(self.samples[:, 0].min())

    @property
    def v_max(self) -> float:
        return float(self.samples[:, 0].max())

    @property
    def amplitude(self) -> float:
        return self.v_max - self.v_min

    def nontrivial(self) -> np.ndarray:
        k = int(np.argmin(np.abs(self.multipliers - 1.0)))
        return np.delete(self.multipliers, k)


@dataclass
class CycleBranch:
    freed_handle: str
    points: list = field(default_factory=list)
    events: list = field(default_factory=list)
    termination: str = ""
    truncated: bool = False
    period_max: float = T_MAX

    @property
    def params(self) -> np.ndarray:
        return np.array([c.param for c in self.points])

    @property
    def periods(self) -> np.ndarray:
        return np.array([c.period for c in self.points])


# ---------------------------------------------------------------------------
# Shooting system

class Shooting:
    """Residual of the periodic-orbit boundary value problem.

    Unknowns u = [x_0, ..., x_{m-1}, log T, free parameters...].  Equations:
    flow(x_i, T/m) - x_{i+1} = 0 cyclically, plus the phase condition
    rhs(x_0)[phase] = 0.

    ``handles`` lists the freed parameters (a single name is accepted).
    With ``fixed_period`` the period is not an unknown.  With ``snc=True``
    (planar systems) the log of the nontrivial multiplier, which equals the
    integral of trace J over one period, is appended as an equation.
    """

    def __init__(self, system: SystemDef, params, m: int, nseg: int,
                 handle=None, phase: int = 0, fixed_period: Optional[float] = None,
                 snc: bool = False):
        self.system = system
        self.params = params
        self.base = system.pvec(params)
        self.m, self.nseg = m, nseg
        if handle is None:
            handles = ()
        elif isinstance(handle, str):
            handles = (handle,)
        else:
            handles = tuple(handle)
        self.handles = handles
        self.handle = handles[0] if handles else None
        self.index = np.array([system.handle(h) for h in handles], dtype=np.int64)
        self.dp = np.array([1e-7 * system.param_scale(h) for h in handles])
        self.fixed_period = fixed_period
        self.snc = snc
        self.phase = phase
        self.d = system.dimension
        self.sscale = np.asarray(system.state_scale, dtype=float)
        self.rs = residual_scale(system)
        self._cache_key = None
        self._cache = None

    @property
    def k(self) -> int:
        return len(self.handles)

    @property
    def ix_T(self) -> Optional[int]:
        return None if self.fixed_period else self.m * self.d

    @property
    def size(self) -> int:
        return self.m * self.d + (0 if self.fixed_period else 1) + self.k

    def scale(self, period_scale: float = 1.0) -> np.ndarray:
        # Orbit points are weighted by sqrt(m) so that the arclength measures
        # the orbit change on average, independent of the segment count.
        s = [np.tile(self.sscale, self.m) * math.sqrt(self.m)]
        if not self.fixed_period:
            s.append([period_scale])
        s.append([self.system.param_scale(h) for h in self.handles])
        return np.concatenate(s)

    def unpack(self, u):
        d, m = self.d, self.m
        X = u[: m * d].reshape(m, d)
        if self.fixed_period:
            T = self.fixed_period
        else:
            # Cap log T so that a wild Newton step yields a non-finite
            # residual (caught by the corrector) instead of an overflow.
            T = math.exp(min(u[m * d], 30.0))
        p = self.base
        if self.k:
            p = self.base.copy()
            p[self.index] = u[len(u) - self.k:]
        return X, T, p

    def pack(self, X, T, values=()):
        parts = [np.asarray(X, dtype=float).ravel()]
        if not self.fixed_period:
            parts.append([math.log(T)])
        if np.ndim(values) == 0:
            values = [values]
        parts.append(np.asarray(values, dtype=float))
        return np.concatenate(parts)

    def _evaluate(self, u):
        key = u.tobytes()
        if key == self._cache_key:
            return self._cache
        X, T, p = self.unpack(u)
        if self.ix_T is not None and u[self.ix_T] > 30.0:
            X = X * np.nan
        f, jac = self.system.rhs_kernel, self.system.jac_kernel
        tau = T / self.m
        segs = [_rk4_flow_sens(f, jac, X[i], p, tau, self.nseg, self.index, self.dp)
                for i in range(self.m)]
        self._cache_key, self._cache = key, (X, T, p, segs)
        return self._cache

    @property
    def n_eq(self) -> int:
        return self.m * self.d + 1 + (1 if self.snc else 0)

    def residual(self, u):
        X, T, p, segs = self._evaluate(u)
        m, d = self.m, self.d
        r = np.empty(self.n_eq)
        for i in range(m):
            r[i * d:(i + 1) * d] = (segs[i][0][-1] - X[(i + 1) % m]) / self.sscale
        r[m * d] = self.system.rhs_kernel(X[0], p)[self.phase] * self.rs[self.phase]
        if self.snc:
            r[-1] = sum(seg[4] for seg in segs)
        return r

    def jacobian(self, u):
        X, T, p, segs = self._evaluate(u)
        m, d, k = self.m, self.d, self.k
        A = np.zeros((self.n_eq, self.size))
        tau = T / m
        f = self.system.rhs_kernel
        for i in range(m):
            rows = slice(i * d, (i + 1) * d)
            _, Y, w, Z, _ = segs[i]
            A[rows, i * d:(i + 1) * d] = Y / self.sscale[:, None]
            j = (i + 1) % m
            A[rows, j * d:(j + 1) * d] -= np.diag(1.0 / self.sscale)
            if self.ix_T is not None:
                A[rows, self.ix_T] = w * tau / self.sscale
            if k:
                A[rows, self.size - k:] = Z / self.sscale[:, None]
        ph = m * d
        A[ph, :d] = self.system.jac_kernel(X[0], p)[self.phase] * self.rs[self.phase]
        for j in range(k):
            pp, pm = p.copy(), p.copy()
            pp[self.index[j]] += self.dp[j]
            pm[self.index[j]] -= self.dp[j]
            A[ph, self.size - k + j] = (f(X[0], pp)[self.phase] - f(X[0], pm)[self.phase]) \
                / (2 * self.dp[j]) * self.rs[self.phase]
        if self.snc:
            A[-1] = self._trace_row(u)
        return A

    def _trace_row(self, u):
        """Derivatives of the trace integral by central differences; each
        orbit coordinate only touches its own segment."""
        X, T, p, segs = self._evaluate(u)
        f, jac = self.system.rhs_kernel, self.system.jac_kernel
        m, d = self.m, self.d
        row = np.zeros(self.size)
        tau = T / m
        none_i, none_h = np.zeros(0, dtype=np.int64), np.zeros(0)

        def q_seg(x, p_, t_):
            return _rk4_flow_sens(f, jac, x, p_, t_, self.nseg, none_i, none_h)[4]

        for i in range(m):
            for c in range(d):
                h = 1e-6 * self.sscale[c]
                xp, xm = X[i].copy(), X[i].copy()
                xp[c] += h
                xm[c] -= h
                row[i * d + c] = (q_seg(xp, p, tau) - q_seg(xm, p, tau)) / (2 * h)
        if self.ix_T is not None:
            # The trace integral depends on T through the segment length.
            e = 1e-6
            row[self.ix_T] = sum(q_seg(X[i], p, tau * math.exp(e)) - q_seg(X[i], p, tau * math.exp(-e))
                                 for i in range(m)) / (2 * e)
        for j in range(self.k):
            pp, pm = p.copy(), p.copy()
            pp[self.index[j]] += self.dp[j]
            pm[self.index[j]] -= self.dp[j]
            row[self.size - self.k + j] = sum(q_seg(X[i], pp, tau) - q_seg(X[i], pm, tau)
                                              for i in range(m)) / (2 * self.dp[j])
        return row

    def solution(self, u) -> CycleSolution:
        X, T, p, segs = self._evaluate(u)
        M = np.eye(self.d)
        q = 0.0
        for seg in segs:
            M = seg[1] @ M
            q += seg[4]
        mults = np.linalg.eigvals(M)
        k = int(np.argmin(np.abs(mults - 1.0)))
        triv = float(abs(mults[k] - 1.0))
        if self.d == 2:
            # Liouville: the nontrivial multiplier is exp(integral of trace).
            log_mu = q
            stable = q < 0
        else:
            others = np.delete(mults, k)
            log_mu = float(np.log(np.max(np.abs(others))))
            stable = bool(np.all(np.abs(others) < 1.0))
        # Abel-Liouville: det M = exp(q).  Summing per-segment log
        # determinants avoids underflow on long orbits.
        log_det = sum(math.log(abs(np.linalg.det(seg[1]))) for seg in segs)
        liou = abs(math.expm1(log_det - q))
        samples = np.vstack([seg[0][:-1] for seg in segs] + [segs[-1][0][-1:]])
        param = float(u[-self.k]) if self.k else float("nan")
        res = float(np.max(np.abs(self.residual(u)[: self.m * self.d])))
        return CycleSolution(X[0].copy(), T, samples, mults, "stable" if stable else "unstable",
                             param, float(log_mu), triv, res, float(liou))


def mesh_for(system: SystemDef, period: float, step: Optional[float] = None,
             segment_length: Optional[float] = None) -> tuple:
    """(segments, RK4 steps per segment) for a given period."""
    h = DEFAULT_STEP * system.time_unit if step is None else step
    L = (segment_length or SEGMENT_LENGTH) * system.time_unit
    m = max(1, int(math.ceil(period / L)))
    nseg = max(8, int(math.ceil(period / m / h)))
    return m, nseg


def _segments_from_anchor(system, p, anchor, T, m, nseg):
    xs = _rk4_flow(system.rhs_kernel, np.asarray(anchor, dtype=float), p, T, m * nseg)
    return xs[: m * nseg: nseg].copy()


def _newton_shooting(sh: Shooting, u, tol=1e-10, maxiter=30):
    for _ in range(maxiter):
        r = sh.residual(u)
        if not np.all(np.isfinite(r)):
            raise ShootingError("non-finite shooting residual")
        A = sh.jacobian(u)
        try:
            du = np.linalg.solve(A, -r)
        except np.linalg.LinAlgError as exc:
            raise ShootingError("singular shooting Jacobian") from exc
        # Damp steps that would change the period violently.
        lim = 0.5
        if abs(du[sh.m * sh.d]) > lim:
            du *= lim / abs(du[sh.m * sh.d])
        u = u + du
        if np.max(np.abs(sh.residual(u))) <= tol and np.max(np.abs(du)) < 1e-8:
            return u
    if np.max(np.abs(sh.residual(u))) <= tol:
        return u
    raise ShootingError("shooting Newton did not converge")


def refine_cycle(system: SystemDef, params, anchor, period: float, step: Optional[float] = None,
                 phase: int = 0, tol: float = 1e-10, param_name: Optional[str] = None) -> CycleSolution:
    """Polish (anchor, period) into a periodic orbit by Newton shooting."""
    p = system.pvec(params)
    m, nseg = mesh_for(system, period, step)
    last = None
    for ph in (phase, 1 - phase if system.dimension > 1 else phase):
        sh = Shooting(system, params, m, nseg, phase=ph)
        X = _segments_from_anchor(system, p, anchor, period, m, nseg)
        if ph != phase:
            # Move the anchor to an extremum of the fallback component.
            xs = _rk4_flow(system.rhs_kernel, np.asarray(anchor, float), p, period, m * nseg)
            k = int(np.argmax(xs[:, ph]))
            X = _segments_from_anchor(system, p, xs[k], period, m, nseg)
        u0 = sh.pack(X, period)
        try:
            u = _newton_shooting(sh, u0, tol)
        except ShootingError as exc:
            last = exc
            continue
        sol = sh.solution(u)
        if param_name:
            sol.param = float(getattr(params, param_name))
        return sol
    raise ShootingError(f"cycle refinement failed: {last}")


def find_cycle(system: SystemDef, params, seed, budget: Optional[Budget] = None,
               step: Optional[float] = None, param_name: Optional[str] = None,
               time_direction: int = 1) -> CycleSolution:
    """Periodic orbit from a seed: either a Trajectory or an initial state
    that is simulated until the oscillation settles.

    ``time_direction=-1`` simulates the time-reversed flow, which in the plane
    turns repelling cycles into attracting ones.
    """
    budget = budget or Budget.for_system(system)
    if hasattr(seed, "states"):
        traj = seed
    else:
        sim_sys = system if time_direction > 0 else reversed_system(system)
        rep = classify_oscillation(sim_sys, params, seed, budget)
        if rep.classification != "periodic":
            raise ShootingError(f"seed trajectory is {rep.classification}")
        span = 3.0 * rep.period
        traj = rk4_integrate(sim_sys, params, rep.final_state, (0.0, span), budget.step)
    v = traj.states[:, 0]
    ups = upward_crossings(traj.times, v, 0.5 * (v.min() + v.max()))
    if len(ups) < 2:
        raise ShootingError("degenerate seed trajectory: no repeated crossings")
    period = float(np.mean(np.diff(ups)))
    t0 = ups[-2]
    window = (traj.times >= t0) & (traj.times <= t0 + period)
    k = int(np.argmax(np.where(window, v, -np.inf)))
    return refine_cycle(system, params, traj.states[k], period, step, param_name=param_name)


def reversed_system(system: SystemDef) -> SystemDef:
    """The same model with time running backwards.  It shares the compiled
    kernels of ``system``, so no new machine code (or on-disk cache entry)
    is created per call."""
    return replace(system, name=system.name + "-reversed",
                   time_sign=-system.time_sign)


def monodromy(cycle: CycleSolution, system: SystemDef, params, step: Optional[float] = None):
    """Monodromy matrix and multipliers by integrating the variational
    equations once around the orbit (single segment, same step policy)."""
    p = system.pvec(params)
    h = (step or DEFAULT_STEP * system.time_unit)
    n = max(8, int(math.ceil(cycle.period / h)))
    xs, Y, w, q = _rk4_flow_var(system.rhs_kernel, system.jac_kernel,
                                np.asarray(cycle.anchor_state, float), p, cycle.period, n)
    mults = np.linalg.eigvals(Y)
    quality = float(np.min(np.abs(mults - 1.0)))
    return Y, mults, {"trivial_error": quality, "trace_integral": q,
                      "unreliable": quality > 1e-3}


# ---------------------------------------------------------------------------
# Continuation

def _snc_test(sol: CycleSolution, d: int) -> float:
    if d == 2:
        return sol.log_multiplier
    others = sol.nontrivial()
    return float(np.real(np.prod(others - 1.0)))


def continue_cycle(system: SystemDef, params, freed_handle: str, start: CycleSolution,
                   direction: int = 1, limits: tuple = (-np.inf, np.inf),
                   settings: Optional[Settings] = None, period_max: float = T_MAX,
                   amp_min: float = 2e-3, step: Optional[float] = None,
                   max_steps: int = 4000) -> CycleBranch:
    """Pseudo-arclength continuation of a periodic orbit.

    Stops when the period exceeds ``period_max`` (homoclinic or SNIC
    approach), when the amplitude collapses onto a Hopf point, at the
    parameter limits, or when the corrector fails.
    """
    settings = settings or Settings(ds=1e-2, ds_min=1e-7, ds_max=0.2, tol=1e-9,
                                    step_tol=1e-9, max_iter=10, shrink_at=7)
    period_max = period_max * system.time_unit
    amp_tol = amp_min * system.state_scale[0]
    amp_near = 0.15 * system.state_scale[0]
    lo, hi = limits
    d = system.dimension
    branch = CycleBranch(freed_handle, period_max=period_max)
    src = f"cycle:{freed_handle}"
    p_start = getattr(params, freed_handle)
    sol = start
    if math.isnan(sol.param):
        sol.param = p_start
    branch.points.append(sol)

    h = step
    refinements = 0

    def build(sol, prev_t=None, h=h):
        m, nseg = mesh_for(system, sol.period, h)
        sh = Shooting(system, params, m, nseg, freed_handle)
        X = _segments_from_anchor(system, _pvec_with(sh, sol.param), sol.anchor_state,
                                  sol.period, m, nseg)
        u = sh.pack(X, sol.period, sol.param)
        curve = Curve(sh.residual, sh.jacobian, sh.scale(1.0), settings)
        z = u / curve.scale
        # Re-solve on the new mesh with the parameter pinned.
        try:
            z = curve.correct(z, np.zeros_like(z), fixed=(len(z) - 1, z[-1]))[0]
            converged = True
        except CorrectorError:
            converged = False
        t = curve.tangent(z)
        if prev_t is None:
            if t[-1] * direction < 0:
                t = -t
        else:
            # Orient by the (log T, parameter) components of the old tangent.
            if t[-2] * prev_t[0] + t[-1] * prev_t[1] < 0:
                t = -t
        return sh, curve, z, t, converged

    sh, curve, z, t, _ = build(sol)
    ds = settings.ds
    test_prev = _snc_test(sol, d)
    steps = 0
    while steps < max_steps:
        steps += 1
        try:
            z_new, t_new, ds_used, ds = curve.step(z, t, ds)
        except CorrectorError:
            if _stagnating(branch, system, freed_handle, 1e-6):
                _blowup(branch, src, stagnated=True)
            else:
                branch.truncated = True
                branch.termination = "corrector-failure"
            break
        u_new = z_new * curve.scale
        new = sh.solution(u_new)
        # The anchor sits at a V extremum; its side of the orbit mean flips
        # when the branch runs through a Hopf point.
        a = [_signed_amplitude(c) for c in branch.points[-2:] + [new]]
        passed = a[-1] * a[-2] < 0 and min(abs(a[-1]), abs(a[-2])) < amp_near
        if new.amplitude < amp_tol or passed:
            branch.termination = "hopf"
            if passed:
                ps = [c.param for c in branch.points[-2:] + [new]]
                p_h = float(np.polyfit(a, ps, len(a) - 1)[-1])
            else:
                # A collapsed orbit carries no information on the parameter.
                p_h = _extrapolate_hopf(branch)
            branch.events.append(BifurcationEvent(
                "HB", (p_h,), branch.points[-1].anchor_state,
                {"period": branch.points[-1].period, "termination": 1}, source=src))
            break
        test_new = _snc_test(new, d)
        if np.sign(test_new) != np.sign(test_prev) and test_prev != 0:
            try:
                zz = curve.locate(z, t, ds_used, lambda u: _snc_test(sh.solution(u), d),
                                  xtol=1e-9)
                at = sh.solution(zz * curve.scale)
                branch.events.append(BifurcationEvent(
                    "SNC", (at.param,), at.anchor_state,
                    {"period": at.period, "v_min": at.v_min, "v_max": at.v_max},
                    source=src))
            except (CorrectorError, ValueError):
                pass
        branch.points.append(new)
        z, t, test_prev = z_new, t_new, test_new
        if not (lo <= new.param <= hi):
            branch.termination = "limit"
            break
        if new.period > period_max:
            _blowup(branch, src)
            break
        if _stagnating(branch, system, freed_handle, 1e-10):
            _blowup(branch, src, stagnated=True)
            break
        old_t = (t[-2], t[-1])
        if new.liouville_error > LIOUVILLE_TOL and refinements < MAX_REFINEMENTS:
            # Long, strongly contracting orbits accumulate RK4 error in the
            # monodromy; redo this point and the rest of the branch on a
            # finer mesh.
            h_fine = 0.5 * (h if h is not None else DEFAULT_STEP * system.time_unit)
            fine = build(new, old_t, h_fine)
            if fine[4]:
                h, refinements = h_fine, refinements + 1
                sh, curve, z, t, _ = fine
                branch.points[-1] = sh.solution(z * curve.scale)
                continue
        # Re-mesh when the period has drifted away from the current mesh.
        m, nseg = mesh_for(system, new.period, h)
        if m != sh.m or abs(nseg - sh.nseg) > 0.25 * sh.nseg:
            sh, curve, z, t, _ = build(new, old_t, h)
    else:
        branch.termination = "max-steps"
    return branch


def _stagnating(branch: CycleBranch, system: SystemDef, handle: str, tol: float,
                count: int = 4) -> bool:
    """Period still growing while the parameter has stopped moving: the
    exponential approach to a homoclinic orbit of a hyperbolic saddle, which
    reaches machine precision in the parameter long before any period cap."""
    pts = branch.points[-(count + 1):]
    if len(pts) < count + 1:
        return False
    dp = np.abs(np.diff([c.param for c in pts]))
    dT = np.diff([c.period for c in pts])
    grown = pts[-1].period > 3.0 * min(c.period for c in branch.points)
    return bool(grown and np.all(dT > 0) and np.all(dp < tol * system.param_scale(handle)))


def _blowup(branch: CycleBranch, src: str, stagnated: bool = False) -> None:
    tail = branch.points[-1]
    branch.termination = "period-blowup"
    branch.events.append(BifurcationEvent(
        "HC", (tail.param,), tail.anchor_state,
        {"period": tail.period, "candidate": 1, "stagnated": int(stagnated)}, source=src))


def _signed_amplitude(c: CycleSolution) -> float:
    side = c.anchor_state[0] - c.samples[:, 0].mean()
    return c.amplitude if side >= 0 else -c.amplitude


def _pvec_with(sh: Shooting, value: float) -> np.ndarray:
    p = sh.base.copy()
    p[sh.index[0]] = value
    return p


def _extrapolate_hopf(branch: CycleBranch) -> float:
    """Parameter where amplitude^2 extrapolates linearly to zero."""
    pts = branch.points[-3:]
    if len(pts) == 3:
        # Quadratic in amplitude^2 uses the curvature of the last steps.
        a2 = np.array([c.amplitude ** 2 for c in pts])
        ps = np.array([c.param for c in pts])
        return float(np.polyfit(a2, ps, 2)[-1])
    if len(pts) < 2:
        return pts[-1].param
    a2 = np.array([c.amplitude ** 2 for c in pts])
    ps = np.array([c.param for c in pts])
    slope, icpt = np.polyfit(a2, ps, 1)
    return float(icpt)


def cycle_branch_both_ways(system, params, freed_handle, start, limits, **kw) -> list:
    return [continue_cycle(system, params, freed_handle, start, +1, limits, **kw),
            continue_cycle(system, params, freed_handle, start, -1, limits, **kw)]


# ---------------------------------------------------------------------------
# Homoclinic terminations

def nearest_equilibrium(system: SystemDef, params, cycle: CycleSolution):
    """Equilibrium near the slowest point of the orbit, or None."""
    p = system.pvec(params)
    rs = residual_scale(system)
    speeds = np.array([np.max(np.abs(system.rhs_kernel(x, p) * rs)) for x in cycle.samples])
    x_slow = cycle.samples[int(np.argmin(speeds))]
    try:
        x = newton_equilibrium(system, params, x_slow)
    except (NoConvergence, SingularJacobian):
        return None, x_slow
    s = np.asarray(system.state_scale)
    dist = float(np.min(np.max(np.abs((cycle.samples - x) / s), axis=1)))
    if dist > 0.05:
        return None, x_slow
    return x, x_slow


def detect_homoclinic_termination(branch: CycleBranch, system: SystemDef, params,
                                  folds: list = (), param_tol: float = 1e-4) -> BifurcationEvent:
    """Classify a period blow-up at the end of ``branch`` as SNIC (a fold of
    equilibria at the same parameter), HC (homoclinic to a saddle), or
    'unclassified-blowup'."""
    tail = branch.points[-1]
    handle = branch.freed_handle
    p_end = with_param(params, handle, tail.param)
    x_eq, x_slow = nearest_equilibrium(system, p_end, tail)
    s = np.asarray(system.state_scale)
    near_fold = [f for f in folds if f.kind in ("SN", "SNIC") and abs(f.param - tail.param) <= param_tol
                 * system.param_scale(handle)]
    src = f"cycle:{handle}"
    diag = {"period": tail.period}
    # Just past a fold the slow region has no equilibrium left, so test the
    # orbit against the fold state itself first.
    for f in sorted(near_fold, key=lambda e: abs(e.param - tail.param)):
        dist = float(np.min(np.max(np.abs((tail.samples - f.state) / s), axis=1)))
        if dist < 1e-2:
            diag.update(orbit_distance=dist, fold_param=f.param)
            return BifurcationEvent("SNIC", (f.param,), f.state, diag, source=src)
    if x_eq is not None:
        J = system.jacobian(x_eq, p_end)
        eigs, label = classify_point(J)
        diag["orbit_distance"] = float(np.min(np.max(np.abs((tail.samples - x_eq) / s), axis=1)))
        if label == "saddle" and system.dimension == 2:
            lam_u = float(np.max(eigs.real)) / system.time_unit
            lam_s = float(np.min(eigs.real)) / system.time_unit
            diag.update({"lambda_u": lam_u, "lambda_s": lam_s, "saddle_quantity": lam_u + lam_s})
        elif label == "saddle":
            re = np.sort(eigs.real) / system.time_unit
            lam_u = float(re[re > 0].min())
            lam_s = float(re[re < 0].max())
            diag.update({"lambda_u": lam_u, "lambda_s": lam_s, "saddle_quantity": lam_u + lam_s})
        if near_fold:
            f = min(near_fold, key=lambda e: abs(e.param - tail.param))
            if np.max(np.abs((f.state - x_eq) / s)) < 0.05:
                diag["fold_param"] = f.param
                return BifurcationEvent("SNIC", (f.param,), f.state, diag, source=src)
        if label == "saddle":
            return BifurcationEvent("HC", (tail.param,), x_eq, diag, source=src)
        return BifurcationEvent("unclassified-blowup", (tail.param,), x_slow, diag, source=src)
    if near_fold:
        f = min(near_fold, key=lambda e: abs(e.param - tail.param))
        diag["fold_param"] = f.param
        return BifurcationEvent("SNIC", (f.param,), f.state, diag, source=src)
    return BifurcationEvent("unclassified-blowup", (tail.param,), x_slow, diag, source=src)
