"""Fixed-step RK4 integration, oscillation classification, channel-block
experiments and brute-force parameter sweeps."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .model import FULL, DimensionalParams, SystemDef, with_param

DEFAULT_STEP = 0.05


class BlowUpError(RuntimeError):
    def __init__(self, time: float):
        super().__init__(f"non-finite state at t = {time:.6g}")
        self.time = time


# ---------------------------------------------------------------------------
# Kernels.  ``f`` and ``jac`` are compiled model functions passed through.
# Numba cannot reuse an on-disk cache entry keyed on a function argument
# across processes, so these kernels are compiled per process.

@njit
def _rk4_step(f, x, p, h):
    k1 = f(x, p)
    k2 = f(x + 0.5 * h * k1, p)
    k3 = f(x + 0.5 * h * k2, p)
    k4 = f(x + h * k3, p)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit
def _rk4_path(f, x0, p, h, nfull, hlast, sign):
    """States at every grid point; returns (states, index of first non-finite
    state or -1).  ``sign = -1`` steps the flow backwards in time."""
    n = nfull + (1 if hlast > 0.0 else 0)
    out = np.empty((n + 1, x0.shape[0]))
    out[0] = x0
    x = x0.copy()
    bad = -1
    for i in range(n):
        x = _rk4_step(f, x, p, sign * (h if i < nfull else hlast))
        out[i + 1] = x
        if not np.all(np.isfinite(x)):
            bad = i + 1
            break
    return out, bad


@njit
def _rk4_final(f, x0, p, h, nfull, hlast, sign):
    x = x0.copy()
    for i in range(nfull):
        x = _rk4_step(f, x, p, sign * h)
    if hlast > 0.0:
        x = _rk4_step(f, x, p, sign * hlast)
    return x


@njit
def _aug_eval(f, jac, x, Y, w, Z, p, T, pidx, dp, kx, kY, kw, kZ):
    """Rates of the augmented system; writes into kx, kY, kw, kZ and returns
    the trace rate.  Column j of ``Z`` is the sensitivity to parameter
    ``pidx[j]``, with df/dp by a central difference of width ``dp[j]``."""
    d = x.shape[0]
    npar = pidx.shape[0]
    fx = f(x, p)
    J = jac(x, p)
    fd = np.empty((d, npar))
    for j in range(npar):
        pp = p.copy()
        pp[pidx[j]] += dp[j]
        fp = f(x, pp)
        pp[pidx[j]] -= 2.0 * dp[j]
        fm = f(x, pp)
        for i in range(d):
            fd[i, j] = (fp[i] - fm[i]) / (2.0 * dp[j])
    tr = 0.0
    for i in range(d):
        kx[i] = T * fx[i]
        tr += J[i, i]
        acc = 0.0
        for k in range(d):
            acc += J[i, k] * w[k]
        kw[i] = T * acc + fx[i]
        for j in range(npar):
            acc = 0.0
            for k in range(d):
                acc += J[i, k] * Z[k, j]
            kZ[i, j] = T * (acc + fd[i, j])
        for j in range(d):
            acc = 0.0
            for k in range(d):
                acc += J[i, k] * Y[k, j]
            kY[i, j] = T * acc
    return T * tr


@njit
def _rk4_flow_sens(f, jac, x0, p, T, n, pidx, dp):
    """RK4 over [0, T] in n equal steps together with the variational
    equations on the same grid.

    Returns (orbit samples, d(end)/d(x0), d(end)/dT, d(end)/dp[pidx],
    integral of trace J).  Integration runs in normalised time s in [0, 1]
    with dx/ds = T f(x), so the derivatives are exact derivatives of the
    discrete map (up to the difference quotient for df/dp).
    """
    d = x0.shape[0]
    npar = pidx.shape[0]
    h = 1.0 / n
    x = x0.copy()
    Y = np.eye(d)
    w = np.zeros(d)
    Z = np.zeros((d, npar))
    q = 0.0
    xs = np.empty((n + 1, d))
    xs[0] = x
    kx = np.empty((4, d))
    kY = np.empty((4, d, d))
    kw = np.empty((4, d))
    kZ = np.zeros((4, d, npar))
    kq = np.empty(4)
    xt = np.empty(d)
    Yt = np.empty((d, d))
    wt = np.empty(d)
    Zt = np.zeros((d, npar))
    coef = (0.0, 0.5, 0.5, 1.0)
    for step in range(n):
        for s in range(4):
            if s == 0:
                kq[0] = _aug_eval(f, jac, x, Y, w, Z, p, T, pidx, dp, kx[0], kY[0], kw[0], kZ[0])
            else:
                c = coef[s] * h
                for i in range(d):
                    xt[i] = x[i] + c * kx[s - 1, i]
                    wt[i] = w[i] + c * kw[s - 1, i]
                    for j in range(npar):
                        Zt[i, j] = Z[i, j] + c * kZ[s - 1, i, j]
                    for j in range(d):
                        Yt[i, j] = Y[i, j] + c * kY[s - 1, i, j]
                kq[s] = _aug_eval(f, jac, xt, Yt, wt, Zt, p, T, pidx, dp, kx[s], kY[s], kw[s], kZ[s])
        b = h / 6.0
        for i in range(d):
            x[i] += b * (kx[0, i] + 2.0 * kx[1, i] + 2.0 * kx[2, i] + kx[3, i])
            w[i] += b * (kw[0, i] + 2.0 * kw[1, i] + 2.0 * kw[2, i] + kw[3, i])
            for j in range(npar):
                Z[i, j] += b * (kZ[0, i, j] + 2.0 * kZ[1, i, j] + 2.0 * kZ[2, i, j] + kZ[3, i, j])
            for j in range(d):
                Y[i, j] += b * (kY[0, i, j] + 2.0 * kY[1, i, j] + 2.0 * kY[2, i, j] + kY[3, i, j])
        q += b * (kq[0] + 2.0 * kq[1] + 2.0 * kq[2] + kq[3])
        xs[step + 1] = x
    return xs, Y, w, Z, q


_NO_PARAMS = np.zeros(0, dtype=np.int64)
_NO_STEPS = np.zeros(0)


def _rk4_flow_var(f, jac, x0, p, T, n):
    """Variational flow without parameter sensitivity:
    (orbit samples, d(end)/d(x0), d(end)/dT, integral of trace J)."""
    xs, Y, w, _, q = _rk4_flow_sens(f, jac, x0, p, T, n, _NO_PARAMS, _NO_STEPS)
    return xs, Y, w, q


@njit
def _rk4_flow(f, x0, p, T, n):
    h = T / n
    x = x0.copy()
    xs = np.empty((n + 1, x0.shape[0]))
    xs[0] = x
    for i in range(n):
        x = _rk4_step(f, x, p, h)
        xs[i + 1] = x
    return xs


# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    step: float

    def component(self, i: int = 0) -> np.ndarray:
        return self.states[:, i]


def _grid(t0: float, t1: float, step: float):
    span = t1 - t0
    nfull = int(math.floor(span / step * (1 + 1e-14)))
    hlast = span - nfull * step
    if hlast <= 1e-12 * step:
        hlast = 0.0
    return nfull, hlast


def rk4_integrate(system: SystemDef, params, s0, t_span, step: float = DEFAULT_STEP) -> Trajectory:
    """Classical RK4 at a fixed step; the final step is shortened to land on
    ``t_span[1]`` exactly.  Raises BlowUpError on non-finite states."""
    if step <= 0:
        raise ValueError("step must be positive")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not (math.isfinite(t0) and math.isfinite(t1)) or t1 < t0:
        raise ValueError("t_span must be finite and increasing")
    p = system.pvec(params)
    x0 = np.asarray(s0, dtype=float)
    nfull, hlast = _grid(t0, t1, step)
    states, bad = _rk4_path(system.rhs_kernel, x0, p, float(step), nfull, float(hlast),
                            float(system.time_sign))
    times = t0 + step * np.arange(nfull + 1, dtype=float)
    if hlast > 0:
        times = np.append(times, t1)
    if bad >= 0:
        raise BlowUpError(float(times[bad]))
    return Trajectory(times, states, step)


def advance(system: SystemDef, params, s0, duration: float, step: float = DEFAULT_STEP) -> np.ndarray:
    """End state after ``duration`` without storing the path."""
    nfull, hlast = _grid(0.0, duration, step)
    x = _rk4_final(system.rhs_kernel, np.asarray(s0, dtype=float), system.pvec(params),
                   float(step), nfull, float(hlast), float(system.time_sign))
    if not np.all(np.isfinite(x)):
        raise BlowUpError(duration)
    return x


# ---------------------------------------------------------------------------
# Oscillation classification

@dataclass(frozen=True)
class Budget:
    """Time windows in the system's own clock."""

    transient: float = 500.0
    observe: float = 500.0
    step: float = DEFAULT_STEP
    # Extra observation windows allowed before giving up.
    extensions: int = 8

    @classmethod
    def for_system(cls, system: SystemDef, step: Optional[float] = None, **kw) -> "Budget":
        unit = system.time_unit
        base = cls(**kw)
        return cls(transient=base.transient * unit, observe=base.observe * unit,
                   step=step if step is not None else DEFAULT_STEP * unit,
                   extensions=base.extensions)


@dataclass
class OscillationReport:
    classification: str  # quiescent | periodic | undecided
    period: Optional[float]
    v_min: float
    v_max: float
    final_state: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {"classification": self.classification, "period": self.period,
                "v_min": self.v_min, "v_max": self.v_max}


def upward_crossings(t: np.ndarray, y: np.ndarray, level: float) -> np.ndarray:
    """Linearly interpolated times at which y crosses ``level`` upwards."""
    below = y[:-1] < level
    above = y[1:] >= level
    idx = np.nonzero(below & above)[0]
    frac = (level - y[idx]) / (y[idx + 1] - y[idx])
    return t[idx] + frac * (t[idx + 1] - t[idx])


def _judge(traj: Trajectory, amp_tol: float):
    v = traj.states[:, 0]
    vmin, vmax = float(v.min()), float(v.max())
    if vmax - vmin < amp_tol:
        return "quiescent", None
    ups = upward_crossings(traj.times, v, 0.5 * (vmin + vmax))
    if len(ups) < 5:
        return None, None
    gaps = np.diff(ups)
    if gaps.std() / gaps.mean() >= 0.01:
        return None, None
    # Reject slowly decaying (or growing) spirals: amplitude must hold steady.
    half = len(v) // 2
    a1 = np.ptp(v[:half])
    a2 = np.ptp(v[half:])
    if abs(a1 - a2) > 0.01 * max(a1, a2):
        return None, None
    return "periodic", float(gaps.mean())


def classify_oscillation(system: SystemDef, params, s0, budget: Optional[Budget] = None) -> OscillationReport:
    budget = budget or Budget.for_system(system)
    amp_tol = 1e-6 * system.state_scale[0]
    x = advance(system, params, s0, budget.transient, budget.step)
    t = budget.transient
    traj = None
    for _ in range(budget.extensions + 1):
        traj = rk4_integrate(system, params, x, (t, t + budget.observe), budget.step)
        verdict, period = _judge(traj, amp_tol)
        x = traj.states[-1]
        t += budget.observe
        if verdict is not None:
            v = traj.states[:, 0]
            return OscillationReport(verdict, period, float(v.min()), float(v.max()), x)
    v = traj.states[:, 0]
    return OscillationReport("undecided", None, float(v.min()), float(v.max()), x)


# ---------------------------------------------------------------------------
# Experiments

BLOCKABLE = ("gL", "gCa", "gK")


def channel_block(which: str, params: DimensionalParams, s0=(0.0, 0.0, 0.0),
                  budget: Optional[Budget] = None) -> OscillationReport:
    """Set one conductance of the full model to zero and classify."""
    if which not in BLOCKABLE:
        raise ValueError(f"can only block one of {BLOCKABLE}")
    blocked = with_param(params, which, 0.0)
    return classify_oscillation(FULL, blocked, s0, budget or Budget.for_system(FULL))


def _sweep_job(args):
    system, params, handle, value, s0, budget = args
    return classify_oscillation(system, with_param(params, handle, value), s0, budget)


def sweep(system: SystemDef, params, param_handle: str, values: Sequence[float] | tuple,
          samples: Optional[int] = None, s0=None, s0_policy: str = "fixed",
          budget: Optional[Budget] = None, jobs: int = 1):
    """Classify the long-term behaviour at each parameter value.

    ``values`` is either an explicit sequence or a (lo, hi) range sampled at
    ``samples`` evenly spaced points.  With ``s0_policy='continuation'`` each
    run starts from the final state of the previous one, tracing hysteresis.
    """
    system.handle(param_handle)
    if samples is not None:
        if samples < 2:
            raise ValueError("need at least two samples")
        lo, hi = values
        values = np.linspace(lo, hi, samples)
    values = [float(v) for v in values]
    budget = budget or Budget.for_system(system)
    s0 = np.zeros(system.dimension) if s0 is None else np.asarray(s0, dtype=float)
    if s0_policy == "fixed":
        jobs_args = [(system, params, param_handle, v, s0, budget) for v in values]
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as pool:
                reports = list(pool.map(_sweep_job, jobs_args))
        else:
            reports = [_sweep_job(a) for a in jobs_args]
    elif s0_policy in ("continuation", "continuation-of-final-state"):
        reports = []
        x = s0
        for v in values:
            rep = classify_oscillation(system, with_param(params, param_handle, v), x, budget)
            reports.append(rep)
            x = rep.final_state
    else:
        raise ValueError(f"unknown s0 policy {s0_policy!r}")
    return list(zip(values, reports))


def sweep_boundary(system: SystemDef, params, param_handle: str, lo: float, hi: float,
                   s0=None, tol: float = 1e-5, budget: Optional[Budget] = None) -> float:
    """Bisect the parameter at which the classification changes between
    periodic and quiescent; ``lo`` and ``hi`` must bracket the change."""
    budget = budget or Budget.for_system(system)
    s0 = np.zeros(system.dimension) if s0 is None else s0

    def is_periodic(v):
        rep = classify_oscillation(system, with_param(params, param_handle, v), s0, budget)
        if rep.classification == "undecided":
            raise RuntimeError(f"undecided classification at {param_handle}={v}")
        return rep.classification == "periodic"

    plo = is_periodic(lo)
    if is_periodic(hi) == plo:
        raise ValueError("interval does not bracket a change of behaviour")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_periodic(mid) == plo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
