"""Smooth-muscle pacemaker model: full 3D system, reduced 2D system and the
dimensionless 2D system, with analytic Jacobians and parameter records.

Units of the dimensional model: mV, nM, seconds, coulombs.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Union

import numpy as np
from numba import njit


class ParameterError(ValueError):
    """Bad parameter name, value or parameter file."""


@dataclass(frozen=True)
class DimensionalParams:
    v1: float = -22.5
    v2: float = 25.0
    v4: float = 14.5
    v5: float = 8.0
    v6: float = -15.0
    Ca3: float = 400.0
    Ca4: float = 150.0
    phi_n: float = 2.664
    vL: float = -70.0
    vK: float = -90.0
    vCa: float = 80.0
    C: float = 1.9635e-14
    gL: float = 7.854e-14
    gK: float = 3.1416e-13
    gCa: float = 1.57e-13
    Kd: float = 1.0e3
    BT_buf: float = 1.0e5
    alpha: float = 7.9976e15
    kCa: float = 1.3567537e2

    def validate(self) -> None:
        if min(self.gL, self.gK, self.gCa) < 0:
            raise ParameterError("conductances must be non-negative")
        if self.C <= 0 or self.Kd <= 0 or self.BT_buf < 0:
            raise ParameterError("need C > 0, Kd > 0, BT_buf >= 0")
        if self.Ca4 == 0 or self.v2 == 0 or self.v4 == 0:
            raise ParameterError("Ca4, v2 and v4 must be non-zero")

    @property
    def v3_star(self) -> float:
        """Upper bound of v3(Ca_i); the value pinned by the reduced model."""
        return self.v6 + self.v5 / 2.0


@dataclass(frozen=True)
class DimlessParams:
    v1b: float = -0.28125
    v2b: float = 0.3125
    v3b: float = -0.1375
    v4b: float = 0.18125
    vLb: float = -0.875
    vKb: float = -1.125
    gLb: float = 0.25
    gKb: float = 1.0
    gCab: float = 1.57 / 3.1416
    psi: float = 0.0625 * 2.664

    def validate(self) -> None:
        if self.psi <= 0:
            raise ParameterError("psi must be positive")
        if self.v2b == 0 or self.v4b == 0:
            raise ParameterError("v2b and v4b must be non-zero")


Params = Union[DimensionalParams, DimlessParams]

TABLE1 = DimensionalParams()

# Values as printed in the published table (v4b sign and v3b rounding differ
# from the transform of TABLE1); kept for comparison runs.
TABLE2_PRINTED = DimlessParams(
    v1b=-0.2813, v2b=0.3125, v3b=-0.1380, v4b=-0.1812, vLb=-0.875,
    vKb=-1.125, gLb=0.25, gKb=1.0, gCab=0.4997, psi=0.1665,
)


def nondimensionalise(p: DimensionalParams) -> DimlessParams:
    """Rescale with Q_v = vCa and Q_t = C/gK."""
    if p.gK == 0:
        raise ParameterError("cannot nondimensionalise with gK = 0")
    if p.vCa == 0:
        raise ParameterError("cannot nondimensionalise with vCa = 0")
    qv = p.vCa
    return DimlessParams(
        v1b=p.v1 / qv,
        v2b=p.v2 / qv,
        v3b=p.v3_star / qv,
        v4b=p.v4 / qv,
        vLb=p.vL / qv,
        vKb=p.vK / qv,
        gLb=p.gL / p.gK,
        gKb=1.0,
        gCab=p.gCa / p.gK,
        psi=p.C * p.phi_n / p.gK,
    )


def voltage_scale(p: DimensionalParams) -> float:
    return p.vCa


def time_scale(p: DimensionalParams) -> float:
    return p.C / p.gK


DIMLESS_DEFAULT = DimlessParams()


# ---------------------------------------------------------------------------
# Auxiliary functions (vectorised over v / Ca_i)

def m_inf(v, p: DimensionalParams):
    return 0.5 * (1.0 + np.tanh((v - p.v1) / p.v2))


def v3_of_Ca(Ca_i, p: DimensionalParams):
    return -0.5 * p.v5 * np.tanh((Ca_i - p.Ca3) / p.Ca4) + p.v6


def n_inf_full(v, Ca_i, p: DimensionalParams):
    return 0.5 * (1.0 + np.tanh((v - v3_of_Ca(Ca_i, p)) / p.v4))


def lambda_n_full(v, Ca_i, p: DimensionalParams):
    return p.phi_n * np.cosh((v - v3_of_Ca(Ca_i, p)) / (2.0 * p.v4))


def rho(Ca_i, p: DimensionalParams):
    s = (p.Kd + Ca_i) ** 2
    return s / (s + p.Kd * p.BT_buf)


# ---------------------------------------------------------------------------
# Compiled right-hand sides and Jacobians.  Parameter vectors follow the
# field order of the dataclasses above.

@njit(cache=True)
def _full_rhs(x, p):
    v, n, ca = x[0], x[1], x[2]
    v1, v2, v4, v5, v6, ca3, ca4, phi = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]
    vl, vk, vca, c, gl, gk, gca, kd, bt, alpha, kca = (
        p[8], p[9], p[10], p[11], p[12], p[13], p[14], p[15], p[16], p[17], p[18])
    m = 0.5 * (1.0 + math.tanh((v - v1) / v2))
    v3 = -0.5 * v5 * math.tanh((ca - ca3) / ca4) + v6
    u = (v - v3) / v4
    ninf = 0.5 * (1.0 + math.tanh(u))
    lam = phi * math.cosh(0.5 * u)
    s = (kd + ca) ** 2
    r = s / (s + kd * bt)
    out = np.empty(3)
    out[0] = (-gl * (v - vl) - gk * n * (v - vk) - gca * m * (v - vca)) / c
    out[1] = lam * (ninf - n)
    out[2] = (-alpha * gca * m * (v - vca) - kca * ca) * r
    return out


@njit(cache=True)
def _full_jac(x, p):
    v, n, ca = x[0], x[1], x[2]
    v1, v2, v4, v5, v6, ca3, ca4, phi = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]
    vl, vk, vca, c, gl, gk, gca, kd, bt, alpha, kca = (
        p[8], p[9], p[10], p[11], p[12], p[13], p[14], p[15], p[16], p[17], p[18])
    tm = math.tanh((v - v1) / v2)
    m = 0.5 * (1.0 + tm)
    dm = 0.5 * (1.0 - tm * tm) / v2
    tc = math.tanh((ca - ca3) / ca4)
    v3 = -0.5 * v5 * tc + v6
    dv3 = -0.5 * v5 * (1.0 - tc * tc) / ca4
    u = (v - v3) / v4
    tu = math.tanh(u)
    ninf = 0.5 * (1.0 + tu)
    dninf = 0.5 * (1.0 - tu * tu) / v4
    lam = phi * math.cosh(0.5 * u)
    dlam = phi * math.sinh(0.5 * u) / (2.0 * v4)
    s = (kd + ca) ** 2
    den = s + kd * bt
    r = s / den
    dr = 2.0 * (kd + ca) * kd * bt / (den * den)
    cur = -alpha * gca * m * (v - vca) - kca * ca
    jac = np.zeros((3, 3))
    jac[0, 0] = (-gl - gk * n - gca * m - gca * dm * (v - vca)) / c
    jac[0, 1] = -gk * (v - vk) / c
    jac[1, 0] = dlam * (ninf - n) + lam * dninf
    jac[1, 1] = -lam
    jac[1, 2] = -dv3 * (dlam * (ninf - n) + lam * dninf)
    jac[2, 0] = -alpha * gca * (m + dm * (v - vca)) * r
    jac[2, 2] = -kca * r + cur * dr
    return jac


@njit(cache=True)
def _reduced_rhs(x, p):
    v, n = x[0], x[1]
    v1, v2, v4, v5, v6, phi = p[0], p[1], p[2], p[3], p[4], p[7]
    vl, vk, vca, c, gl, gk, gca = p[8], p[9], p[10], p[11], p[12], p[13], p[14]
    m = 0.5 * (1.0 + math.tanh((v - v1) / v2))
    u = (v - (v6 + 0.5 * v5)) / v4
    out = np.empty(2)
    out[0] = (-gl * (v - vl) - gk * n * (v - vk) - gca * m * (v - vca)) / c
    out[1] = phi * math.cosh(0.5 * u) * (0.5 * (1.0 + math.tanh(u)) - n)
    return out


@njit(cache=True)
def _reduced_jac(x, p):
    v, n = x[0], x[1]
    v1, v2, v4, v5, v6, phi = p[0], p[1], p[2], p[3], p[4], p[7]
    vl, vk, vca, c, gl, gk, gca = p[8], p[9], p[10], p[11], p[12], p[13], p[14]
    tm = math.tanh((v - v1) / v2)
    m = 0.5 * (1.0 + tm)
    dm = 0.5 * (1.0 - tm * tm) / v2
    u = (v - (v6 + 0.5 * v5)) / v4
    tu = math.tanh(u)
    lam = phi * math.cosh(0.5 * u)
    jac = np.empty((2, 2))
    jac[0, 0] = (-gl - gk * n - gca * m - gca * dm * (v - vca)) / c
    jac[0, 1] = -gk * (v - vk) / c
    jac[1, 0] = (phi * math.sinh(0.5 * u) / (2.0 * v4) * (0.5 * (1.0 + tu) - n)
                 + lam * 0.5 * (1.0 - tu * tu) / v4)
    jac[1, 1] = -lam
    return jac


@njit(cache=True)
def _dimless_rhs(x, p):
    V, N = x[0], x[1]
    v1, v2, v3, v4, vl, vk, gl, gk, gca, psi = (
        p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9])
    m = 0.5 * (1.0 + math.tanh((V - v1) / v2))
    u = (V - v3) / v4
    out = np.empty(2)
    out[0] = -gl * (V - vl) - gk * N * (V - vk) - gca * m * (V - 1.0)
    out[1] = psi * math.cosh(0.5 * u) * (0.5 * (1.0 + math.tanh(u)) - N)
    return out


@njit(cache=True)
def _dimless_jac(x, p):
    V, N = x[0], x[1]
    v1, v2, v3, v4, vl, vk, gl, gk, gca, psi = (
        p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9])
    tm = math.tanh((V - v1) / v2)
    m = 0.5 * (1.0 + tm)
    dm = 0.5 * (1.0 - tm * tm) / v2
    u = (V - v3) / v4
    tu = math.tanh(u)
    lam = math.cosh(0.5 * u)
    jac = np.empty((2, 2))
    jac[0, 0] = -gl - gk * N - gca * m - gca * dm * (V - 1.0)
    jac[0, 1] = -gk * (V - vk)
    jac[1, 0] = psi * (math.sinh(0.5 * u) / (2.0 * v4) * (0.5 * (1.0 + tu) - N)
                       + lam * 0.5 * (1.0 - tu * tu) / v4)
    jac[1, 1] = -psi * lam
    return jac


# ---------------------------------------------------------------------------
# System definitions

@dataclass(frozen=True)
class SystemDef:
    """One model variant, generic enough for the integrators and continuation
    engines: compiled rhs/jacobian over (state, parameter vector)."""

    name: str
    dimension: int
    state_names: tuple
    params_type: type
    rhs_kernel: Callable
    jac_kernel: Callable
    state_scale: tuple
    # Model-clock duration of one dimensionless time unit (Q_t).
    time_unit: float
    # -1 for the time-reversed flow.  The kernels stay those of the forward
    # flow; rhs, jacobian and the integrators apply the sign.
    time_sign: float = 1.0

    @property
    def param_names(self) -> tuple:
        return tuple(f.name for f in fields(self.params_type))

    def handle(self, name: str) -> int:
        try:
            return self.param_names.index(name)
        except ValueError:
            raise ParameterError(
                f"unknown parameter {name!r} for model {self.name}") from None

    def default_params(self) -> Params:
        return DIMLESS_DEFAULT if self.params_type is DimlessParams else TABLE1

    def pvec(self, params) -> np.ndarray:
        if isinstance(params, np.ndarray):
            return params.astype(float)
        if not isinstance(params, self.params_type):
            raise ParameterError(
                f"model {self.name} expects {self.params_type.__name__}")
        return np.array(dataclasses.astuple(params), dtype=float)

    def params_from(self, vec) -> Params:
        return self.params_type(*[float(x) for x in vec])

    def param_scale(self, name: str) -> float:
        """Typical magnitude of a parameter, for arclength scaling."""
        self.handle(name)
        if self.params_type is DimlessParams:
            return 1.0
        if name.startswith("v"):
            return 80.0
        return abs(getattr(TABLE1, name)) or 1.0

    def quasi_steady(self, v: float, params) -> np.ndarray:
        """State with first component ``v`` and every other component on its
        own nullcline; equilibria are the zeros of rhs(...)[0] along it."""
        if self.name == "dimless":
            p = params
            n = 0.5 * (1.0 + math.tanh((v - p.v3b) / p.v4b))
            return np.array([v, n])
        p = params
        if self.name == "reduced":
            return np.array([v, 0.5 * (1.0 + math.tanh((v - p.v3_star) / p.v4))])
        ca = -p.alpha * p.gCa * float(m_inf(v, p)) * (v - p.vCa) / p.kCa if p.kCa else 0.0
        return np.array([v, float(n_inf_full(v, ca, p)), ca])

    def voltage_window(self, params) -> tuple:
        """Range of the first component containing every equilibrium."""
        if self.name == "dimless":
            p = params
            return (min(p.vKb, p.vLb, 0.0) - 0.05, 1.05)
        p = params
        return (min(p.vK, p.vL, p.vCa) - 5.0, max(p.vK, p.vL, p.vCa) + 5.0)

    def rhs(self, state, params) -> np.ndarray:
        return self.time_sign * self.rhs_kernel(np.asarray(state, dtype=float),
                                                self.pvec(params))

    def jacobian(self, state, params) -> np.ndarray:
        return self.time_sign * self.jac_kernel(np.asarray(state, dtype=float),
                                                self.pvec(params))


FULL = SystemDef("full", 3, ("v", "n", "Ca_i"), DimensionalParams,
                 _full_rhs, _full_jac, (80.0, 1.0, 1000.0), 0.0625)
REDUCED = SystemDef("reduced", 2, ("v", "n"), DimensionalParams,
                    _reduced_rhs, _reduced_jac, (80.0, 1.0), 0.0625)
DIMLESS = SystemDef("dimless", 2, ("V", "N"), DimlessParams,
                    _dimless_rhs, _dimless_jac, (1.0, 1.0), 1.0)

SYSTEMS = {s.name: s for s in (FULL, REDUCED, DIMLESS)}


def get_system(name: str) -> SystemDef:
    try:
        return SYSTEMS[name]
    except KeyError:
        raise ParameterError(f"unknown model {name!r}") from None


def rhs_full(state, p: DimensionalParams = TABLE1) -> np.ndarray:
    return FULL.rhs(state, p)


def rhs_reduced(state, p: DimensionalParams = TABLE1) -> np.ndarray:
    return REDUCED.rhs(state, p)


def rhs_dimless(state, p: DimlessParams = DIMLESS_DEFAULT) -> np.ndarray:
    return DIMLESS.rhs(state, p)


def jacobian_dimless(state, p: DimlessParams = DIMLESS_DEFAULT) -> np.ndarray:
    return DIMLESS.jacobian(state, p)


def with_param(params: Params, name: str, value: float) -> Params:
    if name not in {f.name for f in fields(params)}:
        raise ParameterError(f"unknown parameter {name!r}")
    return dataclasses.replace(params, **{name: float(value)})


def apply_overrides(params: Params, overrides: dict) -> Params:
    for key, val in overrides.items():
        params = with_param(params, key, val)
    return params


# ---------------------------------------------------------------------------
# Parameter files: ``name = decimal`` per line, ``#`` comments.

def parse_param_text(text: str, base: Params) -> Params:
    known = {f.name for f in fields(base)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected 'name = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ParameterError(f"line {lineno}: unknown parameter {key!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise ParameterError(f"line {lineno}: bad number {val!r}") from None
    return dataclasses.replace(base, **values)


def load_params(path: Union[str, Path], base: Params) -> Params:
    return parse_param_text(Path(path).read_text(), base)


def format_params(params: Params) -> str:
    return "".join(f"{f.name} = {getattr(params, f.name)!r}\n" for f in fields(params))
