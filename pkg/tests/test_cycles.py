from dataclasses import dataclass

import numpy as np
import pytest
from numba import njit

from smcpace.cycles import (CycleSolution, detect_homoclinic_termination, mesh_for, monodromy,
                            refine_cycle)
from smcpace.integrate import advance, rk4_integrate
from smcpace.model import DIMLESS, DIMLESS_DEFAULT, SystemDef, with_param


@dataclass(frozen=True)
class _NoParams:
    pass


@njit(cache=True)
def _circle_rhs(x, p):
    r2 = x[0] * x[0] + x[1] * x[1]
    return np.array([x[0] - x[1] - x[0] * r2, x[0] + x[1] - x[1] * r2])


@njit(cache=True)
def _circle_jac(x, p):
    a, b = x[0], x[1]
    return np.array([[1 - 3 * a * a - b * b, -1 - 2 * a * b],
                     [1 - 2 * a * b, 1 - a * a - 3 * b * b]])


# Unit-circle limit cycle of period 2 pi; the radial multiplier is exp(-4 pi).
CIRCLE = SystemDef("circle", 2, ("x", "y"), _NoParams, _circle_rhs, _circle_jac, (1.0, 1.0), 1.0)
NOP = np.zeros(0)


def test_manufactured_cycle_period_and_multipliers():
    c = refine_cycle(CIRCLE, NOP, [1.0, 0.0], 6.0, step=0.002)
    assert c.period == pytest.approx(2 * np.pi, abs=1e-8)
    assert c.trivial_error <= 1e-4
    assert c.liouville_error <= 1e-6
    mu = c.nontrivial()
    assert abs(mu[0]) == pytest.approx(np.exp(-4 * np.pi), rel=1e-6)
    assert c.stability == "stable"
    np.testing.assert_allclose(np.hypot(c.samples[:, 0], c.samples[:, 1]), 1.0, atol=1e-8)


def test_monodromy_agrees_with_shooting():
    c = refine_cycle(CIRCLE, NOP, [1.0, 0.0], 6.0)
    M, mults, info = monodromy(c, CIRCLE, NOP)
    assert info["trivial_error"] <= 1e-4 and not info["unreliable"]
    assert np.linalg.det(M) == pytest.approx(np.exp(info["trace_integral"]), rel=1e-6)
    assert np.sort(np.abs(mults))[0] == pytest.approx(np.exp(-4 * np.pi), rel=1e-3)


def test_mesh_grows_with_period():
    m1, n1 = mesh_for(DIMLESS, 5.0)
    m2, n2 = mesh_for(DIMLESS, 500.0)
    assert m1 == 1 and m2 > 1
    assert 5.0 / (m1 * n1) <= 0.05 and 500.0 / (m2 * n2) <= 0.05


def _all_cycles(diag):
    return [c for br in diag.cycles for c in br.points]


def test_accepted_cycles_satisfy_quality_bounds(default_diagram):
    cycles = _all_cycles(default_diagram)
    assert len(cycles) > 20
    for c in cycles:
        assert c.residual <= 1e-8
        assert c.trivial_error <= 1e-4
        assert c.liouville_error <= 1e-6
        assert np.sum(np.abs(c.multipliers - 1.0) <= 1e-4) == 1
        stable = bool(np.all(np.abs(c.nontrivial()) < 1))
        assert (c.stability == "stable") == stable


def test_anchor_returns_after_one_period(default_diagram):
    for br in default_diagram.cycles:
        for c in br.points[:: max(1, len(br.points) // 4)]:
            p = with_param(DIMLESS_DEFAULT, "v1b", c.param)
            # Same RK4 grid as the shooting solve that produced the cycle.
            n = len(c.samples) - 1
            tr = rk4_integrate(DIMLESS, p, c.anchor_state, (0.0, c.period), c.period / n)
            assert np.max(np.abs(tr.states[-1] - c.anchor_state)) <= 1e-8


def _orbit_distance(x, c: CycleSolution, params) -> float:
    """Distance from x to the orbit, as a polyline through a dense resampling."""
    tr = rk4_integrate(DIMLESS, params, c.anchor_state, (0.0, c.period), c.period / 20000)
    a, b = tr.states[:-1], tr.states[1:]
    ab = b - a
    s = np.clip(np.einsum("ij,ij->i", x - a, ab) / np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300),
                0.0, 1.0)
    return float(np.min(np.linalg.norm(a + s[:, None] * ab - x, axis=1)))


def test_multiplier_stability_agrees_with_simulation(default_diagram, slices):
    seen = set()
    for diag in (default_diagram, slices["l2"], slices["l3"]):
        for br in diag.cycles:
            # The point farthest from neutral stability, away from the
            # homoclinic end where the basin boundary hugs the orbit.
            tmin = min(c.period for c in br.points)
            c = max((c for c in br.points if c.period <= 2 * tmin),
                    key=lambda c: abs(c.log_multiplier))
            if abs(c.log_multiplier) < 0.1:
                continue
            p = with_param(diag.params, "v1b", c.param)
            x = advance(DIMLESS, p, c.anchor_state + 1e-3, 10 * c.period)
            d = _orbit_distance(x, c, p)
            if c.stability == "stable":
                assert d < 1e-4
            else:
                assert d > 1e-3
            seen.add(c.stability)
    assert seen == {"stable", "unstable"}


def test_hopf_termination_matches_equilibrium_hopf(default_diagram):
    hb = [e for e in default_diagram.events if e.kind == "HB"][0]
    ends = [e for br in default_diagram.cycles for e in br.events
            if e.kind == "HB" and e.diagnostics.get("termination")]
    assert ends
    assert min(abs(e.param - hb.param) for e in ends) <= 1e-4


def test_period_near_hopf_matches_linear_frequency(default_diagram):
    hb = default_diagram.first("HB")
    br = next(b for b in default_diagram.cycles if b.termination == "hopf")
    last = br.points[-1]
    assert last.period == pytest.approx(2 * np.pi / hb.diagnostics["omega"], rel=1e-2)


def test_blowup_terminations_are_classified(default_diagram, slices):
    br = next(b for b in default_diagram.cycles if b.termination == "period-blowup")
    folds = [e for e in default_diagram.events if e.kind in ("SN", "SNIC")]
    ev = detect_homoclinic_termination(br, DIMLESS, DIMLESS_DEFAULT, folds)
    assert ev.kind == "SNIC"
    l3 = slices["l3"]
    br = next(b for b in l3.cycles if b.termination == "period-blowup")
    ev = detect_homoclinic_termination(br, DIMLESS, l3.params,
                                       [e for e in l3.events if e.kind == "SN"])
    assert ev.kind == "HC"
    assert ev.diagnostics["lambda_u"] > 0 > ev.diagnostics["lambda_s"]
