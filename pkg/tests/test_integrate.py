from dataclasses import dataclass

import numpy as np
import pytest
from numba import njit

from smcpace.cycles import reversed_system
from smcpace.integrate import (BlowUpError, Budget, advance, classify_oscillation,
                               rk4_integrate, sweep, upward_crossings)
from smcpace.model import (DIMLESS, DIMLESS_DEFAULT, FULL, REDUCED, TABLE1, SystemDef,
                           nondimensionalise, with_param)


@dataclass(frozen=True)
class _NoParams:
    pass


@njit(cache=True)
def _osc_rhs(x, p):
    return np.array([x[1], -x[0]])


@njit(cache=True)
def _osc_jac(x, p):
    return np.array([[0.0, 1.0], [-1.0, 0.0]])


@njit(cache=True)
def _blow_rhs(x, p):
    return np.array([x[0] * x[0]])


@njit(cache=True)
def _blow_jac(x, p):
    return np.array([[2.0 * x[0]]])


OSC = SystemDef("oscillator", 2, ("x", "y"), _NoParams, _osc_rhs, _osc_jac, (1.0, 1.0), 1.0)
BLOW = SystemDef("blowup", 1, ("x",), _NoParams, _blow_rhs, _blow_jac, (1.0,), 1.0)
NOP = np.zeros(0)
A = np.array([[0.0, 1.0], [-1.0, 0.0]])


def rk4_matrix(hA):
    """Exact one-step map of classical RK4 on a linear system."""
    eye = np.eye(len(hA))
    return eye + hA + hA @ hA / 2 + hA @ hA @ hA / 6 + hA @ hA @ hA @ hA / 24


def test_trajectory_grid_is_uniform():
    tr = rk4_integrate(OSC, NOP, [1.0, 0.0], (0.0, 3.0), 0.1)
    assert len(tr.times) == len(tr.states)
    assert np.allclose(np.diff(tr.times), 0.1, rtol=0, atol=1e-12)
    assert tr.times[-1] == 3.0


def test_final_step_is_shortened_to_hit_the_end_time():
    tr = rk4_integrate(OSC, NOP, [1.0, 0.0], (0.0, 1.03), 0.1)
    assert tr.times[-1] == 1.03
    assert tr.times[-1] - tr.times[-2] == pytest.approx(0.03)


def test_rk4_fourth_order_convergence():
    T = 10.0
    exact = np.array([np.cos(T), -np.sin(T)])
    errs = [np.max(np.abs(advance(OSC, NOP, [1.0, 0.0], T, h) - exact)) for h in (0.1, 0.05)]
    assert errs[0] / errs[1] == pytest.approx(16.0, abs=2.0)


@pytest.mark.parametrize("direction", [1, -1])
def test_rk4_matches_its_linear_one_step_map(direction):
    # Forward and time-reversed integration of a linear system reproduce the
    # RK4 polynomial map to round-off.
    h, n = 0.05, 200
    system = OSC if direction > 0 else reversed_system(OSC)
    x = advance(system, NOP, [1.0, 0.5], n * h, h)
    expect = np.linalg.matrix_power(rk4_matrix(direction * h * A), n) @ [1.0, 0.5]
    assert np.max(np.abs(x - expect)) <= 1e-12


def test_blowup_is_reported():
    with pytest.raises(BlowUpError) as info:
        rk4_integrate(BLOW, NOP, [1.0], (0.0, 5.0), 0.05)
    assert 0.9 < info.value.time <= 5.0
    with pytest.raises(BlowUpError):
        advance(BLOW, NOP, [1.0], 5.0, 0.05)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        rk4_integrate(OSC, NOP, [1.0, 0.0], (0.0, 1.0), 0.0)
    with pytest.raises(ValueError):
        rk4_integrate(OSC, NOP, [1.0, 0.0], (1.0, 0.0), 0.1)


def test_upward_crossings_of_a_sine():
    t = np.linspace(0, 4 * np.pi, 4001)
    ups = upward_crossings(t, np.sin(t), 0.0)
    np.testing.assert_allclose(ups, [2 * np.pi], atol=1e-6)


def test_reduced_and_dimless_trajectories_agree_after_rescaling():
    p = TABLE1
    qv, qt = p.vCa, p.C / p.gK
    d = nondimensionalise(p)
    h = 0.05
    dim = rk4_integrate(REDUCED, p, [-30.0, 0.1], (0.0, 200 * h * qt), h * qt)
    nd = rk4_integrate(DIMLESS, d, [-30.0 / qv, 0.1], (0.0, 200 * h), h)
    assert len(dim.times) == len(nd.times)
    np.testing.assert_allclose(dim.times / qt, nd.times, rtol=1e-12)
    rel = np.abs(dim.states[:, 0] / qv - nd.states[:, 0]) / np.maximum(np.abs(nd.states[:, 0]), 1e-3)
    assert np.max(rel) <= 1e-6
    assert np.max(np.abs(dim.states[:, 1] - nd.states[:, 1])) <= 1e-6


def test_gating_and_calcium_stay_in_their_invariant_ranges():
    tr = rk4_integrate(FULL, TABLE1, [0.0, 0.0, 0.0], (0.0, 2000.0), 0.05 * FULL.time_unit)
    assert tr.states[:, 1].min() >= 0.0 and tr.states[:, 1].max() <= 1.0
    assert tr.states[:, 2].min() >= 0.0
    tr = rk4_integrate(DIMLESS, DIMLESS_DEFAULT, [0.0, 0.0], (0.0, 500.0))
    assert tr.states[:, 1].min() >= 0.0 and tr.states[:, 1].max() <= 1.0


def test_classification_of_default_dimless_model():
    rep = classify_oscillation(DIMLESS, DIMLESS_DEFAULT, [0.0, 0.0])
    assert rep.classification == "periodic"
    assert rep.period > 0 and rep.v_min <= rep.v_max
    # Self-pinned regression value.
    assert rep.period == pytest.approx(28.49099, abs=1e-3)
    again = classify_oscillation(DIMLESS, DIMLESS_DEFAULT, [0.0, 0.0])
    assert again.as_dict() == rep.as_dict()


def test_classification_quiescent_and_undecided():
    rep = classify_oscillation(DIMLESS, with_param(DIMLESS_DEFAULT, "v1b", -0.1), [0.0, 0.0])
    assert rep.classification == "quiescent" and rep.period is None
    # A budget far too short to see five crossings cannot decide.
    short = Budget(transient=0.0, observe=10.0, extensions=0)
    rep = classify_oscillation(DIMLESS, DIMLESS_DEFAULT, [0.0, 0.0], short)
    assert rep.classification == "undecided"


def test_sweep_policies_and_parallel_ordering():
    values = [-0.4, -0.28, -0.1]
    fixed = sweep(DIMLESS, DIMLESS_DEFAULT, "v1b", values)
    assert [v for v, _ in fixed] == values
    assert [r.classification for _, r in fixed] == ["quiescent", "periodic", "quiescent"]
    cont = sweep(DIMLESS, DIMLESS_DEFAULT, "v1b", values, s0_policy="continuation")
    assert [r.classification for _, r in cont] == ["quiescent", "periodic", "quiescent"]
    par = sweep(DIMLESS, DIMLESS_DEFAULT, "v1b", values, jobs=2)
    assert [r.as_dict() for _, r in par] == [r.as_dict() for _, r in fixed]
    ranged = sweep(DIMLESS, DIMLESS_DEFAULT, "v1b", (-0.4, -0.1), samples=3)
    assert [v for v, _ in ranged] == pytest.approx([-0.4, -0.25, -0.1])
    with pytest.raises(ValueError):
        sweep(DIMLESS, DIMLESS_DEFAULT, "v1b", values, s0_policy="bogus")


def test_full_and_reduced_classifications_agree():
    vs = np.linspace(-40.0, -10.0, 20)
    full = [r.classification for _, r in sweep(FULL, TABLE1, "v1", vs)]
    red = [r.classification for _, r in sweep(REDUCED, TABLE1, "v1", vs)]
    assert "undecided" not in full + red
    # The Hopf onset of the full model sits a few mV lower, so samples
    # between the two onsets may differ; the band covers both series.
    transitions = [i for i in range(1, len(vs))
                   if red[i] != red[i - 1] or full[i] != full[i - 1]]
    for i, (a, b) in enumerate(zip(full, red)):
        if a != b:
            assert any(abs(i - j) <= 2 for j in transitions), (vs[i], a, b)
