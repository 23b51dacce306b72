import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import fsolve

import smcpace.equilibria as eq
from smcpace.equilibria import (NoConvergence, classify_point, continue_equilibrium, eigenvalues,
                                find_equilibria, newton_equilibrium, stability_label)
from smcpace.integrate import advance
from smcpace.model import DIMLESS, DIMLESS_DEFAULT, FULL, TABLE1, with_param

entries = st.floats(-5.0, 5.0, allow_nan=False)


def _companion_eigs(J):
    """Oracle: roots of the characteristic polynomial via the companion
    matrix, with coefficients from trace, principal minors and det."""
    minors = sum(np.linalg.det(J[np.ix_(k, k)]) for k in ([0, 1], [0, 2], [1, 2]))
    return np.roots([1.0, -np.trace(J), minors, -np.linalg.det(J)])


def test_closed_form_eigenvalues_match_companion_oracle_3x3():
    rng = np.random.default_rng(7)
    for _ in range(500):
        J = rng.uniform(-5, 5, (3, 3))
        ours, ref = eigenvalues(J), _companion_eigs(J)
        for lam in ours:
            assert np.min(np.abs(ref - lam)) <= 1e-9
        for lam in ref:
            assert np.min(np.abs(ours - lam)) <= 1e-9


@settings(max_examples=300, deadline=None)
@given(st.lists(entries, min_size=9, max_size=9))
def test_closed_form_eigenvalues_property_3x3(vals):
    # Any matrix, including clustered spectra where the roots themselves are
    # ill conditioned: the characteristic polynomial must be reproduced.
    J = np.array(vals).reshape(3, 3)
    ours = eigenvalues(J)
    ref = _companion_eigs(J)
    scale = 1 + np.abs(J).max() ** 3
    np.testing.assert_allclose(np.poly(ours).real, np.poly(ref).real, atol=1e-8 * scale)


@settings(max_examples=200, deadline=None)
@given(st.lists(entries, min_size=4, max_size=4))
def test_closed_form_eigenvalues_match_numpy_2x2(vals):
    J = np.array(vals).reshape(2, 2)
    np.testing.assert_allclose(np.sort_complex(eigenvalues(J)),
                               np.sort_complex(np.linalg.eigvals(J)), atol=1e-9)


def test_stability_labels():
    assert stability_label(np.array([-1, -2], complex)) == "stable-node"
    assert stability_label(np.array([-1 + 1j, -1 - 1j])) == "stable-focus"
    assert stability_label(np.array([1 + 1j, 1 - 1j])) == "unstable-focus"
    assert stability_label(np.array([1, 2], complex)) == "unstable-node"
    assert stability_label(np.array([1, -2], complex)) == "saddle"
    assert stability_label(np.array([0, -2], complex)) == "non-hyperbolic"


def test_test_functions_vanish_at_their_bifurcations():
    hopf = np.array([[0.5, -2.0], [1.0, -0.5]])
    assert eq.test_functions(hopf)["hopf"] == 0.0
    fold = np.array([[1.0, 2.0], [0.5, 1.0]])
    assert eq.test_functions(fold)["fold"] == pytest.approx(0.0, abs=1e-15)
    # In 3D the bialternate determinant is the product of pairwise sums.
    J = np.array([[0.0, -3.0, 0.1], [3.0, 0.0, 0.2], [0.0, 0.4, -1.0]])
    lam = np.linalg.eigvals(J)
    prod = np.prod([lam[i] + lam[j] for i in range(3) for j in range(i + 1, 3)]).real
    assert eq.bialternate_det(J) == pytest.approx(prod, abs=1e-12)


def _all_roots_by_fsolve(system, params, n=60):
    """Independent oracle: Newton-type solves from a grid of raw starts."""
    lo, hi = system.voltage_window(params)
    roots = []
    for v in np.linspace(lo, hi, n):
        for nn in (0.05, 0.5, 0.95):
            x, info, ier, _ = fsolve(lambda x: system.rhs(x, params), [v, nn], full_output=True,
                                     xtol=1e-13)
            if ier == 1 and np.max(np.abs(system.rhs(x, params))) < 1e-12:
                if all(np.max(np.abs(x - r)) > 1e-6 for r in roots):
                    roots.append(x)
    return sorted(roots, key=lambda r: r[0])


@pytest.mark.parametrize("v1b", [-0.6, -0.22, -0.1])
def test_find_equilibria_matches_fsolve_oracle(v1b):
    params = with_param(DIMLESS_DEFAULT, "v1b", v1b)
    ours = find_equilibria(DIMLESS, params)
    ref = _all_roots_by_fsolve(DIMLESS, params)
    assert len(ours) == len(ref)
    for a, b in zip(ours, ref):
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_newton_records_history_and_reports_failure():
    hist = []
    x = newton_equilibrium(DIMLESS, DIMLESS_DEFAULT, [-0.3, 0.1], history=hist)
    assert hist[-1] <= 1e-12 and len(hist) > 1
    assert np.max(np.abs(DIMLESS.rhs(x, DIMLESS_DEFAULT))) <= 1e-11
    with pytest.raises(NoConvergence):
        newton_equilibrium(DIMLESS, DIMLESS_DEFAULT, [-0.3, 0.1], maxiter=0)


def _fold_oracle(guess):
    def F(u):
        p = with_param(DIMLESS_DEFAULT, "v1b", u[2])
        return [*DIMLESS.rhs(u[:2], p), np.linalg.det(DIMLESS.jacobian(u[:2], p))]
    return fsolve(F, guess, xtol=1e-13)


def _hopf_oracle(guess):
    def F(u):
        p = with_param(DIMLESS_DEFAULT, "v1b", u[2])
        return [*DIMLESS.rhs(u[:2], p), np.trace(DIMLESS.jacobian(u[:2], p))]
    return fsolve(F, guess, xtol=1e-13)


def test_folds_and_hopf_match_independent_solves(default_diagram):
    events = default_diagram.ordered_events()
    folds = [e for e in events if e.kind in ("SN", "SNIC")]
    hopfs = [e for e in events if e.kind == "HB"]
    assert len(folds) == 2 and len(hopfs) == 1
    for e in folds:
        ref = _fold_oracle([*e.state, e.param])
        assert e.param == pytest.approx(ref[2], abs=1e-9)
        np.testing.assert_allclose(e.state, ref[:2], atol=1e-8)
    h = hopfs[0]
    ref = _hopf_oracle([*h.state, h.param])
    assert h.param == pytest.approx(ref[2], abs=1e-9)
    J = DIMLESS.jacobian(h.state, with_param(DIMLESS_DEFAULT, "v1b", h.param))
    assert abs(np.trace(J)) <= 1e-8 and np.linalg.det(J) > 0
    assert h.diagnostics["omega"] == pytest.approx(np.sqrt(np.linalg.det(J)), rel=1e-6)


def test_branch_points_satisfy_residual_and_eigen_consistency(default_diagram):
    for br in default_diagram.equilibria:
        for pt in br.points:
            p = with_param(DIMLESS_DEFAULT, "v1b", pt.param)
            assert np.max(np.abs(DIMLESS.rhs(pt.state, p))) <= 1e-11
            J = DIMLESS.jacobian(pt.state, p)
            np.testing.assert_allclose(np.sort_complex(pt.eigenvalues),
                                       np.sort_complex(np.linalg.eigvals(J)), atol=1e-10)
            assert pt.stability == stability_label(pt.eigenvalues)


def test_every_test_function_sign_change_has_an_event(default_diagram):
    # A fold is a turning point, so its parameter can lie outside the
    # parameter interval of the bracketing points; match in (state, param).
    def near(e, a, b):
        ua, ub = np.append(a.state, a.param), np.append(b.state, b.param)
        ue = np.append(e.state, e.param)
        return np.max(np.abs(ue - ua)) <= 2 * np.max(np.abs(ub - ua)) + 1e-9

    for br in default_diagram.equilibria:
        for key, kinds in (("fold", ("SN", "BT")), ("hopf", ("HB", "BT"))):
            vals = [pt.testfns[key] for pt in br.points]
            for i in range(1, len(vals)):
                if np.sign(vals[i]) == np.sign(vals[i - 1]) or vals[i - 1] == 0:
                    continue
                a, b = br.points[i - 1], br.points[i]
                hit = [e for e in br.events if e.kind in kinds and near(e, a, b)]
                if key == "hopf" and not hit:
                    # A neutral saddle changes the sign without a Hopf point.
                    assert all(np.all(np.abs(pt.eigenvalues.imag) == 0) for pt in (a, b))
                else:
                    assert hit, (key, a.param, b.param)


def test_stable_points_attract_nearby_trajectories(default_diagram):
    checked = 0
    for br in default_diagram.equilibria:
        for pt in br.points[:: max(1, len(br.points) // 5)]:
            if not pt.stability.startswith("stable"):
                continue
            p = with_param(DIMLESS_DEFAULT, "v1b", pt.param)
            re = np.max(pt.eigenvalues.real)
            if re > -1e-3:
                continue
            x = advance(DIMLESS, p, pt.state + 1e-4, min(20.0 / -re, 5000.0))
            assert np.max(np.abs(x - pt.state)) < 1e-5
            checked += 1
    assert checked >= 3


def test_fold_events_come_in_pairs_on_each_slice(slices):
    for name, d in slices.items():
        for br in d.equilibria:
            n_start = len(find_equilibria(DIMLESS, with_param(d.params, "v1b", d.limits[0])))
            n_end = len(find_equilibria(DIMLESS, with_param(d.params, "v1b", d.limits[1])))
            if n_start == n_end:
                folds = [e for e in br.events if e.kind in ("SN", "SNIC")]
                assert len(folds) % 2 == 0, name


def test_continuation_from_a_fold_point_is_nudged(default_diagram):
    fold = default_diagram.first("SN")
    p = with_param(DIMLESS_DEFAULT, "v1b", fold.param)
    br = continue_equilibrium(DIMLESS, p, "v1b", fold.state, direction=-1,
                              limits=(fold.param - 0.05, fold.param + 0.05), max_steps=50)
    assert len(br.points) > 10
    assert br.points[0].param == pytest.approx(fold.param, abs=2e-6)


def test_full_model_equilibria_and_labels():
    xs = find_equilibria(FULL, TABLE1)
    assert xs
    for x in xs:
        assert np.max(np.abs(FULL.rhs(x, TABLE1) * eq.residual_scale(FULL))) <= 1e-10
        eigs, label = classify_point(FULL.jacobian(x, TABLE1))
        assert label == stability_label(eigs)
