"""First Lyapunov coefficient at a Hopf point.

Second and third derivatives of the vector field come from central
differences of the analytic Jacobian (one Richardson refinement), so the model
code only has to supply first derivatives.
"""
from __future__ import annotations

import itertools
from typing import Callable

import numpy as np

DEGENERATE_L1 = 1e-6


def _richardson(fun: Callable[[float], np.ndarray], h: float) -> np.ndarray:
    return (4.0 * fun(0.5 * h) - fun(h)) / 3.0


def _B_real(jac: Callable, x, a, b, h):
    def d(hh):
        return (jac(x + hh * a) - jac(x - hh * a)) @ b / (2.0 * hh)
    return _richardson(d, h)


def _C_real(jac: Callable, x, a, b, c, h):
    def d(hh):
        return (jac(x + hh * (a + b)) - jac(x + hh * (a - b))
                - jac(x - hh * (a - b)) + jac(x - hh * (a + b))) @ c / (4.0 * hh * hh)
    return _richardson(d, h)


def _split(v):
    return ((np.real(v), 1.0), (np.imag(v), 1j))


def multilinear_B(jac, x, u, v, h=1e-4) -> np.ndarray:
    """B(u, v) = D^2 f(x)[u, v] for complex u, v (bilinear, not Hermitian)."""
    out = np.zeros(len(x), dtype=complex)
    for (ur, cu), (vr, cv) in itertools.product(_split(u), _split(v)):
        if np.any(ur) and np.any(vr):
            out += cu * cv * _B_real(jac, x, ur, vr, h)
    return out


def multilinear_C(jac, x, u, v, w, h=1e-4) -> np.ndarray:
    out = np.zeros(len(x), dtype=complex)
    for (ur, cu), (vr, cv), (wr, cw) in itertools.product(_split(u), _split(v), _split(w)):
        if np.any(ur) and np.any(vr) and np.any(wr):
            out += cu * cv * cw * _C_real(jac, x, ur, vr, wr, h)
    return out


def hopf_vectors(A: np.ndarray):
    """Critical eigenvector q (A q = i w q, |q| = 1), adjoint p with
    <p, q> = conj(p).q = 1, and w > 0."""
    lam, vecs = np.linalg.eig(A)
    k = int(np.argmax(np.imag(lam)))
    omega = float(np.imag(lam[k]))
    if omega <= 0:
        raise ValueError("no eigenvalue with positive imaginary part")
    q = vecs[:, k] / np.linalg.norm(vecs[:, k])
    lamT, vecsT = np.linalg.eig(A.T)
    j = int(np.argmin(np.abs(lamT + 1j * omega)))
    p = vecsT[:, j]
    p = p / np.conj(np.conj(p) @ q)
    return q, p, omega


def lyapunov_coeff_1(jac: Callable, x: np.ndarray, h: float = 1e-4) -> float:
    """First Lyapunov coefficient of x' = f(x) at a Hopf equilibrium x.

    ``jac`` maps a state to the Jacobian of f.  Negative values mean a
    supercritical Hopf bifurcation.
    """
    x = np.asarray(x, dtype=float)
    A = jac(x)
    q, p, omega = hopf_vectors(A)
    qb = np.conj(q)
    n = len(x)

    def dot(a, b):
        return np.conj(a) @ b

    b_qqb = multilinear_B(jac, x, q, qb, h)
    b_qq = multilinear_B(jac, x, q, q, h)
    s1 = np.linalg.solve(A, b_qqb)
    s2 = np.linalg.solve(2j * omega * np.eye(n) - A, b_qq)
    val = (dot(p, multilinear_C(jac, x, q, q, qb, h))
           - 2.0 * dot(p, multilinear_B(jac, x, q, s1, h))
           + dot(p, multilinear_B(jac, x, qb, s2, h)))
    return float(np.real(val)) / (2.0 * omega)


def scaled_jacobian(system, params, scale=None) -> Callable:
    """Jacobian of the system in coordinates y = x / scale (keeps finite
    difference steps comparable across components)."""
    p = system.pvec(params)
    s = np.asarray(system.state_scale if scale is None else scale, dtype=float)

    def jac(y):
        return system.jac_kernel(y * s, p) * s[None, :] / s[:, None]
    return jac


def system_lyapunov(system, params, state, h: float = 1e-4) -> float:
    s = np.asarray(system.state_scale, dtype=float)
    return lyapunov_coeff_1(scaled_jacobian(system, params), np.asarray(state) / s, h)
