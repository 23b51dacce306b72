"""Generic pseudo-arclength predictor-corrector used by the equilibrium,
cycle and locus continuations.

A problem is a residual G: R^{n+1} -> R^n with Jacobian n x (n+1).  All work
happens in scaled coordinates z = u / scale so that arclength steps are
meaningful across very different units.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq


class CorrectorError(RuntimeError):
    pass


def fd_jacobian(residual: Callable, u: np.ndarray, h: np.ndarray | float = 1e-7) -> np.ndarray:
    """Central-difference Jacobian of ``residual`` at ``u``."""
    u = np.asarray(u, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), u.shape)
    cols = []
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h[i]
        cols.append((residual(u + e) - residual(u - e)) / (2 * h[i]))
    return np.column_stack(cols)


@dataclass
class Settings:
    ds: float = 1e-3
    ds_min: float = 1e-6
    ds_max: float = 1e-2
    tol: float = 1e-11
    step_tol: float = 1e-10
    max_iter: int = 12
    grow_at: int = 3
    shrink_at: int = 8
    max_steps: int = 20000


class Curve:
    """Solution curve of G(u) = 0 traced by pseudo-arclength."""

    def __init__(self, residual: Callable, jacobian: Optional[Callable], scale,
                 settings: Optional[Settings] = None):
        self._residual = residual
        self._jacobian = jacobian
        self.scale = np.asarray(scale, dtype=float)
        self.settings = settings or Settings()

    # scaled wrappers
    def G(self, z):
        return self._residual(z * self.scale)

    def DG(self, z):
        u = z * self.scale
        if self._jacobian is None:
            return fd_jacobian(self._residual, u, 1e-7 * np.maximum(self.scale, 1e-300)) * self.scale
        return self._jacobian(u) * self.scale

    def tangent(self, z, previous: Optional[np.ndarray] = None) -> np.ndarray:
        A = self.DG(z)
        n1 = A.shape[1]
        if previous is None:
            # Null vector from the SVD.
            t = np.linalg.svd(A)[2][-1]
        else:
            M = np.vstack([A, previous])
            rhs = np.zeros(n1)
            rhs[-1] = 1.0
            try:
                t = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                t = np.linalg.svd(A)[2][-1]
        t = t / np.linalg.norm(t)
        if previous is not None and t @ previous < 0:
            t = -t
        return t

    def correct(self, z_pred: np.ndarray, t: np.ndarray, anchor: Optional[np.ndarray] = None,
                fixed: Optional[tuple] = None):
        """Newton on [G(z); t.(z - anchor)] starting from ``z_pred``.

        ``anchor`` defaults to the predictor.  ``fixed=(i, value)`` replaces
        the arclength row by pinning coordinate i (scaled) to ``value``.
        Returns (z, iterations).
        """
        s = self.settings
        z = z_pred.copy()
        anchor = z_pred if anchor is None else anchor
        for it in range(1, s.max_iter + 1):
            r = self.G(z)
            if fixed is None:
                extra = t @ (z - anchor)
                row = t
            else:
                i, val = fixed
                extra = z[i] - val
                row = np.zeros_like(z)
                row[i] = 1.0
            F = np.append(r, extra)
            if not np.all(np.isfinite(F)):
                raise CorrectorError("non-finite residual")
            M = np.vstack([self.DG(z), row])
            try:
                dz = np.linalg.solve(M, -F)
            except np.linalg.LinAlgError as exc:
                raise CorrectorError("singular bordered matrix") from exc
            z = z + dz
            if np.linalg.norm(dz, np.inf) <= s.step_tol:
                if np.linalg.norm(self.G(z), np.inf) <= s.tol:
                    return z, it
            elif np.linalg.norm(r, np.inf) <= s.tol and np.linalg.norm(dz, np.inf) <= 1e3 * s.step_tol:
                return z, it
        raise CorrectorError("corrector did not converge")

    def step(self, z: np.ndarray, t: np.ndarray, ds: float):
        """One predictor-corrector step with step-size control.

        Returns (z_new, t_new, ds_used, ds_next) or raises CorrectorError once
        the step has shrunk below ds_min.
        """
        s = self.settings
        while True:
            try:
                z_new, its = self.correct(z + ds * t, t)
                # Guard against jumping to a distant part of the curve.
                if np.linalg.norm(z_new - z) > 2.0 * abs(ds) + 1e-12:
                    raise CorrectorError("corrector jumped")
                t_new = self.tangent(z_new, t)
                ds_next = ds
                if its <= s.grow_at:
                    ds_next = min(1.5 * ds, s.ds_max)
                elif its >= s.shrink_at:
                    ds_next = max(0.5 * ds, s.ds_min)
                return z_new, t_new, ds, ds_next
            except CorrectorError:
                ds *= 0.5
                if ds < s.ds_min:
                    raise

    def point_at(self, z0: np.ndarray, t0: np.ndarray, s: float) -> np.ndarray:
        if s == 0.0:
            return z0.copy()
        return self.correct(z0 + s * t0, t0)[0]

    def locate(self, z0: np.ndarray, t0: np.ndarray, ds: float, test: Callable,
               xtol: float = 1e-10) -> np.ndarray:
        """Zero of ``test(u)`` between z0 and the point one step ``ds`` ahead,
        by Brent's method on the arclength from z0.  Returns scaled z."""
        cache = {}

        def g(s):
            zz = self.point_at(z0, t0, s)
            cache[s] = zz
            return test(zz * self.scale)

        s_root = brentq(g, 0.0, ds, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
        return cache.get(s_root, self.point_at(z0, t0, s_root))
