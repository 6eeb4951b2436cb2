"""Nelder-Mead simplex minimization with a simplex-diameter stopping rule."""

from dataclasses import dataclass

import numpy as np


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool
    diameter: float


def _diameter(simplex):
    diffs = simplex[:, None, :] - simplex[None, :, :]
    return float(np.sqrt((diffs**2).sum(axis=-1)).max())


def minimize(f, x0, step=0.1, xtol=1e-8, max_iter=2000,
             reflect=1.0, expand=2.0, contract=0.5, shrink=0.5):
    """Minimize ``f`` from ``x0``.

    ``step`` sets the initial simplex edge along each axis (scalar or per
    coordinate). Stops when the largest vertex-to-vertex distance drops
    below ``xtol`` or after ``max_iter`` iterations. Non-finite objective
    values are treated as +inf so the simplex retreats from them.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    n = x0.size
    steps = np.broadcast_to(np.asarray(step, dtype=np.float64), (n,))
    nfev = 0

    def fval(x):
        nonlocal nfev
        nfev += 1
        v = f(x)
        return v if np.isfinite(v) else np.inf

    simplex = np.vstack([x0] + [x0 + steps[i] * np.eye(n)[i] for i in range(n)])
    fs = np.array([fval(v) for v in simplex])

    it = 0
    converged = False
    while True:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        diam = _diameter(simplex)
        if diam < xtol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + reflect * (centroid - worst)
        fr = fval(xr)
        if fr < fs[0]:
            xe = centroid + expand * (xr - centroid)
            fe = fval(xe)
            if fe < fr:
                simplex[-1], fs[-1] = xe, fe
            else:
                simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            # outside contraction
            xc = centroid + contract * (xr - centroid)
            fc = fval(xc)
            if fc <= fr:
                simplex[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + contract * (worst - centroid)
            fc = fval(xc)
            if fc < fs[-1]:
                simplex[-1], fs[-1] = xc, fc
                continue
        best = simplex[0]
        simplex[1:] = best + shrink * (simplex[1:] - best)
        fs[1:] = [fval(v) for v in simplex[1:]]

    return SimplexResult(x=simplex[0].copy(), fun=float(fs[0]), iterations=it,
                         evaluations=nfev, converged=converged, diameter=diam)
