"""BFGS quasi-Newton minimization with a strong-Wolfe line search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class BFGSResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    evaluations: int
    status: str  # "converged", "maxiter" or "linesearch"
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic matching values and slopes at ``a`` and ``b``."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - ga * gb
    if rad < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(rad)
    t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2 * d2)
    return t if np.isfinite(t) else None


def _zoom(phi, f0, g0, lo, f_lo, g_lo, hi, f_hi, g_hi, c1, c2, max_iter):
    for _ in range(max_iter):
        t = _cubic_min(lo, f_lo, g_lo, hi, f_hi, g_hi)
        left, right = min(lo, hi), max(lo, hi)
        width = right - left
        # keep trial points away from the bracket ends
        if t is None or not left + 0.1 * width <= t <= right - 0.1 * width:
            t = 0.5 * (lo + hi)
        ft, gt, state = phi(t)
        if ft > f0 + c1 * t * g0 or ft >= f_lo:
            hi, f_hi, g_hi = t, ft, gt
        else:
            if abs(gt) <= -c2 * g0:
                return t, ft, state
            if gt * (hi - lo) >= 0:
                hi, f_hi, g_hi = lo, f_lo, g_lo
            lo, f_lo, g_lo = t, ft, gt
        if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
            break
    return None


def strong_wolfe(phi, f0, g0, t1=1.0, c1=1e-4, c2=0.9, t_max=1e10, max_iter=30):
    """Step satisfying the strong Wolfe conditions along a descent direction.

    ``phi(t)`` returns ``(value, slope, state)``; ``state`` is handed back
    for the accepted step. Returns ``None`` when no step is found.
    """
    t_prev, f_prev, g_prev = 0.0, f0, g0
    t = t1
    for i in range(max_iter):
        ft, gt, state = phi(t)
        if ft > f0 + c1 * t * g0 or (i > 0 and ft >= f_prev):
            return _zoom(phi, f0, g0, t_prev, f_prev, g_prev, t, ft, gt, c1, c2, max_iter)
        if abs(gt) <= -c2 * g0:
            return t, ft, state
        if gt >= 0:
            return _zoom(phi, f0, g0, t, ft, gt, t_prev, f_prev, g_prev, c1, c2, max_iter)
        t_prev, f_prev, g_prev = t, ft, gt
        t = min(2.0 * t, t_max)
    return None


def minimize(fun_grad, x0, max_iter=500, grad_tol=1e-8, c1=1e-4, c2=0.9) -> BFGSResult:
    """Minimize ``fun_grad(x) -> (f, g)`` with inverse-Hessian BFGS updates.

    Terminates when the gradient's infinity norm drops below ``grad_tol``
    or after ``max_iter`` iterations. A failed line search returns the
    best point so far with status ``"linesearch"``.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    n_eval = 1
    n = x.size
    h = np.eye(n)
    history = [f]
    status = "maxiter"
    it = 0
    first = True
    while it < max_iter:
        if np.max(np.abs(g), initial=0.0) < grad_tol:
            status = "converged"
            break
        p = -h @ g
        slope = float(g @ p)
        if slope >= 0:
            # lost positive definiteness: restart from steepest descent
            h = np.eye(n)
            p = -g
            slope = float(g @ p)
            first = True

        def phi(t, x=x, p=p):
            nonlocal n_eval
            n_eval += 1
            ft, gt = fun_grad(x + t * p)
            return ft, float(gt @ p), gt

        t1 = min(1.0, 1.0 / max(np.max(np.abs(p)), 1e-300)) if first else 1.0
        found = strong_wolfe(phi, f, slope, t1=t1, c1=c1, c2=c2)
        if found is None:
            status = "linesearch"
            break
        t, f_new, g_new = found
        s = t * p
        y = g_new - g
        x = x + s
        f, g = f_new, g_new
        history.append(f)
        it += 1
        sy = float(s @ y)
        if sy > 1e-300:
            if first:
                h = np.eye(n) * (sy / float(y @ y))
                first = False
            rho = 1.0 / sy
            hy = h @ y
            h = (h - rho * (np.outer(s, hy) + np.outer(hy, s))
                 + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
    else:
        if np.max(np.abs(g), initial=0.0) < grad_tol:
            status = "converged"
    return BFGSResult(x, float(f), g, it, n_eval, status, history)
