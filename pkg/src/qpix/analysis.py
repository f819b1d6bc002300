"""Scaling fits and experiment drivers.

Fits: algebraic decay ``alpha x^-beta`` by linear least squares in log-log
space, and the Gompertz curve ``alpha exp(-beta exp(-gamma x))`` by
Levenberg-Marquardt. Drivers produce plain tables (lists of dicts) that the
command line writes as CSV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import circuit as cq
from . import imgenc
from . import mps as mpslib
from . import optimizer as opt


@dataclass
class FitResult:
    """Fitted parameters with 1-sigma uncertainties."""

    params: dict
    errors: dict
    residual: float
    iterations: int = 0
    converged: bool = True
    flags: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.params[key]


def _points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (x, y) pairs")
    return pts[:, 0], pts[:, 1]


def fit_power_law(points) -> FitResult:
    """Fit ``y = alpha x^-beta`` by least squares on ``(ln x, ln y)``."""
    x, y = _points(points)
    if len(x) < 2:
        raise ValueError("need at least two points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fits need positive data")
    lx, ly = np.log(x), np.log(y)
    a = np.column_stack([np.ones_like(lx), -lx])
    coef, *_ = np.linalg.lstsq(a, ly, rcond=None)
    res = ly - a @ coef
    dof = len(x) - 2
    rss = float(res @ res)
    if dof > 0:
        cov = rss / dof * np.linalg.inv(a.T @ a)
        err = np.sqrt(np.maximum(np.diag(cov), 0.0))
    else:
        err = np.zeros(2)
    alpha = float(math.exp(coef[0]))
    return FitResult({"alpha": alpha, "beta": float(coef[1])},
                     {"alpha": float(alpha * err[0]), "beta": float(err[1])},
                     math.sqrt(rss))


def gompertz(x, alpha, beta, gamma):
    return alpha * np.exp(-beta * np.exp(-gamma * np.asarray(x, dtype=float)))


def _log_gompertz(x, alpha, beta, gamma):
    return math.log(alpha) - beta * np.exp(-gamma * x)


def _log_gompertz_jac(x, alpha, beta, gamma):
    e = np.exp(-gamma * x)
    return np.column_stack([np.full_like(x, 1.0 / alpha), -e, beta * x * e])


def _gompertz_guess(x, y):
    alpha = float(np.max(y)) * 1.0001
    # rising part: ln(-ln(y/alpha)) = ln(beta) - gamma x
    mask = (y > 0) & (y < alpha)
    z = np.log(-np.log(y[mask] / alpha))
    if mask.sum() >= 2:
        slope, _ = np.polyfit(x[mask], z, 1)
        gamma = max(-slope, 1e-3)
    else:
        gamma = 1.0
    # match the first point
    beta = -math.log(max(y[0], 1e-300) / alpha) * math.exp(gamma * x[0])
    return np.array([alpha, max(beta, 1e-6), gamma])


def fit_gompertz(points, max_iter: int = 500, step_tol: float = 1e-10) -> FitResult:
    """Levenberg-Marquardt fit of ``alpha exp(-beta exp(-gamma x))``.

    Residuals are taken between logarithms, ``ln y - ln f(x)``, which
    weights every point by its relative error; infidelities spanning
    several decades otherwise leave the small-x points, which fix ``beta``,
    without influence. Flat data, where ``beta`` and ``gamma`` are not
    identifiable, is returned as the plateau ``alpha = mean(y)`` with the
    ``degenerate`` flag.
    """
    x, y = _points(points)
    if len(x) < 4:
        raise ValueError("need at least four points")
    if np.any(y <= 0):
        raise ValueError("Gompertz fits need positive data")
    order = np.argsort(x)
    x, y = x[order], y[order]
    if np.ptp(y) <= 1e-12 * float(np.max(np.abs(y))):
        return FitResult({"alpha": float(np.mean(y)), "beta": 0.0, "gamma": 0.0},
                         {"alpha": 0.0, "beta": math.inf, "gamma": math.inf},
                         float(np.linalg.norm(y - np.mean(y))), 0, True, ["degenerate"])
    ly = np.log(y)
    p = _gompertz_guess(x, y)
    lam = 1e-3
    r = ly - _log_gompertz(x, *p)
    cost = float(r @ r)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        j = _log_gompertz_jac(x, *p)
        jtj = j.T @ j
        grad = j.T @ r
        accepted = False
        while lam <= 1e16:
            a = jtj + lam * np.diag(np.diag(jtj))
            try:
                step = np.linalg.solve(a, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(a, grad, rcond=None)[0]
            trial = p + step
            if trial[0] > 0:
                rt = ly - _log_gompertz(x, *trial)
                ct = float(rt @ rt)
                if np.isfinite(ct) and ct <= cost:
                    lam = max(lam / 3, 1e-12)
                    accepted = True
                    break
            lam *= 4
        if not accepted:
            # no step reduces the cost: at a minimum to working precision
            converged = True
            break
        rel = float(np.max(np.abs(step) / np.maximum(np.abs(p), 1e-300)))
        p, r, cost = trial, rt, ct
        if rel < step_tol:
            converged = True
            break
    j = _log_gompertz_jac(x, *p)
    dof = max(len(x) - 3, 1)
    try:
        cov = cost / dof * np.linalg.inv(j.T @ j)
        err = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        err = np.full(3, math.inf)
    names = ("alpha", "beta", "gamma")
    return FitResult(dict(zip(names, map(float, p))), dict(zip(names, map(float, err))),
                     math.sqrt(cost), it, converged, [] if converged else ["not_converged"])


def haar_real_state(L: int, seed=0) -> np.ndarray:
    """Normalized vector of i.i.d. standard normal amplitudes."""
    if L > imgenc.DENSE_QUBIT_CAP:
        raise ValueError(f"dense states are capped at {imgenc.DENSE_QUBIT_CAP} qubits")
    v = np.random.default_rng(seed).normal(size=1 << L)
    return v / np.linalg.norm(v)


def summarize(values) -> dict:
    """Mean and 25th/75th percentiles (linear interpolation)."""
    v = np.asarray(values, dtype=float)
    return {"mean": float(np.mean(v)), "p25": float(np.percentile(v, 25)),
            "p75": float(np.percentile(v, 75))}


# ---------------------------------------------------------------------------
# experiments


def experiment_infidelity_vs_cnot(images, gate_sets, layer_grid, config=None,
                                  spec=None, refine: bool = False):
    """Compress every image for each gate set and depth.

    Returns the table rows and a power-law fit of mean infidelity against
    CNOT count per gate set (``None`` when fewer than two depths are
    positive).
    """
    spec = spec or imgenc.EncodingSpec()
    targets = [mpslib.mps_from_image(img, spec) for img in images]
    grid = sorted(set(int(d) for d in layer_grid))
    rows, fits = [], {}
    for gs in gate_sets:
        # one growth pass per image serves every depth of the grid
        infs = {d: [] for d in grid}
        for t in targets:
            for k, (c, rep) in enumerate(opt.grow_stages(t, gs, grid[-1], config), start=1):
                if k not in infs:
                    continue
                inf = rep.final_infidelity
                if refine:
                    _, brep = opt.bfgs_refine(t, cq.decompose(c))
                    inf = brep.final_infidelity
                infs[k].append(inf)
        pts = []
        for d in grid:
            cnots = cq.cnots_for(gs, len(targets[0]), d)
            row = {"gateSet": gs, "layers": d, "cnots": cnots, **summarize(infs[d])}
            rows.append(row)
            if row["mean"] > 0:
                pts.append((cnots, row["mean"]))
        fits[gs] = fit_power_law(pts) if len(pts) >= 2 else None
    return rows, fits


def experiment_infidelity_vs_resolution(image, resolutions, d, gate_set="so4",
                                        config=None, spec=None):
    """Optimize the image at each resolution with ``d`` layers; fit a Gompertz curve
    of infidelity against qubit count."""
    spec = spec or imgenc.EncodingSpec()
    rows = []
    for side in resolutions:
        img = imgenc.prepare_image(image, side)
        t = mpslib.mps_from_image(img, spec)
        _, rep = opt.grow_optimize(t, gate_set, d, config)
        rows.append({"resolution": side, "qubits": len(t), "infidelity": rep.final_infidelity})
    pts = [(r["qubits"], max(r["infidelity"], 1e-300)) for r in rows]
    fit = None
    if all(r["infidelity"] <= 1e-10 for r in rows):
        fit = FitResult({"alpha": 0.0, "beta": 0.0, "gamma": 0.0}, {}, 0.0, 0, True,
                        ["degenerate"])
    elif len(pts) >= 4:
        fit = fit_gompertz(pts)
    return rows, fit


def experiment_entropy_scaling(images, schemes, orderings, resolutions):
    """Maximum entanglement entropy over all contiguous cuts per configuration."""
    rows = []
    for scheme in schemes:
        for ordering in orderings:
            for side in resolutions:
                ents = []
                for img in images:
                    im = imgenc.prepare_image(img, side)
                    if scheme == "frqi" and im.ndim == 3:
                        im = im.mean(axis=2)
                    spec = imgenc.EncodingSpec(scheme, ordering)
                    m = mpslib.mps_from_image(im, spec)
                    ents.append(mpslib.max_cut_entropy(m))
                n_qubits = len(m)
                rows.append({"scheme": scheme, "ordering": ordering, "resolution": side,
                             "qubits": n_qubits, **summarize(ents)})
    return rows


def haar_entropy_scaling(qubits, samples: int = 50, seed=0):
    """Mean half-cut entropy of real random states per qubit count."""
    rows = []
    for L in qubits:
        ents = []
        for s in range(samples):
            v = haar_real_state(L, seed=(seed, L, s))
            m = mpslib.mps_from_dense(v)
            ents.append(mpslib.entropy(m, L // 2))
        rows.append({"qubits": L, **summarize(ents)})
    return rows
