"""Four-stage circuit optimization against a target MPS.

1. Analytic layer initialization: disentangle the target with the current
   circuit, truncate to bond dimension two and read off one new first layer.
2. Sweeping: replace one gate at a time by the gate maximizing
   ``Tr(E U) = <target|circuit>`` for its environment ``E``.
3. Decomposition into CNOT and rotation gates.
4. BFGS refinement of all rotation angles with an adjoint gradient.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bfgs
from . import circuit as cq
from . import mps as mpslib


@dataclass
class SweepConfig:
    """Knobs of the sweeping stage.

    Attributes
    ----------
    sweeps_per_growth : int
        Maximum full passes after each new layer.
    max_layers : int
        Layer count ``d`` for :func:`grow_optimize`.
    chi_work : int
        Bond cap of disentangled targets and MPS-cached contractions.
    convergence_tol : float
        Stop sweeping when a pass gains less than this relative overlap.
    backend : str
        ``"dense"``, ``"mps"`` or ``"auto"`` (dense up to ``dense_limit``).
    """

    sweeps_per_growth: int = 20
    max_layers: int = 4
    chi_work: int = 64
    convergence_tol: float = 1e-7
    backend: str = "auto"
    dense_limit: int = 20
    sparse_alternations: int = 2

    def __post_init__(self):
        if min(self.sweeps_per_growth, self.max_layers, self.chi_work) < 1:
            raise ValueError("sweep configuration values must be positive")
        if self.convergence_tol < 0:
            raise ValueError("convergence tolerance must be non-negative")
        if self.backend not in ("auto", "dense", "mps"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass
class OptReport:
    overlap_trace: list = field(default_factory=list)
    final_infidelity: float = 1.0
    sweep_infidelity: float = 1.0
    cnot_count: int = 0
    wall_time: float = 0.0
    sweeps: int = 0
    monotone: bool = True
    bfgs_iterations: int = 0
    bfgs_status: str | None = None
    flags: list = field(default_factory=list)

    def to_json(self, dataset: str, image_id, gate_set: str, layers: int,
                wall_time: bool = True) -> dict:
        return {
            "dataset": dataset,
            "imageId": image_id,
            "gateSet": gate_set,
            "layers": layers,
            "cnots": self.cnot_count,
            "infidelity": self.final_infidelity,
            "sweepOverlapTrace": [float(x) for x in self.overlap_trace],
            "bfgsIterations": self.bfgs_iterations,
            "wallTimeSeconds": self.wall_time if wall_time else None,
        }


# ---------------------------------------------------------------------------
# helpers


def _as_dense(target) -> np.ndarray:
    if isinstance(target, mpslib.MPS):
        return target.to_dense()
    return np.asarray(target)


def _n_qubits(target) -> int:
    if isinstance(target, mpslib.MPS):
        return len(target)
    return int(np.asarray(target).size).bit_length() - 1


def _use_dense(L: int, config: SweepConfig) -> bool:
    if config.backend == "dense":
        return True
    if config.backend == "mps":
        return False
    return L <= config.dense_limit


def prepared_state(c) -> np.ndarray:
    return cq.apply_dense(c)


def overlap(target, c, chi_max=None):
    """``<target|circuit>`` computed densely or, for large L, as MPSs."""
    L = c.n_qubits
    if L <= cq.DENSE_QUBIT_CAP and not (isinstance(target, mpslib.MPS) and chi_max):
        return np.vdot(_as_dense(target), cq.apply_dense(c))
    if isinstance(c, cq.DecomposedCircuit):
        raise ValueError("decomposed circuits beyond the dense cap are not supported")
    return mpslib.inner(target, cq.circuit_to_mps(c, chi_max))


def infidelity(target, c) -> float:
    """``1 - |<target|circuit>|^2`` clipped to [0, 1]."""
    ov = overlap(target, c)
    return float(min(1.0, max(0.0, 1.0 - abs(ov) ** 2)))


# ---------------------------------------------------------------------------
# disentangling and analytic initialization


def _gate_centered(m, g, site, chi_max):
    """Two-site gate with the orthogonality center moved next to it first.

    Truncating at a bond is only optimal when the state is canonical around
    it; moving the center costs one QR sweep over the intermediate sites.
    """
    if chi_max is not None and m.form not in (site, site + 1):
        m = mpslib.canonicalize(m, "mixed", center=site)
    return mpslib.apply_two_site(m, g, site, chi_max=chi_max)


def disentangle(target: mpslib.MPS, c: cq.Circuit, chi_work=64,
                include_initial: bool = True) -> mpslib.MPS:
    """Apply the inverse of every circuit gate to ``target``.

    Gates are undone from the last to the first, keeping bonds at most
    ``chi_work``.
    """
    m = target
    for _, _, bond, g in reversed(list(c.timeline())):
        m = _gate_centered(m, g.conj().T, bond, chi_work)
    if include_initial and c.initial is not None:
        for q, v in enumerate(c.initial):
            m = mpslib.apply_one_site(m, np.asarray(v).conj().T, q)
    return m


def _complete_unitary(columns: dict, dtype) -> np.ndarray:
    """Extend prescribed columns to a unitary by Gram-Schmidt.

    Prescribed columns are orthonormalized in index order; missing or
    vanishing ones are filled from canonical basis vectors tried in index
    order.
    """
    u = np.zeros((4, 4), dtype=dtype)
    basis = []

    def orth(v):
        v = np.array(v, dtype=dtype)
        for _ in range(2):
            for b in basis:
                v = v - b * np.vdot(b, v)
        return v

    missing = []
    for k in range(4):
        if k in columns:
            v = orth(columns[k])
            n = np.linalg.norm(v)
            if n > 1e-8:
                u[:, k] = v / n
                basis.append(u[:, k])
                continue
        missing.append(k)
    cand = iter(np.eye(4, dtype=dtype))
    for k in missing:
        for e in cand:
            v = orth(e)
            n = np.linalg.norm(v)
            if n > 1e-6:
                u[:, k] = v / n
                basis.append(u[:, k])
                break
    return u


def _pad(t, shape):
    out = np.zeros(shape, dtype=t.dtype)
    out[tuple(slice(0, s) for s in t.shape)] = t
    return out


def bond_canonical(m: mpslib.MPS, bond: int):
    """Mixed canonical split around ``bond`` (between sites ``bond``, ``bond+1``).

    Returns ``(A, S, B)``: left isometries for sites ``0..bond``, the
    diagonal bond matrix, and right isometries for the remaining sites.
    """
    t = mpslib.canonicalize(m, "mixed", center=bond).tensors
    l, d, r = t[bond].shape
    u, s, vh = mpslib.svd(t[bond].reshape(l * d, r))
    t[bond] = u.reshape(l, d, -1)
    t[bond + 1] = np.tensordot(vh, t[bond + 1], axes=(1, 0))
    return t[:bond + 1], np.diag(s).astype(t[bond].dtype), t[bond + 1:]


def layer_from_mps(m: mpslib.MPS, gate_set: str) -> list:
    """One center-sequential layer preparing the bond-dimension-2 truncation of ``m``.

    The gates come in application order (see :func:`circuit.layer_bonds`).
    For SO(4) a reflection is turned into a rotation by multiplying with a
    CNOT controlled by the qubit that enters in ``|0>``; this only permutes
    completion columns.
    """
    if gate_set == "sparse":
        raise ValueError("sparse layers are initialized from product states")
    L = len(m)
    c = cq.center_bond(L)
    trunc, _ = mpslib.truncate(m, 2)
    trunc = trunc.scaled(1.0 / trunc.norm())
    a, s, b = bond_canonical(trunc, c)
    real = gate_set == "so4"
    if real:
        a = [x.real for x in a]
        b = [x.real for x in b]
        s = s.real
    dtype = float if real else complex
    a = [_pad(x, (1 if k == 0 else 2, 2, 2)) for k, x in enumerate(a)]
    b = [_pad(x, (2, 2, 1 if k == len(b) - 1 else 2)) for k, x in enumerate(b)]
    s = _pad(s, (2, 2))
    gates = {}

    # central gate: |00> -> sum_ab M[a, b] |a b>
    mat = s
    if c == 0:
        mat = a[0][0] @ mat
    if c + 1 == L - 1:
        mat = mat @ b[-1][:, :, 0]
    gates[c] = (_complete_unitary({0: mat.reshape(4)}, dtype), "center")

    # lower arm: bond on qubit m, |0> on qubit m+1
    for bond in range(c + 1, L - 1):
        site = bond - (c + 1)
        t = b[site]
        if bond == L - 2:
            t = np.einsum("ajc,ckz->ajk", t, b[site + 1])
        cols = {2 * x: t[x].reshape(4) for x in range(2)}
        gates[bond] = (_complete_unitary(cols, dtype), "lower")

    # upper arm: |0> on qubit m, bond on qubit m+1
    for bond in range(c - 1, -1, -1):
        t = a[bond + 1]
        if bond == 0:
            t = np.einsum("ja,akb->jkb", a[0][0], a[1])
        cols = {x: t[:, :, x].reshape(4) for x in range(2)}
        gates[bond] = (_complete_unitary(cols, dtype), "upper")

    layer = []
    for bond in cq.layer_bonds(L):
        g, kind = gates[bond]
        if real and np.linalg.det(g) < 0:
            # CNOT controlled by the |0> input (qubit m+1 on the lower arm)
            g = g @ (cq.CNOT_REV if kind == "lower" else cq.CNOT)
        layer.append(g)
    return layer


def _rotation_to(v) -> np.ndarray:
    """Real rotation mapping ``|0>`` onto the unit vector ``v``."""
    v = np.real(np.asarray(v))
    n = np.linalg.norm(v)
    v = v / n if n > 0 else np.array([1.0, 0.0])
    return np.array([[v[0], -v[1]], [v[1], v[0]]])


def product_vectors(m: mpslib.MPS) -> list:
    """Site vectors of the best product-state approximation of ``m``.

    The overall sign is chosen so that the product has non-negative overlap
    with ``m``.
    """
    prod, _ = mpslib.truncate(m, 1)
    vecs = [np.real(t[0, :, 0]) for t in prod.tensors]
    vecs = [v / np.linalg.norm(v) if np.linalg.norm(v) > 0 else np.array([1.0, 0.0])
            for v in vecs]
    if np.real(mpslib.inner(mpslib.MPS.product(vecs), m)) < 0:
        vecs[0] = -vecs[0]
    return vecs


def _sparse_init(target, c: cq.Circuit, chi_work) -> cq.Circuit:
    L = c.n_qubits
    work = disentangle(target, c, chi_work, include_initial=False)
    bonds = cq.layer_bonds(L)
    layer = [None] * (L - 1)
    for pos in range(L - 2, -1, -1):
        b = bonds[pos]
        vecs = product_vectors(work)
        v1, v2 = _rotation_to(vecs[b]), _rotation_to(vecs[b + 1])
        layer[pos] = (v1, v2)
        g = np.kron(v1, v2) @ cq.CNOT
        work = _gate_centered(work, g.T, b, chi_work)
    out = c.with_layer_first(layer)
    out.initial = [_rotation_to(v) for v in product_vectors(work)]
    return out


def analytic_init_layer(target: mpslib.MPS, c: cq.Circuit, chi_work=64) -> cq.Circuit:
    """Return ``c`` with one analytically initialized layer acting first."""
    if c.gate_set == "sparse":
        return _sparse_init(target, c, chi_work)
    work = disentangle(target, c, chi_work)
    return c.with_layer_first(layer_from_mps(work, c.gate_set))


# ---------------------------------------------------------------------------
# environments and gate updates


def _slots(c: cq.Circuit) -> list:
    """Gates in time order as ``(kind, index, qubits)`` records."""
    out = []
    if c.initial is not None:
        out += [("init", q, (q,)) for q in range(c.n_qubits)]
    bonds = c.bonds
    for li, layer in enumerate(c.layers):
        for pos in range(len(layer)):
            out.append(("gate", (li, pos), (bonds[pos], bonds[pos] + 1)))
    return out


def _slot_matrix(c, slot):
    kind, idx, _ = slot
    if kind == "init":
        return np.asarray(c.initial[idx])
    return c.gate_matrix(*idx)


def _set_slot(c, slot, value):
    kind, idx, _ = slot
    if kind == "init":
        c.initial[idx] = value
    else:
        c.layers[idx[0]][idx[1]] = value


class DenseEnvironments:
    """Forward/backward statevectors around the focused gate.

    ``psi`` is the state produced by all gates before the focus and ``phi``
    the target pulled back through all gates after it, so that
    ``<target|circuit> = Tr(E U)`` with ``E = Psi Phi^dagger``.
    """

    def __init__(self, target, L, dtype):
        self.t = _as_dense(target).astype(dtype)
        self.L = L
        self.dtype = dtype

    def _apply(self, vec, qubits, mat):
        if len(qubits) == 1:
            return cq.apply_1q(vec, mat, qubits[0], self.L)
        return cq.apply_2q(vec, mat, qubits[0], self.L)

    def reset(self, slots, mats):
        self.slots = slots
        self.psi = cq.zero_state(self.L, self.dtype)
        phi = self.t
        for slot, mat in zip(reversed(slots[1:]), reversed(mats[1:])):
            phi = self._apply(phi, slot[2], mat.conj().T)
        self.phi = phi

    def env(self, k) -> np.ndarray:
        q = self.slots[k][2][0]
        w = 1 << len(self.slots[k][2])
        psi = self.psi.reshape(1 << q, w, -1)
        phi = self.phi.reshape(1 << q, w, -1)
        return np.einsum("xbr,xar->ba", psi, phi.conj())

    def advance(self, k, new_mat, next_mat):
        self.psi = self._apply(self.psi, self.slots[k][2], new_mat)
        if next_mat is not None:
            self.phi = self._apply(self.phi, self.slots[k + 1][2], next_mat)


class _TransferCache:
    """Left/right partial overlaps of two MPSs with per-site version checks.

    Entry ``left[i]`` contracts sites ``0..i-1`` and ``right[i]`` sites
    ``i..L-1``. Each entry remembers the site versions it was built from;
    a mismatch marks it stale and it is rebuilt from the nearest valid entry.
    """

    def __init__(self, L):
        self.L = L
        self.version_a = [0] * L
        self.version_b = [0] * L
        self.left = {0: (np.ones((1, 1)), ())}
        self.right = {L: (np.ones((1, 1)), ())}
        self.rebuilds = 0

    def touch(self, which, sites):
        vers = self.version_a if which == "a" else self.version_b
        for s in sites:
            vers[s] += 1

    def _stamp(self, lo, hi):
        return tuple(zip(self.version_a[lo:hi], self.version_b[lo:hi]))

    def get_left(self, i, a, b):
        j = i
        while j > 0 and not (j in self.left and self.left[j][1] == self._stamp(0, j)):
            j -= 1
        env = self.left[0][0] if j == 0 else self.left[j][0]
        for s in range(j, i):
            env = np.einsum("xy,xsz,ysw->zw", env, a[s], b[s].conj())
            self.left[s + 1] = (env, self._stamp(0, s + 1))
            self.rebuilds += 1
        return env

    def get_right(self, i, a, b):
        L = self.L
        j = i
        while j < L and not (j in self.right and self.right[j][1] == self._stamp(j, L)):
            j += 1
        env = self.right[L][0] if j == L else self.right[j][0]
        for s in range(j - 1, i - 1, -1):
            env = np.einsum("xsz,ysw,zw->xy", a[s], b[s].conj(), env)
            self.right[s] = (env, self._stamp(s, L))
            self.rebuilds += 1
        return env


class MPSEnvironments:
    """Environment provider with MPS-stored forward and backward states."""

    def __init__(self, target, L, dtype, chi_work):
        self.target = target
        self.L = L
        self.dtype = dtype
        self.chi = chi_work

    def _apply(self, m, qubits, mat):
        if len(qubits) == 1:
            return mpslib.apply_one_site(m, mat, qubits[0])
        return mpslib.apply_two_site(m, mat, qubits[0], chi_max=self.chi)

    def reset(self, slots, mats):
        self.slots = slots
        self.psi = mpslib.MPS.basis([0] * self.L)
        phi = self.target
        for slot, mat in zip(reversed(slots[1:]), reversed(mats[1:])):
            if len(slot[2]) == 2:
                phi = _gate_centered(phi, mat.conj().T, slot[2][0], self.chi)
            else:
                phi = mpslib.apply_one_site(phi, mat.conj().T, slot[2][0])
        self.phi = phi
        self.cache = _TransferCache(self.L)

    def env(self, k) -> np.ndarray:
        qubits = self.slots[k][2]
        q0, q1 = qubits[0], qubits[-1]
        a, b = self.psi.tensors, self.phi.tensors
        left = self.cache.get_left(q0, a, b)
        right = self.cache.get_right(q1 + 1, a, b)
        pa, pb = a[q0], b[q0]
        for s in range(q0 + 1, q1 + 1):
            pa = np.tensordot(pa, a[s], axes=(pa.ndim - 1, 0))
            pb = np.tensordot(pb, b[s], axes=(pb.ndim - 1, 0))
        w = 1 << len(qubits)
        pa = pa.reshape(pa.shape[0], w, pa.shape[-1])
        pb = pb.reshape(pb.shape[0], w, pb.shape[-1])
        return np.einsum("xy,xbz,yaw,zw->ba", left, pa, pb.conj(), right)

    def advance(self, k, new_mat, next_mat):
        q = self.slots[k][2]
        self.psi = self._apply(self.psi, q, new_mat)
        self.cache.touch("a", q)
        if next_mat is not None:
            qn = self.slots[k + 1][2]
            self.phi = self._apply(self.phi, qn, next_mat)
            self.cache.touch("b", qn)


def environment(target, c: cq.Circuit, focus) -> np.ndarray:
    """Environment of one gate, ``focus = (layer, position)`` or ``("init", q)``.

    Satisfies ``Tr(E @ U) = <target|circuit>`` for the focused gate ``U``.
    """
    slots = _slots(c)
    if focus[0] == "init":
        k = [i for i, s in enumerate(slots) if s[0] == "init" and s[1] == focus[1]][0]
    else:
        k = [i for i, s in enumerate(slots) if s[0] == "gate" and s[1] == tuple(focus)][0]
    mats = [_slot_matrix(c, s) for s in slots]
    dtype = np.result_type(_as_dense(target), *mats)
    envs = DenseEnvironments(target, c.n_qubits, dtype)
    envs.reset(slots, mats)
    for i in range(k):
        envs.advance(i, mats[i], mats[i + 1])
    return envs.env(k)


def _polar_max(e):
    """Unitary maximizing ``Re Tr(E U)`` and the attained value."""
    x, s, yh = np.linalg.svd(e)
    return yh.conj().T @ x.conj().T, float(np.sum(s))


def _so4_max(e):
    x, s, yt = np.linalg.svd(np.real(e))
    y = yt.T
    sign = 1.0 if np.linalg.det(y @ x.T) > 0 else -1.0
    cmat = np.diag([1.0, 1.0, 1.0, sign])
    # numpy orders singular values descending, so the flip hits the smallest
    return y @ cmat @ x.T, float(np.sum(s[:3]) + sign * s[3])


def svd_update(e, gate_set: str, current=None, alternations: int = 2):
    """Gate of ``gate_set`` maximizing ``Tr(E U)``.

    For the sparse set ``current`` holds ``(V1, V2)`` and the two
    orthogonal factors are updated alternately from their 2x2 environments.
    Returns ``(gate, value)``.
    """
    e = np.asarray(e)
    if gate_set == "su4":
        return _polar_max(e)
    if gate_set == "so4":
        return _so4_max(e)
    if gate_set == "single":
        u, val = _polar_max(np.real(e))
        return u, val
    if gate_set != "sparse":
        raise ValueError(f"unknown gate set {gate_set!r}")
    v1, v2 = current if current is not None else (cq.I2, cq.I2)
    f = (cq.CNOT @ np.real(e)).reshape(2, 2, 2, 2)
    for _ in range(alternations):
        v1, _ = _polar_max(np.einsum("abcd,db->ac", f, v2))
        v2, _ = _polar_max(np.einsum("abcd,ca->bd", f, v1))
    val = float(np.einsum("abcd,ca,db->", f, v1, v2))
    return (v1, v2), val


def sweep(target, c: cq.Circuit, config: SweepConfig | None = None):
    """Optimize every gate in time order, repeating full passes.

    Returns the updated circuit (a copy) and a report whose overlap trace
    records ``<target|circuit>`` after each single-gate update.
    """
    config = config or SweepConfig()
    c = c.copy()
    t0 = time.perf_counter()
    L = c.n_qubits
    slots = _slots(c)
    report = OptReport()
    if not slots:
        report.final_infidelity = report.sweep_infidelity = infidelity(target, c)
        return c, report
    mats = [_slot_matrix(c, s) for s in slots]
    complex_path = c.gate_set == "su4" or np.iscomplexobj(
        target.tensors[0] if isinstance(target, mpslib.MPS) else target)
    dtype = complex if complex_path else float
    if _use_dense(L, config):
        envs = DenseEnvironments(target, L, dtype)
    else:
        envs = MPSEnvironments(target, L, dtype, config.chi_work)
    trace = report.overlap_trace
    prev_pass = None
    for _ in range(config.sweeps_per_growth):
        mats = [_slot_matrix(c, s) for s in slots]
        envs.reset(slots, mats)
        for k, slot in enumerate(slots):
            e = envs.env(k)
            if slot[0] == "init":
                new, val = svd_update(e, "single")
                new_mat = new
            elif c.gate_set == "sparse":
                kind, (li, pos), _ = slot
                new, val = svd_update(e, "sparse", c.layers[li][pos],
                                      config.sparse_alternations)
                new_mat = cq.gate_matrix(new, "sparse")
            else:
                new, val = svd_update(e, c.gate_set)
                new_mat = new
            if trace and val < trace[-1] - 1e-12 * max(1.0, abs(trace[-1])):
                report.monotone = False
            trace.append(val)
            _set_slot(c, slot, new)
            envs.advance(k, new_mat, mats[k + 1] if k + 1 < len(slots) else None)
        report.sweeps += 1
        cur = trace[-1]
        if prev_pass is not None and cur - prev_pass <= config.convergence_tol * abs(prev_pass):
            break
        prev_pass = cur
    report.sweep_infidelity = report.final_infidelity = infidelity(target, c) \
        if L <= cq.DENSE_QUBIT_CAP else float(max(0.0, 1 - trace[-1] ** 2))
    report.cnot_count = cq.cnots_for(c.gate_set, L, c.depth)
    report.wall_time = time.perf_counter() - t0
    return c, report


def grow_stages(target, gate_set: str, d: int, config: SweepConfig | None = None):
    """Yield ``(circuit, report)`` after each added and swept layer.

    The circuit after ``k`` stages equals ``grow_optimize(target, gate_set, k)``,
    so one pass serves every depth up to ``d``.
    """
    if d < 1:
        raise ValueError("need at least one layer")
    config = config or SweepConfig()
    t0 = time.perf_counter()
    L = _n_qubits(target)
    c = cq.Circuit(L, gate_set, [])
    report = OptReport()
    for k in range(1, d + 1):
        c = analytic_init_layer(target, c, config.chi_work)
        c, rep = sweep(target, c, config)
        report.overlap_trace += rep.overlap_trace
        report.sweeps += rep.sweeps
        report.monotone &= rep.monotone
        report.sweep_infidelity = report.final_infidelity = infidelity(target, c)
        report.cnot_count = cq.cnots_for(gate_set, L, k)
        report.wall_time = time.perf_counter() - t0
        yield c, copy.deepcopy(report)


def grow_optimize(target, gate_set: str, d: int, config: SweepConfig | None = None):
    """Add analytically initialized layers one at a time, sweeping after each."""
    for c, report in grow_stages(target, gate_set, d, config):
        pass
    return c, report


# ---------------------------------------------------------------------------
# BFGS refinement


_DERIV = {
    "ry": np.array([[0.0, -0.5], [0.5, 0.0]]),      # -i Y / 2
    "rz": np.diag([-0.5j, 0.5j]),                     # -i Z / 2
    "rx": np.array([[0.0, -0.5j], [-0.5j, 0.0]]),   # -i X / 2
}


def infidelity_and_gradient(target, dc: cq.DecomposedCircuit, theta=None):
    """Infidelity and its gradient with respect to every rotation angle.

    One forward pass builds the final state; one backward pass undoes the
    gates on both the state and the pulled-back target while accumulating
    ``d<t|psi>/d theta_k = <lambda_k| (-i sigma_k / 2) |psi_k>``.
    """
    if theta is not None:
        dc = dc.with_parameters(theta)
    L = dc.n_qubits
    t = _as_dense(target)
    complex_path = not dc.is_real() or np.iscomplexobj(t)
    dtype = complex if complex_path else float
    psi = cq.zero_state(L, dtype)
    for op in dc.ops:
        psi = cq.apply_op(psi, op, L)
    lam = t.astype(dtype)
    ov = np.vdot(lam, psi)
    n_par = sum(op.name != "cx" for op in dc.ops)
    grad = np.zeros(n_par)
    k = n_par
    for op in reversed(dc.ops):
        if op.name == "cx":
            psi = cq.apply_cx(psi, op.qubits[0], op.qubits[1], L)
            lam = cq.apply_cx(lam, op.qubits[0], op.qubits[1], L)
            continue
        k -= 1
        q = op.qubits[0]
        dpsi = cq.apply_1q(psi, _DERIV[op.name], q, L)
        grad[k] = -2.0 * np.real(np.conj(ov) * np.vdot(lam, dpsi))
        inv = cq.op_matrix(op).conj().T
        psi = cq.apply_1q(psi, inv, q, L)
        lam = cq.apply_1q(lam, inv, q, L)
    return float(1.0 - abs(ov) ** 2), grad


def bfgs_refine(target, dc: cq.DecomposedCircuit, max_iter=500, grad_tol=1e-8):
    """Minimize the infidelity over all rotation angles with BFGS.

    Returns the refined circuit and a report. Beyond the dense cap the input
    is returned unchanged with the ``bfgs_skipped`` flag.
    """
    t0 = time.perf_counter()
    report = OptReport(cnot_count=sum(op.name == "cx" for op in dc.ops))
    if dc.n_qubits > cq.DENSE_QUBIT_CAP:
        report.flags.append("bfgs_skipped")
        report.bfgs_status = "skipped"
        return dc, report
    t = _as_dense(target)
    theta0 = dc.parameters()
    f0, _ = infidelity_and_gradient(t, dc, theta0)
    res = bfgs.minimize(lambda th: infidelity_and_gradient(t, dc, th), theta0,
                        max_iter=max_iter, grad_tol=grad_tol)
    out = dc
    fin = f0
    if res.fun <= f0:
        out = dc.with_parameters(res.x).canonicalized()
        fin = res.fun
    report.sweep_infidelity = float(f0)
    report.final_infidelity = float(min(1.0, max(0.0, fin)))
    report.bfgs_iterations = res.iterations
    report.bfgs_status = res.status
    if res.status == "linesearch":
        report.flags.append("linesearch_failed")
    report.wall_time = time.perf_counter() - t0
    return out, report


def compile_state(target, gate_set: str, d: int, config: SweepConfig | None = None,
                  refine: bool = True, max_iter=500, grad_tol=1e-8):
    """Full pipeline: growth with sweeping, decomposition, BFGS refinement.

    Returns ``(circuit, decomposed, report)``.
    """
    t0 = time.perf_counter()
    c, report = grow_optimize(target, gate_set, d, config)
    dc = cq.decompose(c)
    if refine:
        dc, brep = bfgs_refine(target, dc, max_iter=max_iter, grad_tol=grad_tol)
        report.final_infidelity = brep.final_infidelity
        report.bfgs_iterations = brep.bfgs_iterations
        report.bfgs_status = brep.bfgs_status
        report.flags += brep.flags
    report.cnot_count = sum(op.name == "cx" for op in dc.ops)
    report.wall_time = time.perf_counter() - t0
    return c, dc, report
