"""Center-sequential circuits, simulation and CNOT + rotation decompositions.

Qubit 0 is the top wire and the most significant bit of a statevector
index. Two-qubit gates act on adjacent pairs ``(b, b + 1)`` and their 4x4
matrices use the index ``2 * q_b + q_{b+1}``. Rotations follow
``R_a(theta) = exp(-i theta sigma_a / 2)``.

A layer holds ``L - 1`` gates in application order: the central gate on
bond ``(L - 1) // 2``, then the lower arm outward, then the upper arm
outward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import mps as mpslib

GATE_SETS = ("su4", "so4", "sparse")
CNOTS_PER_GATE = {"su4": 3, "so4": 2, "sparse": 1}
DENSE_QUBIT_CAP = 24

I2 = np.eye(2)
PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Y = np.array([[0.0, -1j], [1j, 0.0]])
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]])
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=float)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=float)
CNOT_REV = SWAP @ CNOT @ SWAP  # control on the second qubit


def ry(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]])


def rz(theta):
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def rx(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


ROTATIONS = {"rx": rx, "ry": ry, "rz": rz}
GENERATORS = {"rx": PAULI_X, "ry": PAULI_Y, "rz": PAULI_Z}


def canonical_angle(theta: float) -> float:
    """Representative of ``theta`` modulo 2 pi in (-pi, pi]."""
    a = math.remainder(float(theta), 2 * math.pi)
    return math.pi if a == -math.pi else a


def center_bond(L: int) -> int:
    return (L - 1) // 2


def layer_bonds(L: int) -> list:
    """Bond index of each gate of one layer in application order."""
    c = center_bond(L)
    return [c] + list(range(c + 1, L - 1)) + list(range(c - 1, -1, -1))


def cnots_for(gate_set: str, L: int, d: int) -> int:
    return CNOTS_PER_GATE[gate_set] * (L - 1) * d


def parameters_for(gate_set: str, L: int, d: int) -> int:
    per_gate = {"su4": 9, "so4": 4, "sparse": 2}[gate_set]
    per_qubit = 2 if gate_set == "su4" else 1
    return per_gate * (L - 1) * d + per_qubit * L


def _check_gate_set(gate_set):
    if gate_set not in GATE_SETS:
        raise ValueError(f"unknown gate set {gate_set!r}; expected one of {GATE_SETS}")


# ---------------------------------------------------------------------------
# circuits


@dataclass
class Circuit:
    """Layered center-sequential circuit.

    Attributes
    ----------
    n_qubits : int
    gate_set : str
        ``su4``, ``so4`` or ``sparse``.
    layers : list of list
        Layers in time order. Entries are 4x4 matrices, or ``(V1, V2)``
        pairs of 2x2 matrices for sparse gates ``(V1 (x) V2) CNOT``.
    initial : list of ndarray or None
        Single-qubit gates applied first, one per qubit (sparse only).
    """

    n_qubits: int
    gate_set: str
    layers: list = field(default_factory=list)
    initial: list | None = None

    def __post_init__(self):
        _check_gate_set(self.gate_set)
        if self.n_qubits < 2:
            raise ValueError("a center-sequential circuit needs at least 2 qubits")
        if self.gate_set == "sparse" and self.initial is None:
            self.initial = [I2.copy() for _ in range(self.n_qubits)]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def bonds(self) -> list:
        return layer_bonds(self.n_qubits)

    def copy(self) -> "Circuit":
        def cp(g):
            return tuple(x.copy() for x in g) if isinstance(g, tuple) else g.copy()
        return Circuit(self.n_qubits, self.gate_set,
                       [[cp(g) for g in layer] for layer in self.layers],
                       None if self.initial is None else [v.copy() for v in self.initial])

    def gate_matrix(self, layer: int, pos: int) -> np.ndarray:
        return gate_matrix(self.layers[layer][pos], self.gate_set)

    def timeline(self):
        """Yield ``(layer, position, bond, matrix)`` for every two-qubit gate."""
        bonds = self.bonds
        for li, layer in enumerate(self.layers):
            for pos, g in enumerate(layer):
                yield li, pos, bonds[pos], gate_matrix(g, self.gate_set)

    def with_layer_first(self, layer) -> "Circuit":
        """Copy with ``layer`` prepended so it acts before all others."""
        out = self.copy()
        out.layers.insert(0, list(layer))
        return out


def gate_matrix(g, gate_set: str) -> np.ndarray:
    if gate_set == "sparse":
        v1, v2 = g
        return np.kron(v1, v2) @ CNOT
    return np.asarray(g)


def build_center_sequential(L: int, d: int, gate_set: str, init=None) -> Circuit:
    """Circuit with ``d`` layers of ``L - 1`` gates.

    ``init`` optionally supplies the layers (list of gate lists); identity
    gates are used otherwise. Sparse identity gates are ``(1 (x) 1) CNOT``.
    """
    _check_gate_set(gate_set)
    if L < 2 or d < 0:
        raise ValueError("need L >= 2 and d >= 0")
    if init is not None:
        layers = [list(layer) for layer in init]
        if len(layers) != d or any(len(layer) != L - 1 for layer in layers):
            raise ValueError("init does not match the requested layout")
    elif gate_set == "sparse":
        layers = [[(I2.copy(), I2.copy()) for _ in range(L - 1)] for _ in range(d)]
    else:
        layers = [[np.eye(4) for _ in range(L - 1)] for _ in range(d)]
    return Circuit(L, gate_set, layers)


# ---------------------------------------------------------------------------
# statevector kernels


def apply_1q(psi, u, q: int, L: int):
    """Apply a 2x2 matrix to qubit ``q`` of a flat statevector."""
    return np.matmul(u, psi.reshape(1 << q, 2, -1)).reshape(-1)


def apply_2q(psi, g, q: int, L: int):
    """Apply a 4x4 matrix to adjacent qubits ``(q, q + 1)``."""
    return np.matmul(g, psi.reshape(1 << q, 4, -1)).reshape(-1)


def apply_cx(psi, control: int, target: int, L: int):
    out = psi.reshape((2,) * L).copy()
    idx = [slice(None)] * L
    idx[control] = 1
    sub = out[tuple(idx)]
    axis = target if target < control else target - 1
    out[tuple(idx)] = np.flip(sub, axis=axis)
    return out.reshape(-1)


def zero_state(L: int, dtype=float):
    psi = np.zeros(1 << L, dtype=dtype)
    psi[0] = 1.0
    return psi


def _check_dense(L):
    if L > DENSE_QUBIT_CAP:
        raise ValueError(f"dense simulation is capped at {DENSE_QUBIT_CAP} qubits")


def apply_dense(c, psi=None):
    """Simulate a Circuit or DecomposedCircuit on ``psi`` (default ``|0...0>``)."""
    L = c.n_qubits
    _check_dense(L)
    psi = zero_state(L) if psi is None else np.asarray(psi)
    if isinstance(c, DecomposedCircuit):
        for op in c.ops:
            psi = apply_op(psi, op, L)
        return psi
    if c.initial is not None:
        for q, v in enumerate(c.initial):
            psi = apply_1q(psi, v, q, L)
    for _, _, bond, g in c.timeline():
        psi = apply_2q(psi, g, bond, L)
    return psi


def apply_gate_mps(m, g, site: int, chi_max=None, tol=0.0):
    """Contract a two-qubit gate into an MPS and re-split by SVD."""
    return mpslib.apply_two_site(m, g, site, chi_max=chi_max, tol=tol)


def circuit_to_mps(c: Circuit, chi_max=None) -> "mpslib.MPS":
    """Prepared state as an MPS, bonds capped at ``chi_max``."""
    m = mpslib.MPS.basis([0] * c.n_qubits)
    if c.initial is not None:
        for q, v in enumerate(c.initial):
            m = mpslib.apply_one_site(m, v, q)
    for _, _, bond, g in c.timeline():
        m = apply_gate_mps(m, g, bond, chi_max)
    return m


def schedule_depth(c: Circuit) -> int:
    """Two-qubit depth with every gate placed at its earliest time step."""
    free = [0] * c.n_qubits
    for _, _, bond, _ in c.timeline():
        t = max(free[bond], free[bond + 1]) + 1
        free[bond] = free[bond + 1] = t
    return max(free)


def counts(c) -> dict:
    """CNOT count, free-parameter count and two-qubit depth."""
    if isinstance(c, DecomposedCircuit):
        cx = sum(op.name == "cx" for op in c.ops)
        return {"cnots": cx, "parameters": len(c.parameters()), "depth": c.cnot_depth()}
    L, d = c.n_qubits, c.depth
    return {"cnots": cnots_for(c.gate_set, L, d),
            "parameters": parameters_for(c.gate_set, L, d),
            "depth": schedule_depth(c)}


# ---------------------------------------------------------------------------
# decomposed circuits


class Op(NamedTuple):
    name: str           # "cx", "rx", "ry" or "rz"
    qubits: tuple
    angle: float | None = None


@dataclass
class DecomposedCircuit:
    """Ordered CNOT and rotation gates with an untracked global phase."""

    n_qubits: int
    ops: list = field(default_factory=list)
    phase: complex = 1.0

    def parameters(self) -> np.ndarray:
        return np.array([op.angle for op in self.ops if op.name != "cx"], dtype=float)

    def with_parameters(self, theta) -> "DecomposedCircuit":
        theta = iter(np.asarray(theta, dtype=float))
        ops = [op if op.name == "cx" else Op(op.name, op.qubits, float(next(theta)))
               for op in self.ops]
        return DecomposedCircuit(self.n_qubits, ops, self.phase)

    def canonicalized(self) -> "DecomposedCircuit":
        """Angles mapped into (-pi, pi]; each 2 pi shift flips the phase sign."""
        ops = []
        phase = self.phase
        for op in self.ops:
            if op.name == "cx":
                ops.append(op)
                continue
            a = canonical_angle(op.angle)
            if round((op.angle - a) / (2 * math.pi)) % 2:
                phase = -phase
            ops.append(Op(op.name, op.qubits, a))
        return DecomposedCircuit(self.n_qubits, ops, phase)

    def cnot_depth(self) -> int:
        free = [0] * self.n_qubits
        for op in self.ops:
            if op.name == "cx":
                a, b = op.qubits
                t = max(free[a], free[b]) + 1
                free[a] = free[b] = t
        return max(free) if free else 0

    def is_real(self) -> bool:
        return all(op.name in ("cx", "ry") for op in self.ops)


def op_matrix(op: Op) -> np.ndarray:
    return ROTATIONS[op.name](op.angle)


def apply_op(psi, op: Op, L: int):
    if op.name == "cx":
        return apply_cx(psi, op.qubits[0], op.qubits[1], L)
    u = op_matrix(op)
    if np.iscomplexobj(u) and not np.iscomplexobj(psi):
        psi = psi.astype(complex)
    return apply_1q(psi, u, op.qubits[0], L)


def recompose(dc: DecomposedCircuit) -> np.ndarray:
    """Full unitary of an op list (columns are images of basis states)."""
    L = dc.n_qubits
    _check_dense(L)
    dim = 1 << L
    cols = []
    for k in range(dim):
        psi = np.zeros(dim, dtype=complex)
        psi[k] = 1.0
        for op in dc.ops:
            psi = apply_op(psi, op, L)
        cols.append(psi)
    return np.array(cols).T


# ---------------------------------------------------------------------------
# single-qubit helpers


def zyz_angles(u):
    """Angles ``(lam, theta, phi)`` with ``u = e^{i a} Rz(phi) Ry(theta) Rz(lam)``."""
    u = np.asarray(u, dtype=complex)
    det = np.linalg.det(u)
    v = u / np.sqrt(det)
    theta = 2 * math.atan2(abs(v[1, 0]), abs(v[0, 0]))
    a = float(np.angle(v[1, 1])) if abs(v[1, 1]) > 1e-12 else 0.0
    b = float(np.angle(v[1, 0])) if abs(v[1, 0]) > 1e-12 else 0.0
    return a - b, theta, a + b


def ry_angle(v) -> float:
    """Angle of a real rotation matrix ``R_y(theta)``."""
    return 2 * math.atan2(v[1, 0], v[0, 0])


# ---------------------------------------------------------------------------
# SO(4): two CNOTs and y rotations


def _two_forms(sign):
    out = []
    for (i, j), (k, l) in (((0, 1), (2, 3)), ((0, 2), (3, 1)), ((0, 3), (1, 2))):
        g = np.zeros((4, 4))
        g[i, j], g[j, i] = 1.0, -1.0
        g[k, l] += sign
        g[l, k] -= sign
        out.append(g / math.sqrt(2))
    return np.array(out)


_SELF_DUAL = _two_forms(1.0)
_ANTI_DUAL = _two_forms(-1.0)
_E1, _E2, _E3 = np.eye(3)
# frames in which y rotations and the CNOT-conjugated generators become z/y axes
_FRAME_P = np.column_stack([_E2, _E3, _E1])
_FRAME_M = np.column_stack([_E3, -_E1, -_E2])


def _adjoint(u, basis):
    conj = np.einsum("ij,bjk,lk->bil", u, basis, u)
    return np.einsum("aij,bij->ab", basis, conj) / 2


def _euler_zyz3(r):
    """Angles with ``r = Rz(a) Ry(b) Rz(g)`` for a 3x3 rotation."""
    b = math.atan2(math.hypot(r[0, 2], r[1, 2]), r[2, 2])
    if math.sin(b) > 1e-12:
        a = math.atan2(r[1, 2], r[0, 2])
        g = math.atan2(r[2, 1], -r[2, 0])
    else:
        g = 0.0
        a = math.atan2(r[1, 0], r[0, 0]) if r[2, 2] > 0 else math.atan2(-r[1, 0], -r[0, 0])
    return a, b, g


@dataclass
class SO4Decomposition:
    """``U = sign * (Ry(t5) (x) Ry(t6)) CX (Ry(c) (x) Ry(d)) CX (Ry(t1) (x) Ry(t2))``.

    ``pre = (t1, t2)`` are merged into the preceding rotations of a circuit;
    ``core = (c, d, t5, t6)`` are the free parameters of the gate.
    """

    pre: tuple
    core: tuple
    sign: float

    def matrix(self) -> np.ndarray:
        t1, t2 = self.pre
        c, d, t5, t6 = self.core
        m = np.kron(ry(t5), ry(t6)) @ CNOT @ np.kron(ry(c), ry(d)) @ CNOT @ np.kron(ry(t1), ry(t2))
        return self.sign * m


def decompose_so4(u, atol=1e-9) -> SO4Decomposition:
    """Two-CNOT decomposition of a real special orthogonal 4x4 matrix.

    The action of ``u`` on self-dual and anti-self-dual two-forms gives the
    two SO(3) factors of SO(4) = (SU(2) x SU(2)) / Z2; their Euler angles
    are the y-rotation angles.
    """
    u = np.asarray(u)
    if np.iscomplexobj(u):
        if np.max(np.abs(u.imag)) > atol:
            raise ValueError("SO(4) decomposition needs a real matrix")
        u = u.real
    if np.max(np.abs(u.T @ u - np.eye(4))) > atol:
        raise ValueError("matrix is not orthogonal")
    if np.linalg.det(u) < 0:
        raise ValueError("matrix has determinant -1; apply a CNOT correction first")
    a1, b1, g1 = _euler_zyz3(_FRAME_P.T @ _adjoint(u, _SELF_DUAL) @ _FRAME_P)
    a2, b2, g2 = _euler_zyz3(_FRAME_M.T @ _adjoint(u, _ANTI_DUAL) @ _FRAME_M)
    dec = SO4Decomposition(pre=(g2, g1), core=(b1, b2, a2, a1), sign=1.0)
    rec = dec.matrix()
    dec.sign = 1.0 if np.sum(rec * u) >= 0 else -1.0
    return dec


# ---------------------------------------------------------------------------
# SU(4): KAK in the magic basis and a three-CNOT core


_MAGIC = np.array([[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]]) / math.sqrt(2)
_XX = np.kron(PAULI_X, PAULI_X)
_YY = np.kron(PAULI_Y, PAULI_Y)
_ZZ = np.kron(PAULI_Z, PAULI_Z)
# eigenvalues of XX, YY, ZZ along the magic basis
_MAGIC_SIGNS = np.array([np.real(np.diag(_MAGIC.conj().T @ p @ _MAGIC))
                         for p in (_XX, _YY, _ZZ)])


def su4_core(t1, t2, t3) -> np.ndarray:
    """Three-CNOT interaction core."""
    return (CNOT_REV @ np.kron(rz(t1), ry(t2)) @ CNOT
            @ np.kron(I2, ry(t3)) @ CNOT_REV)


def interaction(a, b, c) -> np.ndarray:
    """``exp(i (a XX + b YY + c ZZ))``, diagonal in the magic basis."""
    diag = np.exp(1j * (_MAGIC_SIGNS.T @ np.array([a, b, c])))
    return _MAGIC @ np.diag(diag) @ _MAGIC.conj().T


def _kron_factor(m):
    """Nearest ``A (x) B`` with ``det A = 1`` via the rank-1 reshuffle."""
    r = m.reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    u, s, vh = np.linalg.svd(r)
    a = (u[:, 0] * math.sqrt(s[0])).reshape(2, 2)
    b = (vh[0] * math.sqrt(s[0])).reshape(2, 2)
    f = np.sqrt(np.linalg.det(a))
    return a / f, b * f


def kak(u):
    """``u = phase * (A1 (x) A2) exp(i(a XX + b YY + c ZZ)) (B1 (x) B2)``.

    Returns ``(phase, (A1, A2), (a, b, c), (B1, B2))``. The simultaneous
    diagonalization uses a fixed-seed random real combination, so the
    output is deterministic.
    """
    u = np.asarray(u, dtype=complex)
    ph = np.linalg.det(u) ** 0.25
    up = _MAGIC.conj().T @ (u / ph) @ _MAGIC
    m2 = up.T @ up
    rng = np.random.default_rng(1234)
    for _ in range(50):
        x, y = rng.normal(size=2)
        _, p = np.linalg.eigh(x * m2.real + y * m2.imag)
        dg = p.T @ m2 @ p
        if np.max(np.abs(dg - np.diag(np.diag(dg)))) < 1e-10:
            break
    else:
        raise np.linalg.LinAlgError("magic-basis diagonalization failed")
    if np.linalg.det(p) < 0:
        p[:, 0] *= -1
    th = np.angle(np.diag(p.T @ m2 @ p)) / 2
    if np.real(np.prod(np.exp(1j * th))) < 0:
        th[0] += math.pi
    k1 = up @ p @ np.diag(np.exp(-1j * th))
    left = _MAGIC @ k1 @ _MAGIC.conj().T
    right = _MAGIC @ p.T @ _MAGIC.conj().T
    a1, a2 = _kron_factor(left)
    b1, b2 = _kron_factor(right)
    g, a, b, c = np.linalg.solve(np.vstack([np.ones(4), _MAGIC_SIGNS]).T, th)
    return ph * np.exp(1j * g), (a1, a2), (float(a), float(b), float(c)), (b1, b2)


def weyl_coordinates(u) -> tuple:
    """Interaction angles folded into ``(-pi/4, pi/4]`` and sorted by magnitude."""
    _, _, abc, _ = kak(u)
    v = [(x + math.pi / 4) % (math.pi / 2) - math.pi / 4 for x in abc]
    v = [math.pi / 4 if abs(x + math.pi / 4) < 1e-9 else x for x in v]
    v = sorted(v, key=lambda x: -abs(x))
    return tuple(v)


@dataclass
class SU4Decomposition:
    """``U = phase * (V1 (x) V2) core(t1, t2, t3) (A3 (x) A4)``.

    ``pre = (A3, A4)`` are merged into preceding single-qubit gates;
    ``angles`` holds the nine gate angles: the three core angles followed by
    the ZYZ angles ``(lam, theta, phi)`` of ``V1`` and of ``V2``.
    """

    pre: tuple
    post: tuple
    core: tuple
    phase: complex

    @property
    def angles(self) -> np.ndarray:
        return np.array(list(self.core) + list(zyz_angles(self.post[0]))
                        + list(zyz_angles(self.post[1])))

    def matrix(self) -> np.ndarray:
        return (self.phase * np.kron(*self.post) @ su4_core(*self.core)
                @ np.kron(*self.pre))


def decompose_su4(u, atol=1e-9) -> SU4Decomposition:
    """Three-CNOT decomposition of any 4x4 unitary, exact up to phase."""
    u = np.asarray(u, dtype=complex)
    if np.max(np.abs(u.conj().T @ u - np.eye(4))) > atol:
        raise ValueError("matrix is not unitary")
    _, (a1, a2), (a, b, c), (b1, b2) = kak(u)
    core = (-2 * c + math.pi / 2, 2 * b - math.pi / 2, -2 * a + math.pi / 2)
    post = (a1 @ rz(-math.pi / 2), a2)
    pre = (b1, rz(math.pi / 2) @ b2)
    dec = SU4Decomposition(pre=pre, post=post, core=core, phase=1.0)
    ratio = np.vdot(dec.matrix(), u) / 4
    dec.phase = ratio / abs(ratio)
    return dec


# ---------------------------------------------------------------------------
# whole-circuit decomposition


def decompose(c: Circuit, from_zero: bool = True) -> DecomposedCircuit:
    """Rewrite a layered circuit as CNOT and rotation gates.

    Adjacent single-qubit pieces are merged once across gate boundaries.
    With ``from_zero`` the circuit is assumed to act on ``|0...0>``, which
    removes the first z rotation on every qubit in the SU(4) set.
    """
    if c.gate_set == "sparse":
        return decompose_sparse(c)
    L = c.n_qubits
    ops = []
    phase = 1.0 + 0j
    if c.gate_set == "so4":
        pending = [0.0] * L
        for _, _, q, g in c.timeline():
            dec = decompose_so4(g)
            phase *= dec.sign
            t1, t2 = dec.pre
            cc, dd, t5, t6 = dec.core
            ops += [Op("ry", (q,), pending[q] + t1), Op("ry", (q + 1,), pending[q + 1] + t2),
                    Op("cx", (q, q + 1)), Op("ry", (q,), cc), Op("ry", (q + 1,), dd),
                    Op("cx", (q, q + 1))]
            pending[q], pending[q + 1] = t5, t6
        ops += [Op("ry", (q,), pending[q]) for q in range(L)]
        return DecomposedCircuit(L, ops, phase).canonicalized()

    pending = [I2.astype(complex) for _ in range(L)]
    fresh = [True] * L

    def flush(q):
        lam, theta, phi = zyz_angles(pending[q])
        det = np.linalg.det(pending[q])
        nonlocal phase
        phase *= np.sqrt(det)
        out = [] if (from_zero and fresh[q]) else [Op("rz", (q,), lam)]
        if from_zero and fresh[q]:
            # Rz(lam)|0> only contributes a phase
            phase *= np.exp(-0.5j * lam)
        fresh[q] = False
        return out + [Op("ry", (q,), theta), Op("rz", (q,), phi)]

    for _, _, q, g in c.timeline():
        dec = decompose_su4(g)
        phase *= dec.phase
        pending[q] = dec.pre[0] @ pending[q]
        pending[q + 1] = dec.pre[1] @ pending[q + 1]
        ops += flush(q) + flush(q + 1)
        t1, t2, t3 = dec.core
        ops += [Op("cx", (q + 1, q)), Op("ry", (q + 1,), t3), Op("cx", (q, q + 1)),
                Op("rz", (q,), t1), Op("ry", (q + 1,), t2), Op("cx", (q + 1, q))]
        pending[q], pending[q + 1] = dec.post
    for q in range(L):
        ops += flush(q)
    return DecomposedCircuit(L, ops, phase).canonicalized()


def _det_sign(v) -> float:
    return float(np.sign(np.linalg.det(v)))


def fix_sparse_determinants(c: Circuit) -> Circuit:
    """Make every single-qubit gate of a sparse circuit a y rotation.

    Reflections ``V = (V X) X`` push an X gate backwards in time. Past a CNOT
    target it commutes; past a control it spawns a second X on the target
    qubit, ``(X (x) 1) CNOT = CNOT (X (x) X)``. At the start of a wire it is
    absorbed using ``X|0> = Ry(pi)|0>``. Qubits are processed top to bottom,
    each from its last gate to its first.
    """
    if c.gate_set != "sparse":
        raise ValueError("determinant fixing applies to sparse circuits")
    out = c.copy()
    L = out.n_qubits
    for v in out.initial:
        _check_real_2x2(v)
    out.layers = [[tuple(np.asarray(x) for x in g) for g in layer] for layer in out.layers]
    for layer in out.layers:
        for v1, v2 in layer:
            _check_real_2x2(v1)
            _check_real_2x2(v2)
    bonds = out.bonds
    # per-qubit history: ("init", None) or (layer, pos, slot); slot 0 is the control
    history = [[("init", None, None)] for _ in range(L)]
    for li, layer in enumerate(out.layers):
        for pos, b in enumerate(bonds):
            history[b].append((li, pos, 0))
            history[b + 1].append((li, pos, 1))

    def get(ref):
        li, pos, slot = ref
        return out.initial[pos] if li == "init" else out.layers[li][pos][slot]

    def put(ref, v):
        li, pos, slot = ref
        if li == "init":
            out.initial[pos] = v
        else:
            g = list(out.layers[li][pos])
            g[slot] = v
            out.layers[li][pos] = tuple(g)

    for q in range(L):
        hist = history[q]
        for k in range(len(hist) - 1, -1, -1):
            ref = hist[k]
            if k == 0:
                ref = ("init", q, None)
            v = get(ref)
            if _det_sign(v) > 0:
                continue
            if k == 0:
                put(ref, v @ PAULI_X @ ry(math.pi))
                continue
            put(ref, v @ PAULI_X)
            prev = hist[k - 1] if k > 1 else ("init", q, None)
            put(prev, PAULI_X @ get(prev))
            li, pos, slot = ref
            if slot == 0:
                # the CNOT also flips its target: absorb into the target's
                # previous single-qubit gate
                tgt = history[q + 1]
                j = tgt.index((li, pos, 1))
                tprev = tgt[j - 1] if j > 1 else ("init", q + 1, None)
                put(tprev, PAULI_X @ get(tprev))
    return out


def _check_real_2x2(v):
    v = np.asarray(v)
    if np.iscomplexobj(v) and np.max(np.abs(v.imag)) > 1e-12:
        raise ValueError("sparse gates must have real single-qubit components")
    if np.max(np.abs(v.real.T @ v.real - I2)) > 1e-9:
        raise ValueError("sparse single-qubit components must be orthogonal")


def decompose_sparse(c: Circuit) -> DecomposedCircuit:
    """CNOT + R_y form of a sparse circuit after determinant fixing."""
    fixed = fix_sparse_determinants(c)
    L = fixed.n_qubits
    ops = [Op("ry", (q,), ry_angle(np.real(v))) for q, v in enumerate(fixed.initial)]
    bonds = fixed.bonds
    for layer in fixed.layers:
        for b, (v1, v2) in zip(bonds, layer):
            ops += [Op("cx", (b, b + 1)), Op("ry", (b,), ry_angle(np.real(v1))),
                    Op("ry", (b + 1,), ry_angle(np.real(v2)))]
    return DecomposedCircuit(L, ops, 1.0).canonicalized()


# ---------------------------------------------------------------------------
# text format


class CircuitParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def export_circuit(dc: DecomposedCircuit) -> str:
    lines = ["qcirc 1", f"qubits {dc.n_qubits}"]
    for op in dc.ops:
        if op.name == "cx":
            lines.append(f"cx {op.qubits[0]} {op.qubits[1]}")
        else:
            lines.append(f"{op.name} {op.qubits[0]} {canonical_angle(op.angle):.17g}")
    return "\n".join(lines) + "\n"


def parse_circuit(text: str) -> DecomposedCircuit:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "qcirc 1":
        raise CircuitParseError(1, "expected header 'qcirc 1'")
    if len(lines) < 2:
        raise CircuitParseError(2, "missing 'qubits <L>' line")
    parts = lines[1].split()
    if len(parts) != 2 or parts[0] != "qubits" or not parts[1].isdigit():
        raise CircuitParseError(2, "expected 'qubits <L>'")
    L = int(parts[1])
    if L < 1:
        raise CircuitParseError(2, "qubit count must be positive")
    ops = []
    for no, raw in enumerate(lines[2:], start=3):
        parts = raw.split()
        if not parts:
            continue
        name = parts[0]
        try:
            if name == "cx":
                if len(parts) != 3:
                    raise ValueError("expected 'cx <control> <target>'")
                a, b = int(parts[1]), int(parts[2])
                if a == b:
                    raise ValueError("control and target coincide")
                qubits = (a, b)
                angle = None
            elif name in ROTATIONS:
                if len(parts) != 3:
                    raise ValueError(f"expected '{name} <qubit> <angle>'")
                qubits = (int(parts[1]),)
                angle = float(parts[2])
                if not math.isfinite(angle):
                    raise ValueError("angle must be finite")
            else:
                raise ValueError(f"unknown gate {name!r}")
        except ValueError as exc:
            raise CircuitParseError(no, str(exc)) from None
        if any(not 0 <= x < L for x in qubits):
            raise CircuitParseError(no, "qubit index out of range")
        ops.append(Op(name, qubits, angle))
    return DecomposedCircuit(L, ops)


# ---------------------------------------------------------------------------
# random gates


def random_su4(rng) -> np.ndarray:
    """Haar-random 4x4 unitary."""
    z = (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_so4(rng) -> np.ndarray:
    """Haar-random real rotation of R^4."""
    q, r = np.linalg.qr(rng.normal(size=(4, 4)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_o2(rng) -> np.ndarray:
    v = ry(rng.uniform(-math.pi, math.pi))
    return v @ PAULI_X if rng.random() < 0.5 else v


def random_circuit(L: int, d: int, gate_set: str, rng) -> Circuit:
    """Circuit with independently random gates of the given set."""
    c = build_center_sequential(L, d, gate_set)
    for layer in c.layers:
        for k in range(len(layer)):
            if gate_set == "su4":
                layer[k] = random_su4(rng)
            elif gate_set == "so4":
                layer[k] = random_so4(rng)
            else:
                layer[k] = (random_o2(rng), random_o2(rng))
    if gate_set == "sparse":
        c.initial = [random_o2(rng) for _ in range(L)]
    return c
