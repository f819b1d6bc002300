"""Desk-scale classifiers on encoded image states.

Tensor-network classifiers carry an extra label leg on one central tensor:

* MPS classifier: ``f_l = <W_l|psi>``, one tensor train with the label leg.
* MPO classifier: ``f_l = <psi|O_l|psi>``.

Circuit classifiers apply a trainable staircase of SU(4) gates and read out
a weighted sum of the computational-basis probabilities of the last four
qubits. Tensor-network gradients are exact (hold-one-tensor-out
environments); circuit gradients use central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mps as mpslib

N_CLASSES = 10


# ---------------------------------------------------------------------------
# tensor-network classifiers


@dataclass
class TNClassifier:
    """MPS (``kind="mps"``) or MPO (``kind="mpo"``) classifier.

    Site tensors are ``(l, p, r)`` for the MPS and ``(l, p, p, r)`` (output,
    input) for the MPO. The tensor at ``center`` has the label leg inserted
    before the right bond: ``(l, p, C, r)`` or ``(l, p, p, C, r)``.
    """

    kind: str
    tensors: list
    center: int
    chi: int | None = None

    def __post_init__(self):
        if self.kind not in ("mps", "mpo"):
            raise ValueError(f"unknown classifier kind {self.kind!r}")
        if not 0 <= self.center < len(self.tensors):
            raise ValueError("label site out of range")

    def __len__(self):
        return len(self.tensors)

    @property
    def n_classes(self) -> int:
        return self.tensors[self.center].shape[-2]

    @property
    def bonds(self) -> list:
        return [t.shape[-1] for t in self.tensors[:-1]]

    def copy(self) -> "TNClassifier":
        return TNClassifier(self.kind, [t.copy() for t in self.tensors], self.center, self.chi)

    def transpose(self) -> "TNClassifier":
        """MPO classifier with every operator ``O_l`` transposed."""
        if self.kind != "mpo":
            raise ValueError("only MPO classifiers have a transpose")
        ts = [np.swapaxes(t, 1, 2) for t in self.tensors]
        return TNClassifier("mpo", ts, self.center, self.chi)

    def symmetrized(self) -> "TNClassifier":
        """MPO classifier for ``(O_l + O_l^T) / 2`` as a bond-doubled direct sum."""
        if self.kind != "mpo":
            raise ValueError("only MPO classifiers can be symmetrized")
        a, b = self.tensors, self.transpose().tensors
        L = len(a)
        out = []
        for k in range(L):
            x, y = a[k], b[k]
            if L == 1:
                out.append(0.5 * (x + y))
                continue
            la, ra = x.shape[0], x.shape[-1]
            lb, rb = y.shape[0], y.shape[-1]
            if k == 0:
                t = np.concatenate([x, y], axis=-1)
            elif k == L - 1:
                t = np.concatenate([x, y], axis=0)
            else:
                t = np.zeros((la + lb,) + x.shape[1:-1] + (ra + rb,))
                t[:la, ..., :ra] = x
                t[la:, ..., ra:] = y
            if k == 0:
                t = 0.5 * t
            out.append(t)
        return TNClassifier("mpo", out, self.center, self.chi)

    def norm(self) -> float:
        """Global norm (Frobenius norm of the full operator for an MPO)."""
        return _as_mps(self).norm()

    def scaled(self, factor) -> "TNClassifier":
        out = self.copy()
        out.tensors[self.center] = out.tensors[self.center] * factor
        return out

    def to_dense(self) -> np.ndarray:
        """Dense weights, shape ``(C, 2^L)`` (MPS) or ``(C, 2^L, 2^L)`` (MPO)."""
        L = len(self)
        p = self.tensors[0].shape[1]
        m = _as_mps(self).to_dense()
        sizes = [t.shape[1] for t in self.tensors]
        if self.kind == "mps":
            shape = sizes[:self.center] + [sizes[self.center], self.n_classes] + sizes[self.center + 1:]
            w = m.reshape(shape)
            w = np.moveaxis(w, self.center + 1, 0)
            return w.reshape(self.n_classes, -1)
        shape = []
        for k in range(L):
            shape += [p, p] + ([self.n_classes] if k == self.center else [])
        w = m.reshape(shape)
        w = np.moveaxis(w, 2 * self.center + 2, 0)
        perm = [0] + [1 + 2 * k for k in range(L)] + [2 + 2 * k for k in range(L)]
        w = w.transpose(perm)
        return w.reshape(self.n_classes, p ** L, p ** L)


def _as_mps(clf: TNClassifier) -> mpslib.MPS:
    """Flatten all non-bond legs of every site into one physical leg."""
    return mpslib.MPS([t.reshape(t.shape[0], -1, t.shape[-1]) for t in clf.tensors])


def _from_mps(m: mpslib.MPS, kind, center, n_classes, p=2, chi=None) -> TNClassifier:
    ts = []
    for k, t in enumerate(m.tensors):
        legs = (p,) if kind == "mps" else (p, p)
        if k == center:
            legs = legs + (n_classes,)
        ts.append(t.reshape((t.shape[0],) + legs + (t.shape[-1],)))
    return TNClassifier(kind, ts, center, chi)


def default_center(L: int) -> int:
    return L // 2


def classifier_bonds(L: int, chi: int, kind: str, p: int = 2) -> list:
    """Bond dimensions ``min(chi, q^k, q^(L-k))`` with ``q`` the site size."""
    q = p if kind == "mps" else p * p
    return [int(min(chi, q ** (b + 1), q ** (L - 1 - b))) for b in range(L - 1)]


def site_stds(bonds: list, center: int) -> list:
    """Entry standard deviations giving unit output variance.

    Sites left of the label use their left bond, sites right of it their
    right bond, the label site both; open boundaries count as 1.
    """
    L = len(bonds) + 1
    full = [1] + list(bonds) + [1]
    out = []
    for k in range(L):
        if k < center:
            out.append(1.0 / math.sqrt(full[k]))
        elif k > center:
            out.append(1.0 / math.sqrt(full[k + 1]))
        else:
            out.append(1.0 / math.sqrt(full[k] * full[k + 1]))
    return out


def init_random(kind: str, L: int, chi: int, center: int | None = None, seed=0,
                n_classes: int = N_CLASSES, p: int = 2) -> TNClassifier:
    """Gaussian classifier with unit output variance for normalized inputs."""
    if chi < 1:
        raise ValueError("chi must be at least 1")
    center = default_center(L) if center is None else center
    rng = np.random.default_rng(seed)
    bonds = classifier_bonds(L, chi, kind, p)
    stds = site_stds(bonds, center)
    full = [1] + bonds + [1]
    ts = []
    for k in range(L):
        legs = (p,) if kind == "mps" else (p, p)
        if k == center:
            legs = legs + (n_classes,)
        ts.append(rng.normal(0.0, stds[k], size=(full[k],) + legs + (full[k + 1],)))
    return TNClassifier(kind, ts, center, chi)


def _label_embedded(m: mpslib.MPS, label, center, n_classes) -> mpslib.MPS:
    ts = list(m.tensors)
    l, p, r = ts[center].shape
    t = np.zeros((l, p, n_classes, r), dtype=ts[center].dtype)
    t[:, :, label, :] = ts[center]
    ts[center] = t.reshape(l, p * n_classes, r)
    return mpslib.MPS(ts)


def _doubled(m: mpslib.MPS) -> mpslib.MPS:
    """``|psi><psi|`` as a tensor train with site legs (out, in) fused."""
    ts = []
    for t in m.tensors:
        l, p, r = t.shape
        d = np.einsum("asb,xty->axstby", t, t.conj())
        ts.append(d.reshape(l * l, p * p, r * r))
    return mpslib.MPS(ts)


def init_warmstart(kind: str, states, labels, chi: int, chi_work: int = 100,
                   center: int | None = None, n_classes: int = N_CLASSES,
                   norm: float | None = None) -> TNClassifier:
    """Classifier from the label-routed sum of training states.

    Every state (or its projector, for the MPO) is placed in its own label
    slice, the sum is compressed in batches and the result rescaled to
    ``sqrt(2^L C)`` (MPS) or Frobenius norm ``sqrt(2^(2L) C)`` (MPO).
    """
    states = list(states)
    if not states:
        raise ValueError("warm start needs at least one state")
    L = len(states[0])
    p = states[0].dims[0]
    center = default_center(L) if center is None else center
    parts = []
    for s, lab in zip(states, labels):
        m = s if kind == "mps" else _doubled(s)
        parts.append(_label_embedded(m, int(lab), center, n_classes))
    total = mpslib.add_compress(parts, chi_work=chi_work, chi_final=chi)
    if norm is None:
        norm = math.sqrt(2.0 ** (L if kind == "mps" else 2 * L) * n_classes)
    total = total.scaled(norm / total.norm())
    return _from_mps(total, kind, center, n_classes, p, chi)


# ---------------------------------------------------------------------------
# batched contraction


def stack_states(states) -> list:
    """Stack MPSs site by site, zero-padding bonds to a common size.

    Returns a list of arrays of shape ``(N, l, p, r)``.
    """
    states = list(states)
    L = len(states[0])
    out = []
    for k in range(L):
        ls = max(s.tensors[k].shape[0] for s in states)
        rs = max(s.tensors[k].shape[2] for s in states)
        p = states[0].tensors[k].shape[1]
        dtype = np.result_type(*[s.tensors[k] for s in states])
        arr = np.zeros((len(states), ls, p, rs), dtype=dtype)
        for n, s in enumerate(states):
            t = s.tensors[k]
            arr[n, :t.shape[0], :, :t.shape[2]] = t
        out.append(arr)
    return out


def _as_batch(inputs):
    if isinstance(inputs, mpslib.MPS):
        return stack_states([inputs])
    if isinstance(inputs, list) and inputs and isinstance(inputs[0], mpslib.MPS):
        return stack_states(inputs)
    return inputs


# MPS classifier steps; env shapes (n, a, x) with a the classifier bond.
def _mps_left(env, psi, w):
    return np.einsum("nax,nxsy,asb->nby", env, psi, w, optimize=True)


def _mps_right(env, psi, w):
    return np.einsum("nby,nxsy,asb->nax", env, psi, w, optimize=True)


# MPO classifier steps; env shapes (n, a, x, x') with x the bra side.
# Contractions are ordered by hand: letting einsum pick a path can form the
# outer product of the two input copies first.
def _mpo_left(env, psi, w):
    t = np.einsum("naxz,nxsy->nazsy", env, psi.conj())
    t = np.einsum("nazsy,astb->nzybt", t, w)
    return np.einsum("nzybt,nztw->nbyw", t, psi)


def _mpo_right(env, psi, w):
    t = np.einsum("nbyw,nztw->nbyzt", env, psi)
    t = np.einsum("nbyzt,astb->nyzas", t, w)
    return np.einsum("nyzas,nxsy->naxz", t, psi.conj())


def _mps_site_grad(left, psi, right):
    return np.einsum("nax,nxsy,nby->asb", left, psi, right, optimize=True)


def _mpo_site_grad(left, psi, right):
    t = np.einsum("naxz,nxsy->nazsy", left, psi.conj())
    u = np.einsum("nbyw,nztw->nbyzt", right, psi)
    return np.einsum("nazsy,nbyzt->astb", t, u)


class _Contraction:
    """Left and right environments of a batch against one classifier.

    The label leg of the center tensor is folded into its right bond, so
    every contraction step has the same shape as an ordinary site.
    """

    def __init__(self, clf: TNClassifier, batch):
        self.clf = clf
        self.psi = batch
        self.n = batch[0].shape[0]
        self.mps = clf.kind == "mps"
        self.step_l = _mps_left if self.mps else _mpo_left
        self.step_r = _mps_right if self.mps else _mpo_right
        self.site_grad = _mps_site_grad if self.mps else _mpo_site_grad
        L, c = len(clf), clf.center
        w = clf.tensors[c]
        self.n_cls, self.rb = w.shape[-2], w.shape[-1]
        self.wc = w.reshape(w.shape[:-2] + (-1,))
        one = np.ones((self.n, 1, 1) if self.mps else (self.n, 1, 1, 1))
        self.left = [one]
        for k in range(c):
            self.left.append(self.step_l(self.left[-1], batch[k], clf.tensors[k]))
        self.right = {L: one}
        for k in range(L - 1, c, -1):
            self.right[k] = self.step_r(self.right[k + 1], batch[k], clf.tensors[k])
        c = clf.center
        # (n, C, b, y[, w]) after absorbing the label site from the left
        t = self.step_l(self.left[c], batch[c], self.wc)
        self.center_left = t.reshape((self.n, self.n_cls, self.rb) + t.shape[2:])

    def outputs(self) -> np.ndarray:
        r = self.right[self.clf.center + 1]
        axes = "byw" if not self.mps else "by"
        f = np.einsum(f"nl{axes},n{axes}->nl", self.center_left, r)
        return np.real(f) if np.isrealobj(self.clf.tensors[self.clf.center]) else f

    def gradients(self, g) -> list:
        """``sum_n sum_l g[n, l] df_l(n) / dW_k`` for every site ``k``."""
        clf, psi = self.clf, self.psi
        L, c = len(clf), clf.center
        w = clf.tensors
        grads = [None] * L
        r = self.right[c + 1]
        # right environment of the label site with the label weights attached
        rg = np.einsum("nl,nb...->nlb...", g, r).reshape((self.n, -1) + r.shape[2:])
        gc = self.site_grad(self.left[c], psi[c], rg)
        grads[c] = gc.reshape(w[c].shape)
        rt = self.step_r(rg, psi[c], self.wc)
        lt = np.einsum("nl,nlb...->nb...", g, self.center_left)
        for k in range(c - 1, -1, -1):
            grads[k] = self.site_grad(self.left[k], psi[k], rt)
            rt = self.step_r(rt, psi[k], w[k])
        for k in range(c + 1, L):
            grads[k] = self.site_grad(lt, psi[k], self.right[k + 1])
            lt = self.step_l(lt, psi[k], w[k])
        return grads


def forward(clf: TNClassifier, inputs) -> np.ndarray:
    """Decision values ``f_l`` for one MPS (shape ``(C,)``) or a batch ``(N, C)``."""
    single = isinstance(inputs, mpslib.MPS)
    batch = _as_batch(inputs)
    if len(batch) != len(clf):
        raise ValueError("input and classifier lengths differ")
    f = _Contraction(clf, batch).outputs()
    return f[0] if single else f


def forward_and_gradients(clf: TNClassifier, inputs, loss_grad):
    """Outputs and the gradient of a loss with ``dLoss/df = loss_grad(f)``.

    ``loss_grad`` maps the ``(N, C)`` outputs to ``(loss, dLoss/df)``.
    Returns ``(f, loss, grads)`` with one gradient per site tensor.
    """
    con = _Contraction(clf, _as_batch(inputs))
    f = con.outputs()
    loss, g = loss_grad(f)
    return f, loss, con.gradients(g)


# ---------------------------------------------------------------------------
# losses and optimizer


def softmax(z, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(z, dtype=float) / temperature
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_ce(logits, label, temperature: float = 1.0):
    """Cross entropy of ``softmax(logits / T)`` and its gradient in the logits."""
    logits = np.asarray(logits, dtype=float)
    z = logits / temperature
    zmax = np.max(z)
    lse = zmax + math.log(float(np.sum(np.exp(z - zmax))))
    loss = lse - z[label]
    grad = softmax(logits, temperature)
    grad[label] -= 1.0
    return float(loss), grad / temperature


def batch_softmax_ce(logits, labels, temperature: float = 1.0):
    """Mean cross entropy over a batch and its gradient, shape ``(N, C)``."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels)
    n = len(labels)
    z = logits / temperature
    zmax = np.max(z, axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    grad = softmax(logits, temperature)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / (temperature * n)


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(params) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, config: AdamConfig):
    """One Adam update with bias correction. Returns new params and state."""
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new_p.append(p - config.lr * mhat / (np.sqrt(vhat) + config.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def accuracy(decisions, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) matches the label."""
    decisions = np.asarray(decisions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(np.argmax(decisions, axis=1) == labels))


# ---------------------------------------------------------------------------
# kernel


def kernel_gram(states, others=None) -> np.ndarray:
    """Fidelity kernel ``K_ab = |<psi_a|psi_b>|^2``.

    Accepts MPSs or dense vectors. With ``others`` the rectangular
    cross-kernel is returned.
    """
    def ov(a, b):
        if isinstance(a, mpslib.MPS):
            return mpslib.inner(a, b)
        return np.vdot(a, b)

    sym = others is None
    others = states if sym else others
    k = np.zeros((len(states), len(others)))
    for i, a in enumerate(states):
        for j, b in enumerate(others):
            if sym and j < i:
                k[i, j] = k[j, i]
                continue
            k[i, j] = abs(ov(a, b)) ** 2
    return k


# ---------------------------------------------------------------------------
# circuit classifiers


_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
PAULI_STRINGS = [a + b for a in "IXYZ" for b in "IXYZ"][1:]
_PAULI_BASIS = np.array([np.kron(_PAULI[s[0]], _PAULI[s[1]]) for s in PAULI_STRINGS])
READOUT_QUBITS = 4
VQC_CAP = 24


def su4_gate(theta) -> np.ndarray:
    """``exp(-i sum_j theta_j P_j)`` over the 15 two-qubit Pauli strings."""
    h = np.tensordot(np.asarray(theta, dtype=float), _PAULI_BASIS, axes=(0, 0))
    lam, vec = np.linalg.eigh(h)
    return (vec * np.exp(-1j * lam)) @ vec.conj().T


def _staircase(psi, params, L):
    # params: (L - 1, 15), gates on bonds 0..L-2 in order
    for q in range(L - 1):
        psi = np.matmul(su4_gate(params[q]), psi.reshape(1 << q, 4, -1)).reshape(-1)
    return psi


def _dense_input(x) -> np.ndarray:
    if isinstance(x, mpslib.MPS):
        return x.to_dense().astype(complex)
    return np.asarray(x, dtype=complex)


def readout_probabilities(psi, L) -> np.ndarray:
    return np.sum(np.abs(psi.reshape(-1, 1 << READOUT_QUBITS)) ** 2, axis=0)


@dataclass
class LinearVQC:
    """Staircase SU(4) circuit with a trainable linear readout.

    ``theta`` has shape ``(d, L - 1, 15)``; ``A`` is ``(C, 16)`` and ``b``
    has length ``C``.
    """

    n_qubits: int
    theta: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.n_qubits < READOUT_QUBITS:
            raise ValueError("the readout needs at least four qubits")
        if self.n_qubits > VQC_CAP:
            raise ValueError(f"circuit classifiers are capped at {VQC_CAP} qubits")

    @property
    def depth(self) -> int:
        return self.theta.shape[0]

    def params(self) -> list:
        return [self.theta, self.A, self.b]

    def with_params(self, ps) -> "LinearVQC":
        return LinearVQC(self.n_qubits, *ps)

    @classmethod
    def init(cls, L: int, d: int, seed=0, n_classes: int = N_CLASSES) -> "LinearVQC":
        """Angles and readout weights uniform in [0, 1]."""
        rng = np.random.default_rng(seed)
        return cls(L, rng.uniform(0, 1, size=(d, L - 1, 15)),
                   rng.uniform(0, 1, size=(n_classes, 1 << READOUT_QUBITS)),
                   rng.uniform(0, 1, size=n_classes))


def _circuit_probs(x, theta, L):
    psi = _dense_input(x)
    if psi.size != 1 << L:
        raise ValueError("input size does not match the qubit count")
    for layer in theta:
        psi = _staircase(psi, layer, L)
    return readout_probabilities(psi, L)


def vqc_forward(model: LinearVQC, x) -> np.ndarray:
    """``f = A p + b`` with ``p`` the last-four-qubit probabilities."""
    p = _circuit_probs(x, model.theta, model.n_qubits)
    return model.A @ p + model.b


def z_expectations(psi, L) -> np.ndarray:
    """``<Z_j>`` for every qubit of a dense state."""
    prob = np.abs(psi) ** 2
    out = np.empty(L)
    for j in range(L):
        pj = prob.reshape(1 << j, 2, -1).sum(axis=(0, 2))
        out[j] = pj[0] - pj[1]
    return out


@dataclass
class NonlinearVQC:
    """Data-dependent circuit: layer angles ``pi tanh(W_m sigma_m)``.

    ``sigma_m`` are the single-qubit Z expectations of the input after the
    retrieval staircase ``V_m(retrieval[m])``.
    """

    n_qubits: int
    retrieval: np.ndarray   # (d, L - 1, 15)
    W: np.ndarray           # (d, 15 (L - 1), L)
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.n_qubits < READOUT_QUBITS:
            raise ValueError("the readout needs at least four qubits")
        if self.n_qubits > VQC_CAP:
            raise ValueError(f"circuit classifiers are capped at {VQC_CAP} qubits")

    @property
    def depth(self) -> int:
        return self.W.shape[0]

    def params(self) -> list:
        return [self.retrieval, self.W, self.A, self.b]

    def with_params(self, ps) -> "NonlinearVQC":
        return NonlinearVQC(self.n_qubits, *ps)

    @classmethod
    def init(cls, L: int, d: int, seed=0, n_classes: int = N_CLASSES) -> "NonlinearVQC":
        rng = np.random.default_rng(seed)
        return cls(L, rng.uniform(0, 1, size=(d, L - 1, 15)),
                   rng.uniform(0, 1, size=(d, 15 * (L - 1), L)) / L,
                   rng.uniform(0, 1, size=(n_classes, 1 << READOUT_QUBITS)),
                   rng.uniform(0, 1, size=n_classes))

    def installed_angles(self, x) -> np.ndarray:
        L = self.n_qubits
        psi = _dense_input(x)
        out = []
        for m in range(self.depth):
            sigma = z_expectations(_staircase(psi, self.retrieval[m], L), L)
            out.append(math.pi * np.tanh(self.W[m] @ sigma).reshape(L - 1, 15))
        return np.array(out).reshape(self.depth, L - 1, 15)


def nonlinear_vqc_forward(model: NonlinearVQC, x) -> np.ndarray:
    theta = model.installed_angles(x)
    p = _circuit_probs(x, theta, model.n_qubits)
    return model.A @ p + model.b


def _model_forward(model, x):
    if isinstance(model, NonlinearVQC):
        return nonlinear_vqc_forward(model, x)
    return vqc_forward(model, x)


def vqc_loss_and_gradients(model, xs, labels, temperature: float, h: float = 1e-5):
    """Mean cross entropy and its gradient.

    The readout ``(A, b)`` gradient is exact; circuit parameters use central
    differences with step ``h``.
    """
    xs = [_dense_input(x) for x in xs]
    labels = np.asarray(labels)

    def batch(m):
        return np.array([_model_forward(m, x) for x in xs])

    f = batch(model)
    loss, g = batch_softmax_ce(f, labels, temperature)
    params = model.params()
    grads = []
    n_circ = len(params) - 2
    for i in range(n_circ):
        p = params[i]
        gp = np.zeros_like(p)
        flat = p.reshape(-1)
        for j in range(flat.size):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[i].reshape(-1)[j] += h
            minus[i].reshape(-1)[j] -= h
            lp, _ = batch_softmax_ce(batch(model.with_params(plus)), labels, temperature)
            lm, _ = batch_softmax_ce(batch(model.with_params(minus)), labels, temperature)
            gp.reshape(-1)[j] = (lp - lm) / (2 * h)
        grads.append(gp)
    # f = A p + b is linear in A and b
    probs = np.array([_readout_of(model, x) for x in xs])
    grads.append(g.T @ probs)
    grads.append(g.sum(axis=0))
    return loss, grads


def _readout_of(model, x):
    if isinstance(model, NonlinearVQC):
        theta = model.installed_angles(x)
    else:
        theta = model.theta
    return _circuit_probs(x, theta, model.n_qubits)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 1e-4
    temperature: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 \
                or self.temperature <= 0:
            raise ValueError("training configuration values must be positive")

    @classmethod
    def for_vqc(cls, **kw) -> "TrainConfig":
        base = dict(learning_rate=8e-4, temperature=1.0 / 128)
        base.update(kw)
        return cls(**base)

    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.eps)


def predict(model, states) -> np.ndarray:
    if isinstance(model, TNClassifier):
        return forward(model, list(states))
    return np.array([_model_forward(model, x) for x in states])


def fit(model, train_states, train_labels, val_states=None, val_labels=None,
        config: TrainConfig | None = None):
    """Mini-batch Adam training.

    Returns the trained model and one record per epoch (epoch 0 is the
    untrained model) with training accuracy, validation accuracy and loss.
    """
    config = config or TrainConfig()
    train_labels = np.asarray(train_labels)
    n = len(train_labels)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    is_tn = isinstance(model, TNClassifier)
    if is_tn:
        train_batch = stack_states(train_states)
        params = [t.copy() for t in model.tensors]
    else:
        params = [p.copy() for p in model.params()]
    state = adam_init(params)
    adam = config.adam()

    def current(ps):
        if is_tn:
            return TNClassifier(model.kind, ps, model.center, model.chi)
        return model.with_params(ps)

    def evaluate(m):
        if is_tn:
            f = _Contraction(m, train_batch).outputs()
        else:
            f = predict(m, train_states)
        loss, _ = batch_softmax_ce(f, train_labels, config.temperature)
        rec = {"trainAcc": accuracy(f, train_labels), "loss": loss}
        rec["valAcc"] = (accuracy(predict(m, val_states), val_labels)
                         if val_states is not None and len(val_labels) else None)
        return rec

    history = [dict(epoch=0, **evaluate(model))]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            labels = train_labels[idx]
            m = current(params)
            if is_tn:
                batch = [x[idx] for x in train_batch]
                _, _, grads = forward_and_gradients(
                    m, batch, lambda f: batch_softmax_ce(f, labels, config.temperature))
            else:
                _, grads = vqc_loss_and_gradients(
                    m, [train_states[i] for i in idx], labels, config.temperature)
            params, state = adam_step(params, grads, state, adam)
        history.append(dict(epoch=epoch, **evaluate(current(params))))
    return current(params), history


def stratified_folds(labels, folds: int = 5, seed=0) -> list:
    """Seeded stratified split; returns a fold index per sample."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    assign = np.empty(len(labels), dtype=int)
    offset = 0
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(len(idx))]
        assign[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return list(assign)


def train(make_model, states, labels, config: TrainConfig | None = None, folds: int = 5,
          model_name: str = "mps", dataset: str = "") -> dict:
    """K-fold cross-validated training.

    ``make_model(train_states, train_labels, fold)`` builds the initial
    model of each fold. Returns the training report dictionary.
    """
    config = config or TrainConfig()
    labels = np.asarray(labels)
    assign = np.asarray(stratified_folds(labels, folds, config.seed))
    reports, finals = [], []
    for k in range(folds):
        tr = np.flatnonzero(assign != k)
        va = np.flatnonzero(assign == k)
        if len(tr) == 0 or len(va) == 0:
            raise ValueError(f"fold {k} is empty")
        tr_states = [states[i] for i in tr]
        va_states = [states[i] for i in va]
        model = make_model(tr_states, labels[tr], k)
        _, hist = fit(model, tr_states, labels[tr], va_states, labels[va], config)
        reports.append(hist)
        finals.append(hist[-1]["valAcc"])
    return {"model": model_name, "dataset": dataset, "folds": reports,
            "mean": float(np.mean(finals)), "std": float(np.std(finals))}
