"""Matrix-product states and operators.

MPS tensors are stored as ``(left bond, physical, right bond)`` arrays and
MPO tensors as ``(left bond, out, in, right bond)``. Boundary bonds have
dimension one. Functions return new objects; inputs are never modified.
"""

from __future__ import annotations

import struct

import numpy as np
import scipy.linalg

from . import imgenc

DEFAULT_TOL = 1e-12
MAGIC = b"MPS1"


class MPS:
    """A tensor train state.

    Parameters
    ----------
    tensors : sequence of ndarray
        Order-3 tensors ``(chi_left, d, chi_right)``.
    form : {None, "left", "right"} or int
        Known canonical form. An integer means mixed form centered on
        that site.
    """

    def __init__(self, tensors, form=None):
        self.tensors = [np.asarray(t) for t in tensors]
        if not self.tensors:
            raise ValueError("an MPS needs at least one site")
        for k, t in enumerate(self.tensors):
            if t.ndim != 3:
                raise ValueError(f"site {k} tensor is not order 3")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bonds must have dimension 1")
        for k in range(len(self.tensors) - 1):
            if self.tensors[k].shape[2] != self.tensors[k + 1].shape[0]:
                raise ValueError(f"bond mismatch between sites {k} and {k + 1}")
        self.form = form

    def __len__(self):
        return len(self.tensors)

    def __repr__(self):
        return f"MPS(L={len(self)}, bonds={self.bonds}, form={self.form!r})"

    @property
    def dims(self) -> list:
        return [t.shape[1] for t in self.tensors]

    @property
    def bonds(self) -> list:
        """Internal bond dimensions, ``L - 1`` entries."""
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def dtype(self):
        return np.result_type(*self.tensors)

    def copy(self) -> "MPS":
        return MPS([t.copy() for t in self.tensors], self.form)

    def scaled(self, factor) -> "MPS":
        """Copy with the whole state multiplied by ``factor``."""
        tensors = [t.copy() for t in self.tensors]
        site = self.form if isinstance(self.form, int) else (
            len(tensors) - 1 if self.form == "left" else 0)
        tensors[site] = tensors[site] * factor
        return MPS(tensors, self.form)

    def to_dense(self) -> np.ndarray:
        psi = self.tensors[0][0]
        for t in self.tensors[1:]:
            psi = np.tensordot(psi, t, axes=(psi.ndim - 1, 0))
        return psi.reshape(-1)

    def norm(self) -> float:
        return float(np.sqrt(abs(inner(self, self))))

    @classmethod
    def product(cls, vectors) -> "MPS":
        """Product state from one local vector per site."""
        return cls([np.asarray(v).reshape(1, -1, 1) for v in vectors], form=None)

    @classmethod
    def basis(cls, bits, d: int = 2) -> "MPS":
        vecs = []
        for b in bits:
            v = np.zeros(d)
            v[b] = 1.0
            vecs.append(v)
        return cls.product(vecs)


class MPO:
    """A tensor train operator with tensors ``(left, out, in, right)``."""

    def __init__(self, tensors):
        self.tensors = [np.asarray(t) for t in tensors]
        if not self.tensors:
            raise ValueError("an MPO needs at least one site")
        for k, t in enumerate(self.tensors):
            if t.ndim != 4:
                raise ValueError(f"site {k} tensor is not order 4")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[3] != 1:
            raise ValueError("boundary bonds must have dimension 1")
        for k in range(len(self.tensors) - 1):
            if self.tensors[k].shape[3] != self.tensors[k + 1].shape[0]:
                raise ValueError(f"bond mismatch between sites {k} and {k + 1}")

    def __len__(self):
        return len(self.tensors)

    @property
    def bonds(self) -> list:
        return [t.shape[3] for t in self.tensors[:-1]]

    @property
    def dims(self) -> list:
        return [t.shape[1] for t in self.tensors]

    def to_dense(self) -> np.ndarray:
        op = self.tensors[0][0]
        for t in self.tensors[1:]:
            op = np.tensordot(op, t, axes=(op.ndim - 1, 0))
        L = len(self)
        op = op.reshape(op.shape[:-1])
        order = list(range(0, 2 * L, 2)) + list(range(1, 2 * L, 2))
        op = op.transpose(order)
        dim = int(np.prod(self.dims))
        return op.reshape(dim, -1)

    def transpose(self) -> "MPO":
        return MPO([t.transpose(0, 2, 1, 3) for t in self.tensors])

    def trace(self) -> float:
        env = np.ones((1,))
        for t in self.tensors:
            env = env @ np.einsum("aiib->ab", t)
        return env[0]

    def frobenius_norm(self) -> float:
        return _as_mps(self).norm()

    def expectation(self, psi: MPS) -> float:
        """``<psi|O|psi>`` by a left-to-right sweep."""
        env = np.ones((1, 1, 1))
        for a, w in zip(psi.tensors, self.tensors):
            env = np.einsum("xwy,xoa->woya", env, a.conj())
            env = np.einsum("woya,woib->yiab", env, w)
            env = np.einsum("yiab,yic->abc", env, a)
        return env[0, 0, 0]


def _as_mps(op: MPO) -> MPS:
    return MPS([t.reshape(t.shape[0], t.shape[1] * t.shape[2], t.shape[3])
                for t in op.tensors])


def _from_mps(m: MPS, dims_out, dims_in) -> MPO:
    return MPO([t.reshape(t.shape[0], do, di, t.shape[2])
                for t, do, di in zip(m.tensors, dims_out, dims_in)])


# ---------------------------------------------------------------------------
# low-level factorizations


def svd(mat):
    """Thin SVD that falls back to the slower but sturdier LAPACK driver."""
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def truncated_svd(mat, chi_max=None, tol=DEFAULT_TOL):
    """SVD keeping singular values above ``tol * s_max`` and at most ``chi_max``.

    Returns ``U, S, Vh, discarded`` where ``discarded`` is the sum of the
    squared singular values that were dropped. At least one value is kept.
    """
    u, s, vh = svd(mat)
    keep = len(s)
    if s.size and s[0] > 0 and tol:
        keep = max(1, int(np.count_nonzero(s > tol * s[0])))
    if chi_max is not None:
        keep = min(keep, int(chi_max))
    keep = max(keep, 1)
    discarded = float(np.sum(s[keep:] ** 2))
    return u[:, :keep], s[:keep], vh[:keep], discarded


def _qr_left(t):
    l, d, r = t.shape
    q, rr = np.linalg.qr(t.reshape(l * d, r))
    return q.reshape(l, d, -1), rr


def _qr_right(t):
    l, d, r = t.shape
    q, rr = np.linalg.qr(t.reshape(l, d * r).T)
    return q.T.reshape(-1, d, r), rr.T


# ---------------------------------------------------------------------------
# construction


def mps_from_dense(v, dims=None, chi_max=None, tol=DEFAULT_TOL, check_norm=True) -> MPS:
    """Right-canonical MPS of a dense vector by successive SVDs.

    Parameters
    ----------
    v : array_like
        Amplitude vector; must have unit norm unless ``check_norm`` is off.
    dims : list of int, optional
        Local dimensions, qubits by default.
    chi_max : int, optional
        Bond cap; ``None`` keeps every singular value above ``tol``.
    tol : float
        Relative singular-value cutoff at each cut.
    """
    v = np.asarray(v)
    if dims is None:
        n = v.size.bit_length() - 1
        if 1 << n != v.size:
            raise ValueError("vector length is not a power of two")
        dims = [2] * max(n, 1) if n else [1]
    dims = [int(d) for d in dims]
    if int(np.prod(dims)) != v.size:
        raise ValueError("product of site dimensions does not match vector length")
    if check_norm and abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("input vector must be normalized")
    tensors = [None] * len(dims)
    carry = v.reshape(-1, 1)
    for k in range(len(dims) - 1, 0, -1):
        r = carry.shape[1]
        mat = carry.reshape(-1, dims[k] * r)
        u, s, vh, _ = truncated_svd(mat, chi_max, tol)
        tensors[k] = vh.reshape(-1, dims[k], r)
        carry = u * s
    tensors[0] = carry.reshape(1, dims[0], -1)
    return MPS(tensors, form="right")


def mps_from_image(img, spec: "imgenc.EncodingSpec | None" = None, chi_max=None,
                   tol=DEFAULT_TOL, block_qubits: int = 16) -> MPS:
    """Encoded image as an MPS, built patch by patch.

    Patches that fit under the dense cap are decomposed directly. Larger
    patches are assembled from contiguous index blocks of ``2^block_qubits``
    pixels that are summed and recompressed, so the full amplitude vector is
    never formed.
    """
    spec = spec or imgenc.EncodingSpec()
    patch_states = []
    for patch in imgenc.split_patches(img, spec.patches):
        pixels, n = imgenc._pixels_in_order(patch, spec.ordering)
        n_c = spec.color_qubits
        if n + n_c <= imgenc.DENSE_QUBIT_CAP:
            vec = imgenc.encode_patch(patch, spec.scheme, spec.ordering)
            patch_states.append(mps_from_dense(vec, chi_max=chi_max, tol=tol))
        else:
            block = imgenc.color_block(pixels, spec.scheme) / np.sqrt(1 << n)
            patch_states.append(
                _blocked_mps(block, n_c, n, min(block_qubits, n), chi_max, tol))
    single = product(patch_states)
    return product([single] * spec.copies)


def _blocked_mps(block, n_c, n, k, chi_max, tol) -> MPS:
    # block: (2^n_c, 2^n) color amplitudes, columns in address order
    n_prefix = n - k
    parts = []
    for p in range(1 << n_prefix):
        chunk = block[:, p << k:(p + 1) << k].reshape(-1)
        nrm = np.linalg.norm(chunk)
        if nrm == 0:
            continue
        m = mps_from_dense(chunk / nrm, chi_max=chi_max, tol=tol).scaled(nrm)
        chi = m.tensors[n_c - 1].shape[2]
        prefix = []
        for bit in range(n_prefix - 1, -1, -1):
            t = np.zeros((chi, 2, chi))
            t[:, (p >> bit) & 1, :] = np.eye(chi)
            prefix.append(t)
        parts.append(MPS(m.tensors[:n_c] + prefix + m.tensors[n_c:]))
    return add_compress(parts, chi_work=chi_max, chi_final=chi_max, tol=tol)


def product(states) -> MPS:
    """Concatenate tensor trains into their tensor product."""
    states = list(states)
    if not states:
        raise ValueError("product of an empty list")
    if len(states) == 1:
        return states[0].copy()
    tensors = []
    for s in states:
        tensors.extend(t.copy() for t in s.tensors)
    return MPS(tensors)


# ---------------------------------------------------------------------------
# gauge


def canonicalize(m: MPS, form: str = "right", center: int | None = None) -> MPS:
    """Bring ``m`` into left, right or mixed canonical form.

    For ``form="mixed"`` the sites left of ``center`` are left isometries and
    those right of it right isometries; the center site carries the norm.
    """
    L = len(m)
    if form == "left":
        center = L - 1
    elif form == "right":
        center = 0
    elif form == "mixed":
        if center is None or not 0 <= center < L:
            raise ValueError("mixed form needs a valid center site")
    else:
        raise ValueError(f"unknown canonical form {form!r}")
    t = [x.copy() for x in m.tensors]
    for k in range(center):
        t[k], r = _qr_left(t[k])
        t[k + 1] = np.tensordot(r, t[k + 1], axes=(1, 0))
    for k in range(L - 1, center, -1):
        t[k], r = _qr_right(t[k])
        t[k - 1] = np.tensordot(t[k - 1], r, axes=(2, 0))
    tag = {"left": "left", "right": "right"}.get(form, center)
    return MPS(t, form=tag)


def left_isometry_error(t) -> float:
    l, d, r = t.shape
    mat = t.reshape(l * d, r)
    return float(np.max(np.abs(mat.conj().T @ mat - np.eye(r))))


def right_isometry_error(t) -> float:
    l, d, r = t.shape
    mat = t.reshape(l, d * r)
    return float(np.max(np.abs(mat @ mat.conj().T - np.eye(l))))


def is_canonical(m: MPS, form: str, center: int | None = None, atol=1e-10) -> bool:
    """Check the isometry conditions of a canonical form."""
    L = len(m)
    if form == "left":
        center = L - 1
    elif form == "right":
        center = 0
    left_ok = all(left_isometry_error(m.tensors[k]) <= atol for k in range(center))
    right_ok = all(right_isometry_error(m.tensors[k]) <= atol
                   for k in range(center + 1, L))
    return left_ok and right_ok


def compress(m: MPS, chi_max=None, tol=DEFAULT_TOL):
    """SVD compression without renormalization.

    Returns the compressed left-canonical MPS and the discarded weight
    summed over all cuts.
    """
    t = canonicalize(m, "right").tensors
    discarded = 0.0
    for k in range(len(t) - 1):
        l, d, r = t[k].shape
        u, s, vh, w = truncated_svd(t[k].reshape(l * d, r), chi_max, tol)
        discarded += w
        t[k] = u.reshape(l, d, -1)
        t[k + 1] = np.tensordot(s[:, None] * vh, t[k + 1], axes=(1, 0))
    return MPS(t, form="left"), discarded


def truncate(m: MPS, chi_max, tol=DEFAULT_TOL):
    """Cap all bonds at ``chi_max`` and restore the original norm.

    Returns
    -------
    MPS
        Truncated state in left-canonical form.
    float
        ``1 - |<m_trunc|m>|^2`` for the normalized states.
    """
    out, _ = compress(m, chi_max, tol)
    n_in, n_out = m.norm(), out.norm()
    if n_out == 0:
        return out, 1.0
    out = out.scaled(n_in / n_out)
    ov = inner(out, m) / (n_in * n_in)
    return out, float(max(0.0, 1.0 - abs(ov) ** 2))


# ---------------------------------------------------------------------------
# contractions


def inner(a: MPS, b: MPS):
    """``<a|b>`` with ``a`` conjugated."""
    if a.dims != b.dims:
        raise ValueError("physical dimensions differ")
    env = np.ones((1, 1))
    for x, y in zip(a.tensors, b.tensors):
        env = np.tensordot(env, x.conj(), axes=(0, 0))
        env = np.tensordot(env, y, axes=([0, 1], [0, 1]))
    val = env[0, 0]
    return float(val) if np.isrealobj(val) else complex(val)


def schmidt_values(m: MPS) -> list:
    """Normalized Schmidt coefficients at every cut, left to right."""
    t = canonicalize(m, "right").tensors
    out = []
    for k in range(len(t) - 1):
        l, d, r = t[k].shape
        u, s, vh = svd(t[k].reshape(l * d, r))
        t[k] = u.reshape(l, d, -1)
        t[k + 1] = np.tensordot(s[:, None] * vh, t[k + 1], axes=(1, 0))
        nrm = np.linalg.norm(s)
        out.append(s / nrm if nrm > 0 else s)
    return out


def _vn_entropy(s) -> float:
    p = s ** 2
    p = p[p > 1e-300]
    return float(max(0.0, -np.sum(p * np.log(p))))


def entropies(m: MPS) -> np.ndarray:
    """Von Neumann entropy in nats at each of the ``L - 1`` cuts."""
    return np.array([_vn_entropy(s) for s in schmidt_values(m)])


def entropy(m: MPS, cut: int) -> float:
    """Entropy in nats between the first ``cut`` sites and the rest."""
    if not 1 <= cut < len(m):
        raise ValueError("cut must leave at least one site on each side")
    return float(entropies(m)[cut - 1])


def max_cut_entropy(m: MPS) -> float:
    """Largest entropy over all contiguous left/right bipartitions."""
    if len(m) < 2:
        return 0.0
    return float(np.max(entropies(m)))


def direct_sum(states, weights=None) -> MPS:
    """Exact sum of MPSs via block-diagonal bond embedding."""
    states = list(states)
    if not states:
        raise ValueError("cannot sum an empty list")
    if weights is None:
        weights = [1.0] * len(states)
    dims = states[0].dims
    if any(s.dims != dims for s in states):
        raise ValueError("physical dimensions differ")
    L = len(dims)
    dtype = np.result_type(*(s.dtype for s in states), *weights)
    if L == 1:
        total = sum(w * s.tensors[0] for w, s in zip(weights, states))
        return MPS([np.asarray(total, dtype=dtype)])
    tensors = []
    for k in range(L):
        lefts = [1 if k == 0 else s.tensors[k].shape[0] for s in states]
        rights = [1 if k == L - 1 else s.tensors[k].shape[2] for s in states]
        t = np.zeros((sum(lefts) if k else 1, dims[k],
                      sum(rights) if k < L - 1 else 1), dtype=dtype)
        lo = ro = 0
        for s, w, lw, rw in zip(states, weights, lefts, rights):
            block = s.tensors[k] * (w if k == 0 else 1)
            if k == 0:
                t[:, :, ro:ro + rw] = block
            elif k == L - 1:
                t[lo:lo + lw, :, :] = block
            else:
                t[lo:lo + lw, :, ro:ro + rw] = block
            lo += lw
            ro += rw
        tensors.append(t)
    return MPS(tensors)


def add_compress(states, weights=None, chi_work=None, chi_final=None,
                 tol=DEFAULT_TOL, batch_size: int = 8) -> MPS:
    """Weighted sum of many MPSs with batch-wise recompression.

    Each batch is added to the running sum and compressed to ``chi_work``;
    the total is finally compressed to ``chi_final``. The result is not
    normalized.
    """
    states = list(states)
    if not states:
        raise ValueError("cannot sum an empty list")
    if weights is None:
        weights = [1.0] * len(states)
    weights = list(weights)
    acc = None
    for start in range(0, len(states), batch_size):
        batch = states[start:start + batch_size]
        wts = weights[start:start + batch_size]
        if acc is not None:
            batch = [acc] + batch
            wts = [1.0] + wts
        acc, _ = compress(direct_sum(batch, wts), chi_work, tol)
    if chi_final is not None and chi_final != chi_work:
        acc, _ = compress(acc, chi_final, tol)
    return acc


def apply_one_site(m: MPS, u, site: int) -> MPS:
    """Apply a single-site operator; gauge conditions are unaffected."""
    t = [x for x in m.tensors]
    t[site] = np.einsum("ij,ajb->aib", u, t[site])
    return MPS(t, form=m.form if _is_unitary(u) else None)


def _is_unitary(u) -> bool:
    u = np.asarray(u)
    return u.shape[0] == u.shape[1] and np.allclose(
        u.conj().T @ u, np.eye(u.shape[0]), atol=1e-12)


def apply_two_site(m: MPS, gate, site: int, chi_max=None, tol=0.0) -> MPS:
    """Apply a two-site operator on ``(site, site + 1)`` and split by SVD.

    The returned MPS has the orthogonality center on ``site + 1`` if the
    input was canonical around either site.
    """
    t = list(m.tensors)
    a, b = t[site], t[site + 1]
    l, d1, _ = a.shape
    _, d2, r = b.shape
    theta = np.tensordot(a, b, axes=(2, 0))
    g = np.asarray(gate).reshape(d1, d2, d1, d2)
    theta = np.einsum("ijkl,aklb->aijb", g, theta)
    u, s, vh, _ = truncated_svd(theta.reshape(l * d1, d2 * r), chi_max, tol)
    t[site] = u.reshape(l, d1, -1)
    t[site + 1] = (s[:, None] * vh).reshape(-1, d2, r)
    centered = m.form in (site, site + 1) and _is_unitary(g.reshape(d1 * d2, -1))
    return MPS(t, form=site + 1 if centered else None)


def mpo_from_outer(a: MPS, b: MPS, chi_max=None, tol=DEFAULT_TOL) -> MPO:
    """Tensor-train form of ``|a><b|``, optionally compressed."""
    if a.dims != b.dims:
        raise ValueError("physical dimensions differ")
    tensors = []
    for x, y in zip(a.tensors, b.tensors):
        w = np.einsum("aob,cid->acoibd", x, y.conj())
        tensors.append(w.reshape(x.shape[0] * y.shape[0], x.shape[1], y.shape[1],
                                 x.shape[2] * y.shape[2]))
    op = MPO(tensors)
    if chi_max is None and not tol:
        return op
    flat, _ = compress(_as_mps(op), chi_max, tol)
    return _from_mps(flat, a.dims, b.dims)


# ---------------------------------------------------------------------------
# serialization


def dumps(m: MPS) -> bytes:
    """Binary ``MPS1`` serialization of a real MPS.

    Layout (little endian): magic ``MPS1``, uint32 site count, then one
    ``(left, physical, right)`` uint32 triple per site, then every tensor as
    row-major float64.
    """
    if not all(np.isrealobj(t) for t in m.tensors):
        raise ValueError("only real MPSs can be serialized")
    head = [MAGIC, struct.pack("<I", len(m))]
    head += [struct.pack("<3I", *t.shape) for t in m.tensors]
    body = [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in m.tensors]
    return b"".join(head + body)


def loads(data: bytes) -> MPS:
    if data[:4] != MAGIC:
        raise ValueError("not an MPS1 file")
    if len(data) < 8:
        raise ValueError("truncated MPS1 header")
    (L,) = struct.unpack("<I", data[4:8])
    pos = 8
    shapes = []
    for _ in range(L):
        if pos + 12 > len(data):
            raise ValueError("truncated MPS1 header")
        shapes.append(struct.unpack("<3I", data[pos:pos + 12]))
        pos += 12
    tensors = []
    for shape in shapes:
        size = 8 * int(np.prod(shape))
        if pos + size > len(data):
            raise ValueError("truncated MPS1 payload")
        tensors.append(np.frombuffer(data[pos:pos + size], dtype="<f8")
                       .reshape(shape).astype(np.float64))
        pos += size
    if pos != len(data):
        raise ValueError("trailing bytes after MPS1 payload")
    return MPS(tensors)
