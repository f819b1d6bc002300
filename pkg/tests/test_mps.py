import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpix import imgenc
from qpix import mps as M
from qpix.imgenc import EncodingSpec

from conftest import random_unit


def random_mps(rng, L, chi, d=2, complex_=False):
    bonds = [1] + [min(chi, d ** k, d ** (L - k)) for k in range(1, L)] + [1]
    ts = []
    for k in range(L):
        t = rng.normal(size=(bonds[k], d, bonds[k + 1]))
        if complex_:
            t = t + 1j * rng.normal(size=t.shape)
        ts.append(t)
    m = M.MPS(ts)
    return m.scaled(1 / m.norm())


def test_product_state_bonds():
    m = M.mps_from_dense(M.MPS.basis([0, 1, 0, 1]).to_dense())
    assert m.bonds == [1, 1, 1]


def test_bell_pair():
    v = np.array([1, 0, 0, 1]) / np.sqrt(2)
    m = M.mps_from_dense(v)
    assert m.bonds == [2]
    assert M.entropy(m, 1) == pytest.approx(np.log(2), abs=1e-14)


@pytest.mark.parametrize("complex_", [False, True])
def test_dense_round_trip(rng, complex_):
    v = random_unit(rng, 16, complex_)
    m = M.mps_from_dense(v)
    assert np.max(np.abs(m.to_dense() - v)) <= 1e-12
    assert M.is_canonical(m, "right")


def test_from_dense_errors():
    with pytest.raises(ValueError):
        M.mps_from_dense(np.ones(4))
    with pytest.raises(ValueError):
        M.mps_from_dense(np.ones(3) / np.sqrt(3))


def test_image_all_zero_is_product():
    m = M.mps_from_image(np.zeros((2, 2)))
    assert m.bonds == [1, 1]


def test_constant_image_is_product():
    m = M.mps_from_image(np.full((32, 32), 0.5))
    assert m.bonds == [1] * 10


@pytest.mark.parametrize("scheme,shape", [("frqi", (8, 8)), ("mcrqi", (8, 8, 3)),
                                          ("tmulti", (4, 4, 3)), ("dmulti", (4, 4, 3))])
def test_image_matches_dense_path(rng, scheme, shape):
    img = rng.random(shape)
    spec = EncodingSpec(scheme)
    m = M.mps_from_image(img, spec)
    v = imgenc.encode_dense(img, spec)
    assert abs(np.vdot(m.to_dense(), v)) >= 1 - 1e-10


def test_blocked_path_matches_dense(rng):
    img = rng.random((16, 16))
    spec = EncodingSpec("frqi")
    direct = M.mps_from_image(img, spec)
    blocked = M.mps_from_image(img, spec, block_qubits=4)
    blocked = blocked.scaled(1 / blocked.norm())
    assert abs(M.inner(direct, blocked)) >= 1 - 1e-10


def test_patches_and_copies(rng):
    img = rng.random((4, 4))
    spec = EncodingSpec("frqi", patches=4, copies=2)
    m = M.mps_from_image(img, spec)
    assert len(m) == spec.total_qubits(16)
    parts = [imgenc.encode_patch(p) for p in imgenc.split_patches(img, 4)]
    single = parts[0]
    for p in parts[1:]:
        single = np.kron(single, p)
    np.testing.assert_allclose(m.to_dense(), np.kron(single, single), atol=1e-12)


def test_canonicalize_keeps_state(rng):
    m = random_mps(rng, 6, 4)
    for form, center in (("left", None), ("right", None), ("mixed", 2)):
        c = M.canonicalize(m, form, center)
        assert abs(M.inner(c, m)) == pytest.approx(1.0, abs=1e-12)
        assert M.is_canonical(c, form, center)


def test_canonicalize_idempotent_on_right_form(rng):
    m = M.mps_from_dense(random_unit(rng, 64))
    c = M.canonicalize(m, "right")
    np.testing.assert_allclose(c.to_dense(), m.to_dense(), atol=1e-12)


def test_mixed_center_isometries(rng):
    m = M.canonicalize(random_mps(rng, 6, 4), "mixed", 2)
    for k in range(2):
        assert M.left_isometry_error(m.tensors[k]) <= 1e-12
    for k in range(3, 6):
        assert M.right_isometry_error(m.tensors[k]) <= 1e-12


def test_product_state_canonical():
    m = M.MPS.product([np.array([0.6, 0.8])] * 4)
    for form in ("left", "right"):
        assert M.is_canonical(m, form)


def test_truncate_no_op(rng):
    m = random_mps(rng, 6, 4)
    out, err = M.truncate(m, 8)
    assert err == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(out.to_dense(), m.to_dense(), atol=1e-12)


def test_truncate_bell_and_ghz():
    bell = M.mps_from_dense(np.array([1, 0, 0, 1]) / np.sqrt(2))
    _, err = M.truncate(bell, 1)
    assert err == pytest.approx(0.5, abs=1e-14)
    ghz = np.zeros(8)
    ghz[[0, 7]] = 1 / np.sqrt(2)
    out, err = M.truncate(M.mps_from_dense(ghz), 1)
    assert err == pytest.approx(0.5, abs=1e-14)
    assert out.norm() == pytest.approx(1.0)


def test_truncate_error_matches_dense(rng):
    m = random_mps(rng, 8, 8)
    out, err = M.truncate(m, 3)
    assert max(out.bonds) <= 3
    ov = np.vdot(out.to_dense(), m.to_dense())
    assert err == pytest.approx(1 - abs(ov) ** 2, abs=1e-12)


def test_inner_products(rng):
    m = random_mps(rng, 5, 3)
    assert M.inner(m, m) == pytest.approx(1.0, abs=1e-13)
    assert M.inner(M.MPS.basis([0, 1, 1]), M.MPS.basis([1, 1, 1])) == 0
    a, b = random_mps(rng, 8, 3, complex_=True), random_mps(rng, 8, 3, complex_=True)
    assert abs(M.inner(a, b) - np.vdot(a.to_dense(), b.to_dense())) <= 1e-11


def test_entropy_product_and_dense_oracle(rng):
    assert np.all(M.entropies(M.MPS.basis([0, 1, 0, 0])) == 0)
    v = random_unit(rng, 1 << 10)
    m = M.mps_from_dense(v)
    s = np.linalg.svd(v.reshape(32, 32), compute_uv=False)
    p = s ** 2
    ref = -np.sum(p * np.log(p))
    assert M.entropy(m, 5) == pytest.approx(ref, abs=1e-9)
    # typical value for a random real state sits near the Page value
    assert abs(ref - (5 * np.log(2) - 0.5)) < 0.3


def test_entropy_cut_range():
    m = M.MPS.basis([0, 0, 0])
    with pytest.raises(ValueError):
        M.entropy(m, 0)
    with pytest.raises(ValueError):
        M.entropy(m, 3)


def test_max_cut_entropy(rng):
    m = random_mps(rng, 6, 4)
    assert M.max_cut_entropy(m) == pytest.approx(np.max(M.entropies(m)))


def test_add_compress_single_and_orthogonal():
    a = M.MPS.basis([0, 1, 0])
    out = M.add_compress([a])
    np.testing.assert_allclose(out.to_dense(), a.to_dense())
    b = M.MPS.basis([1, 1, 0])
    s = M.add_compress([a, b], chi_final=2)
    assert s.norm() == pytest.approx(np.sqrt(2))
    np.testing.assert_allclose(s.to_dense(), a.to_dense() + b.to_dense(), atol=1e-14)


def test_add_compress_dense_oracle(rng):
    states = [random_mps(rng, 6, 2) for _ in range(10)]
    w = rng.normal(size=10)
    out = M.add_compress(states, w, batch_size=3)
    ref = sum(wi * s.to_dense() for wi, s in zip(w, states))
    got = out.to_dense()
    cos = abs(np.vdot(got, ref)) / (np.linalg.norm(got) * np.linalg.norm(ref))
    assert cos >= 1 - 1e-10
    assert np.linalg.norm(got) == pytest.approx(np.linalg.norm(ref), rel=1e-10)


def test_product_of_states(rng):
    m = random_mps(rng, 4, 3)
    np.testing.assert_array_equal(M.product([m]).to_dense(), m.to_dense())
    zero, one = M.MPS.basis([0]), M.MPS.basis([1])
    np.testing.assert_array_equal(M.product([zero, one]).to_dense(), [0, 1, 0, 0])
    two = M.product([m, m])
    assert M.entropy(two, 4) == pytest.approx(0.0, abs=1e-12)
    assert M.entropy(two, 2) == pytest.approx(M.entropy(m, 2), abs=1e-10)


def test_apply_gates_against_dense(rng):
    m = random_mps(rng, 6, 4)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    out = M.apply_two_site(M.canonicalize(m, "mixed", 2), q, 2)
    ref = np.matmul(q, m.to_dense().reshape(4, 4, -1)).reshape(-1)
    assert abs(np.vdot(out.to_dense(), ref)) >= 1 - 1e-10
    assert out.form == 3
    u, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    out = M.apply_one_site(m, u, 5)
    ref = np.matmul(m.to_dense().reshape(-1, 2), u.T).reshape(-1)
    np.testing.assert_allclose(out.to_dense(), ref, atol=1e-13)


def test_cnot_on_plus_zero_gives_bell():
    plus = np.array([1.0, 1.0]) / np.sqrt(2)
    m = M.MPS.product([plus, np.array([1.0, 0.0])])
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    out = M.apply_two_site(m, cnot, 0)
    assert out.bonds == [2]
    assert M.entropy(out, 1) == pytest.approx(np.log(2))


def test_mpo_outer_product(rng):
    a = M.MPS.product([np.array([0.6, 0.8])] * 3)
    op = M.mpo_from_outer(a, a)
    assert op.bonds == [1, 1]
    np.testing.assert_allclose(op.to_dense(), np.outer(a.to_dense(), a.to_dense()), atol=1e-14)
    x, y = random_mps(rng, 4, 3), random_mps(rng, 4, 3)
    op = M.mpo_from_outer(x, y)
    assert op.trace() == pytest.approx(M.inner(y, x), abs=1e-12)
    assert M.mpo_from_outer(x, x).frobenius_norm() == pytest.approx(1.0, abs=1e-12)
    z = random_mps(rng, 4, 2)
    ref = M.inner(z, x) * M.inner(y, z)
    assert op.expectation(z) == pytest.approx(ref, abs=1e-12)


@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
def test_serialization_round_trip(L, chi, seed):
    m = random_mps(np.random.default_rng(seed), L, chi)
    back = M.loads(M.dumps(m))
    assert [t.shape for t in back.tensors] == [t.shape for t in m.tensors]
    for a, b in zip(back.tensors, m.tensors):
        np.testing.assert_array_equal(a, b)


def test_serialization_errors(rng):
    data = M.dumps(random_mps(rng, 3, 2))
    with pytest.raises(ValueError):
        M.loads(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        M.loads(data[:-3])
    with pytest.raises(ValueError):
        M.dumps(random_mps(rng, 3, 2, complex_=True))


def test_constructor_validation():
    with pytest.raises(ValueError):
        M.MPS([np.ones((2, 2, 1))])
    with pytest.raises(ValueError):
        M.MPS([np.ones((1, 2, 2)), np.ones((3, 2, 1))])
