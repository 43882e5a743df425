import numpy as np
import pytest

from tfgsmooth import so3, tfg


def expm_series(m, terms=40):
    out = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for j in range(1, terms + 1):
        term = term @ m / j
        out = out + term
    return out


def random_element(rng, angle_max=2.8, scale=1.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    theta = axis * rng.uniform(0.0, angle_max)
    return tfg.TfgElement(so3.exp(theta), scale * rng.normal(size=3),
                          scale * rng.normal(size=3), scale * rng.normal(size=3),
                          scale * rng.normal(size=3))


def max_diff(a, b):
    return max(np.max(np.abs(a.r - b.r)), np.max(np.abs(a.v - b.v)),
               np.max(np.abs(a.p - b.p)), np.max(np.abs(a.b_a - b.b_a)),
               np.max(np.abs(a.b_w - b.b_w)))


def test_compose_identity_laws():
    rng = np.random.default_rng(0)
    x = random_element(rng)
    e = tfg.identity()
    assert max_diff(tfg.compose(e, x), x) < 1e-15
    assert max_diff(tfg.compose(x, e), x) < 1e-15


def test_compose_bias_only_adds():
    rng = np.random.default_rng(1)
    ba1, bw1, ba2, bw2 = (rng.normal(size=3) for _ in range(4))
    a = tfg.TfgElement(np.eye(3), np.zeros(3), np.zeros(3), ba1, bw1)
    b = tfg.TfgElement(np.eye(3), np.zeros(3), np.zeros(3), ba2, bw2)
    c = tfg.compose(a, b)
    assert np.allclose(c.b_a, ba1 + ba2)
    assert np.allclose(c.b_w, bw1 + bw2)
    assert np.allclose(c.r, np.eye(3))


def test_compose_associativity():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        a, b, c = (random_element(rng) for _ in range(3))
        left = tfg.compose(tfg.compose(a, b), c)
        right = tfg.compose(a, tfg.compose(b, c))
        assert max_diff(left, right) < 1e-11


def test_inverse_of_identity():
    assert max_diff(tfg.inverse(tfg.identity()), tfg.identity()) < 1e-15


def test_inverse_with_identity_rotation():
    rng = np.random.default_rng(3)
    v, p, ba, bw = (rng.normal(size=3) for _ in range(4))
    x = tfg.TfgElement(np.eye(3), v, p, ba, bw)
    inv = tfg.inverse(x)
    assert np.allclose(inv.v, -v) and np.allclose(inv.p, -p)
    assert np.allclose(inv.b_a, -ba) and np.allclose(inv.b_w, -bw)


def test_inverse_two_sided():
    rng = np.random.default_rng(4)
    e = tfg.identity()
    for _ in range(200):
        x = random_element(rng)
        assert max_diff(tfg.compose(x, tfg.inverse(x)), e) < 1e-11
        assert max_diff(tfg.compose(tfg.inverse(x), x), e) < 1e-11


def test_exp_zero():
    assert max_diff(tfg.exp(np.zeros(15)), tfg.identity()) < 1e-15


def test_exp_zero_rotation_block():
    rng = np.random.default_rng(5)
    xi = rng.normal(size=15)
    xi[tfg.XI_R] = 0.0
    x = tfg.exp(xi)
    assert np.allclose(x.r, np.eye(3))
    assert np.allclose(x.v, xi[tfg.XI_V])
    assert np.allclose(x.p, xi[tfg.XI_P])
    assert np.allclose(x.b_a, xi[tfg.XI_BA])
    assert np.allclose(x.b_w, xi[tfg.XI_BW])


def test_exp_one_parameter_subgroup():
    # exp(xi) must equal the 1024-fold composition of exp(xi / 1024),
    # evaluated by repeated squaring.
    rng = np.random.default_rng(6)
    for _ in range(10):
        xi = rng.normal(size=15)
        y = tfg.exp(xi / 1024.0)
        for _ in range(10):
            y = tfg.compose(y, y)
        assert max_diff(y, tfg.exp(xi)) < 1e-8


def test_log_identity():
    assert np.max(np.abs(tfg.log(tfg.identity()))) < 1e-15


def test_log_identity_rotation():
    rng = np.random.default_rng(7)
    v, p, ba, bw = (rng.normal(size=3) for _ in range(4))
    xi = tfg.log(tfg.TfgElement(np.eye(3), v, p, ba, bw))
    assert np.allclose(xi, np.concatenate([np.zeros(3), v, p, ba, bw]))


def test_exp_log_round_trip():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        xi = rng.normal(size=15)
        norm_r = np.linalg.norm(xi[tfg.XI_R])
        if norm_r > 0:
            xi[tfg.XI_R] *= rng.uniform(0.0, 2.999) / norm_r
        assert np.max(np.abs(tfg.log(tfg.exp(xi)) - xi)) < 1e-9


def test_log_rejects_half_turn():
    x = tfg.TfgElement(so3.exp(np.array([np.pi - 1e-8, 0.0, 0.0])),
                       np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        tfg.log(x)


def test_adjoint_of_identity():
    assert np.allclose(tfg.adjoint(tfg.identity()), np.eye(15))


def test_adjoint_matches_conjugation():
    # finite-difference conjugation oracle; this fixes the convention that
    # adjoint(x) differentiates g -> x * g * x^{-1}
    rng = np.random.default_rng(9)
    scale = 1e-5
    for _ in range(50):
        x = random_element(rng)
        xi = rng.normal(size=15)
        xi *= scale / np.linalg.norm(xi)
        conj = tfg.compose(tfg.compose(x, tfg.exp(xi)), tfg.inverse(x))
        got = tfg.log(conj)
        expected = tfg.adjoint(x) @ xi
        assert np.linalg.norm(got - expected) / scale < 1e-4


def test_adjoint_structure_identity_rotation():
    rng = np.random.default_rng(10)
    v, p = rng.normal(size=3), rng.normal(size=3)
    x = tfg.TfgElement(np.eye(3), v, p, np.zeros(3), np.zeros(3))
    a = tfg.adjoint(x)
    expected = np.eye(15)
    expected[tfg.XI_V, tfg.XI_R] = so3.skew(v)
    expected[tfg.XI_P, tfg.XI_R] = so3.skew(p)
    assert np.allclose(a, expected)


def test_ad_zero():
    assert np.array_equal(tfg.ad(np.zeros(15)), np.zeros((15, 15)))


def test_ad_rotation_only_is_block_diagonal():
    rng = np.random.default_rng(11)
    xi = tfg.tangent(xi_r=rng.normal(size=3))
    a = tfg.ad(xi)
    k = so3.skew(xi[tfg.XI_R])
    expected = np.zeros((15, 15))
    for i in range(5):
        expected[3 * i:3 * i + 3, 3 * i:3 * i + 3] = k
    assert np.allclose(a, expected)


def test_expm_ad_equals_adjoint_of_exp():
    rng = np.random.default_rng(12)
    for _ in range(50):
        xi = rng.normal(size=15)
        lhs = expm_series(tfg.ad(xi))
        rhs = tfg.adjoint(tfg.exp(xi))
        assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_adjoint_homomorphism():
    rng = np.random.default_rng(13)
    for _ in range(200):
        a, b = random_element(rng), random_element(rng)
        lhs = tfg.adjoint(tfg.compose(a, b))
        rhs = tfg.adjoint(a) @ tfg.adjoint(b)
        assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_left_jacobian_at_zero():
    assert np.allclose(tfg.left_jacobian(np.zeros(15)), np.eye(15))


def test_left_jacobian_bch_first_order():
    # log(exp(xi) exp(delta)) - xi ~= J(xi) delta for small delta; the match
    # is first order in xi as well, so xi is kept moderate.
    rng = np.random.default_rng(14)
    scale = 1e-5
    for _ in range(50):
        xi = 0.03 * rng.normal(size=15)
        delta = rng.normal(size=15)
        delta *= scale / np.linalg.norm(delta)
        bch = tfg.log(tfg.compose(tfg.exp(xi), tfg.exp(delta)))
        expected = tfg.left_jacobian(xi) @ delta
        assert np.linalg.norm((bch - xi) - expected) / scale < 1e-3


def test_left_jacobian_so3_block():
    rng = np.random.default_rng(15)
    xi = tfg.tangent(xi_r=rng.normal(size=3))
    j = tfg.left_jacobian(xi)
    assert np.max(np.abs(j[:3, :3] - so3.dexp(xi[tfg.XI_R]))) < 1e-13


def test_compose_imperfect_identity_laws():
    rng = np.random.default_rng(16)
    x = random_element(rng)
    e = tfg.identity()
    assert max_diff(tfg.compose_imperfect(e, x), x) < 1e-15
    assert max_diff(tfg.compose_imperfect(x, e), x) < 1e-15


def test_compose_imperfect_biases_add():
    rng = np.random.default_rng(17)
    a, b = random_element(rng), random_element(rng)
    c = tfg.compose_imperfect(a, b)
    assert np.allclose(c.b_a, a.b_a + b.b_a)
    assert np.allclose(c.b_w, a.b_w + b.b_w)


def test_compose_imperfect_associativity():
    rng = np.random.default_rng(18)
    for _ in range(500):
        a, b, c = (random_element(rng) for _ in range(3))
        left = tfg.compose_imperfect(tfg.compose_imperfect(a, b), c)
        right = tfg.compose_imperfect(a, tfg.compose_imperfect(b, c))
        assert max_diff(left, right) < 1e-11


def test_laws_agree_on_navigation_part():
    rng = np.random.default_rng(19)
    for _ in range(100):
        a, b = random_element(rng), random_element(rng)
        c1, c2 = tfg.compose(a, b), tfg.compose_imperfect(a, b)
        assert np.array_equal(c1.r, c2.r)
        assert np.array_equal(c1.v, c2.v)
        assert np.array_equal(c1.p, c2.p)
