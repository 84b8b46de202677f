import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm, logm

from caloron import matrixcore as mc
from conftest import random_herm, random_pd

seeds = st.integers(0, 2 ** 31 - 1)
dims = st.integers(1, 4)


@given(seeds, dims)
def test_herm_exp_matches_expm(seed, n):
    X = random_herm(np.random.default_rng(seed), n)
    assert np.allclose(mc.herm_exp(X), expm(X), atol=1e-10 * np.linalg.norm(expm(X)))


@given(seeds, dims)
def test_herm_log_inverts_exp(seed, n):
    H = random_pd(np.random.default_rng(seed), n)
    assert np.allclose(mc.herm_exp(mc.herm_log(H)), H, atol=1e-10 * np.linalg.norm(H))
    assert np.allclose(mc.herm_log(H), logm(H), atol=1e-9)


def test_herm_exp_rejects_non_hermitian():
    with pytest.raises(mc.MatrixError):
        mc.herm_exp(np.array([[0, 1], [0, 0]]))


def test_non_positive_raises():
    with pytest.raises(mc.PositivityError):
        mc.herm_log(np.diag([1.0, -1.0]))
    with pytest.raises(mc.MatrixError):
        mc.sigma(np.eye(2), np.eye(3))


@given(seeds, dims)
def test_sigma_and_distance_properties(seed, n):
    rng = np.random.default_rng(seed)
    H1, H2 = random_pd(rng, n), random_pd(rng, n)
    s, d = mc.sigma(H1, H2), mc.dist_d(H1, H2)
    assert s >= 0 and d >= 0
    assert np.isclose(s, mc.sigma(H2, H1), rtol=1e-9, atol=1e-12)
    assert np.isclose(d, mc.dist_d(H2, H1), rtol=1e-9, atol=1e-12)
    assert mc.sigma(H1, H1) < 1e-10
    # sigma = sum 2(cosh(ln lambda) - 1) >= d^2
    assert s >= d ** 2 - 1e-9


@given(seeds, st.floats(0.1, 3.0))
def test_distance_scaling(seed, c):
    # d(H, c H) = sqrt(n) |ln c|
    H = random_pd(np.random.default_rng(seed), 3)
    assert np.isclose(mc.dist_d(H, c * H), np.sqrt(3) * abs(np.log(c)), atol=1e-9)


@given(seeds, dims)
def test_distance_congruence_invariance(seed, n):
    rng = np.random.default_rng(seed)
    H1, H2 = random_pd(rng, n), random_pd(rng, n)
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)) + 3 * np.eye(n)
    a = mc.dist_d(H1, H2)
    b = mc.dist_d(g.conj().T @ H1 @ g, g.conj().T @ H2 @ g)
    assert np.isclose(a, b, rtol=1e-7, atol=1e-9)


@given(seeds, dims)
def test_h_adjoint_is_involutive_and_self_adjoint_wrt_inner(seed, n):
    rng = np.random.default_rng(seed)
    H = random_pd(rng, n)
    A, B = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)) for _ in range(2))
    assert np.allclose(mc.h_adjoint(H, mc.h_adjoint(H, A)), A, atol=1e-9)
    lhs = mc.h_inner(H, A, B)
    rhs = np.conj(mc.h_inner(H, B, A))
    assert np.isclose(lhs, rhs, atol=1e-9 * max(1, abs(lhs)))


def _field(rng, n, grid=(3, 2, 4, 2)):
    X = rng.normal(size=grid + (n, n)) + 1j * rng.normal(size=grid + (n, n))
    return mc.from_stack(X @ np.conj(np.swapaxes(X, -1, -2)) + np.eye(n))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_block_ops_match_pointwise(n, rng):
    H1, H2 = _field(rng, n), _field(rng, n)
    S1, S2 = mc.to_stack(H1), mc.to_stack(H2)
    assert np.allclose(mc.to_stack(mc.bmul(H1, H2)), S1 @ S2)
    assert np.allclose(mc.to_stack(mc.binv(H1)), np.linalg.inv(S1))
    assert np.allclose(mc.btrace(H1), np.trace(S1, axis1=-2, axis2=-1))
    L = mc.to_stack(mc.bchol(H1))
    assert np.allclose(L @ np.conj(np.swapaxes(L, -1, -2)), S1)
    sig = mc.bsigma(H1, H2)
    for idx in np.ndindex(*sig.shape):
        assert np.isclose(sig[idx], mc.sigma(S1[idx], S2[idx]), rtol=1e-8, atol=1e-10)
        K = mc.herm_log(S1[idx])
        assert np.allclose(mc.to_stack(mc.blog_herm(H1))[idx], K, atol=1e-9)


@pytest.mark.parametrize("n", [2, 3])
def test_block_exp_log_roundtrip(n, rng):
    H = _field(rng, n)
    assert np.allclose(mc.bexp_herm(mc.blog_herm(H)), H, atol=1e-9)


def test_bcheck_pd_detects_negative_node(rng):
    H = _field(rng, 2)
    H[:, :, 1, 1, 1, 1] = np.diag([1.0, -0.5])
    with pytest.raises(mc.PositivityError):
        mc.bcheck_pd(H)


@given(seeds, st.floats(1e-3, 0.5))
def test_exp_step_keeps_positivity_and_hermiticity(seed, dt):
    rng = np.random.default_rng(seed)
    H = _field(rng, 2)
    B = mc.from_stack(rng.normal(size=(3, 2, 4, 2, 2, 2)) + 0j)
    B = mc.bh_adjoint(H, B) + B          # H-self-adjoint
    Hn = mc.bherm_exp_step(H, B, dt)
    assert np.allclose(Hn, mc.badj(Hn), atol=1e-10 * np.max(np.abs(Hn)))
    mc.bcheck_pd(Hn)
