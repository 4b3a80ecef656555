import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdtre import fixtures, operators as ops
from gdtre.errors import NotStable
from gdtre.operators import LyapunovOperator

import oracles
from conftest import ALL, spec_of


def rand_sym_tuple(rng, N, n, psd=False):
    G = rng.standard_normal((N, n, n))
    return G @ np.swapaxes(G, -1, -2) if psd else G + np.swapaxes(G, -1, -2)


def rand_stochastic(rng, p, N):
    P = rng.random((p, N, N)) + 0.05
    return P / P.sum(axis=-1, keepdims=True)


def random_operator(rng, p=2, N=3, n=2, r=1, target=None):
    mats = rng.standard_normal((p, N, r + 1, n, n)) / np.sqrt(n)
    op = LyapunovOperator(mats, rand_stochastic(rng, p, N))
    if target is None:
        return op
    rho = ops.monodromy_spectral_radius(op)
    # rho of the monodromy scales with s^(2p) when all matrices scale by s
    s = (target / rho) ** (1.0 / (2 * p))
    return LyapunovOperator(mats * s, op.P)


def scalar_op(a, P=((1.0,),), p=1):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    N = len(P)
    mats = np.broadcast_to(a[:, None, None], (p, N, len(a), 1, 1)).copy()
    return LyapunovOperator(mats, np.broadcast_to(np.asarray(P, dtype=float), (p, N, N)).copy())


# --------------------------------------------------------------------------
# xi and pi


def test_xi_examples():
    rng = np.random.default_rng(0)
    X = rand_sym_tuple(rng, 2, 2)
    s1 = fixtures.lqr_limb()
    x1 = rand_sym_tuple(rng, 1, 1)
    np.testing.assert_array_equal(ops.xi(s1, 0, x1), x1)
    avg = fixtures.jump_game().replace(P=np.full((1, 2, 2), 0.5))
    np.testing.assert_allclose(ops.xi(avg, 0, X), np.stack([(X[0] + X[1]) / 2] * 2))
    swap = fixtures.jump_game().replace(P=np.array([[[0.0, 1.0], [1.0, 0.0]]]))
    np.testing.assert_array_equal(ops.xi(swap, 0, X), X[::-1])


@pytest.mark.parametrize("name", ALL)
def test_pi_ops_match_loop_oracle(name):
    spec = spec_of(name)
    rng = np.random.default_rng(1)
    for t in range(spec.period):
        X = rand_sym_tuple(rng, spec.N, spec.n)
        got = ops.pi_ops(spec, t, X)
        A = [[spec.A[t, i, k] for k in range(spec.r + 1)] for i in range(spec.N)]
        B = [[spec.B[t, i, k] for k in range(spec.r + 1)] for i in range(spec.N)]
        want = oracles.pi_loop(A, B, spec.P[t], list(X))
        for g, w in zip(got, want):
            np.testing.assert_allclose(g, np.array(w), rtol=1e-12, atol=1e-12)
        blocks = got.blocks(spec.m1)
        np.testing.assert_array_equal(np.concatenate([blocks["pi21"], blocks["pi22"]], -1), got.pi2)
        np.testing.assert_array_equal(blocks["pi312"], got.pi3[:, :spec.m1, spec.m1:])


def test_pi_ops_scalar_expansion_and_zero():
    a, b1, b2, x = 0.7, 0.0, 1.3, 2.5
    spec = fixtures.lqr_limb().replace(A=np.full((1, 1, 1, 1, 1), a), B=np.array([b1, b2]).reshape(1, 1, 1, 1, 2))
    p1, p2, p3 = ops.pi_ops(spec, 0, np.full((1, 1, 1), x))
    assert p1[0, 0, 0] == pytest.approx(a * a * x)
    np.testing.assert_allclose(p2[0, 0], [a * b1 * x, a * b2 * x])
    np.testing.assert_allclose(p3[0], [[b1 * b1 * x, b1 * b2 * x], [b1 * b2 * x, b2 * b2 * x]])
    zero = ops.pi_ops(fixtures.jump_game(), 0, np.zeros((2, 2, 2)))
    assert all(np.all(z == 0) for z in zero)
    noB = fixtures.jump_game().replace(B=np.zeros_like(fixtures.jump_game().B))
    _, p2, p3 = ops.pi_ops(noB, 0, rand_sym_tuple(np.random.default_rng(3), 2, 2))
    assert np.all(p2 == 0) and np.all(p3 == 0)


# --------------------------------------------------------------------------
# Lyapunov operators


def test_lyap_examples():
    ident = LyapunovOperator(np.eye(2)[None, None, None].repeat(2, axis=1), np.eye(2)[None])
    X = rand_sym_tuple(np.random.default_rng(2), 2, 2)
    np.testing.assert_allclose(ops.lyap_apply(ident, X), X)
    half = scalar_op(0.5)
    assert ops.lyap_apply(half, np.array([[[3.0]]]))[0, 0, 0] == pytest.approx(0.75)


def test_lyap_matches_loop_oracle():
    rng = np.random.default_rng(4)
    op = random_operator(rng, p=2, N=3, n=2, r=2)
    X = rand_sym_tuple(rng, 3, 2)
    for t in range(2):
        mats = [[op.matrices[t, i, k] for k in range(3)] for i in range(3)]
        np.testing.assert_allclose(ops.lyap_apply(op, X, t), oracles.lyap_forward_loop(mats, op.P[t], list(X)),
                                   rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(ops.lyap_apply(op.dual(), X, t),
                                   oracles.lyap_adjoint_loop(mats, op.P[t], list(X)), rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2))
def test_adjoint_identity(seed, N, n, r):
    rng = np.random.default_rng(seed)
    op = random_operator(rng, p=1, N=N, n=n, r=r)
    X, Y = rand_sym_tuple(rng, N, n), rand_sym_tuple(rng, N, n)
    lhs = ops.inner(ops.lyap_apply(op, X), Y)
    rhs = ops.inner(X, ops.lyap_apply(op.dual(), Y))
    scale = np.linalg.norm(X) * np.linalg.norm(Y) * max(1.0, np.abs(op.matrices).max() ** 2)
    assert abs(lhs - rhs) <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    spec = fixtures.periodic_jump_game()
    op = ops.lyapunov_operator(spec)
    X, Y = rand_sym_tuple(rng, 2, 2), rand_sym_tuple(rng, 2, 2)
    Z = a * X + b * Y
    scale = 1 + abs(a) * np.abs(X).max() + abs(b) * np.abs(Y).max()
    for f in (lambda V: ops.xi(spec, 1, V), lambda V: ops.lyap_apply(op, V, 2),
              lambda V: ops.lyap_apply(op.dual(), V, 0), lambda V: ops.pi_ops(spec, 0, V).pi2):
        np.testing.assert_allclose(f(Z), a * f(X) + b * f(Y), atol=1e-12 * scale * 10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_positivity(seed):
    rng = np.random.default_rng(seed)
    spec = fixtures.jump_game()
    op = random_operator(rng, p=1, N=2, n=2, r=1)
    X = rand_sym_tuple(rng, 2, 2, psd=True)
    floor = -1e-10 * np.linalg.norm(X)
    terms = ops.pi_ops(spec, 0, X)
    for Y in (ops.xi(spec, 0, X), terms.pi1, terms.pi3, ops.lyap_apply(op, X), ops.lyap_apply(op.dual(), X)):
        assert np.linalg.eigvalsh(Y).min() >= floor * max(1.0, np.abs(Y).max())


# --------------------------------------------------------------------------
# matrices and spectral radius


def test_operator_matrix_examples():
    assert ops.operator_matrix(scalar_op(0.8))[0, 0] == pytest.approx(0.64)
    ident = LyapunovOperator(np.eye(3)[None, None, None].repeat(2, axis=1), np.eye(2)[None])
    np.testing.assert_allclose(ops.operator_matrix(ident), np.eye(12), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_operator_matrix_matches_kron_oracle_and_probes(seed):
    rng = np.random.default_rng(seed)
    op = random_operator(rng, p=2, N=2, n=3, r=1)
    for t in range(2):
        Mt = ops.operator_matrix(op, t)
        mats = [[op.matrices[t, i, k] for k in range(2)] for i in range(2)]
        np.testing.assert_allclose(Mt, oracles.forward_matrix_kron(mats, op.P[t]), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(ops.operator_matrix(op.dual(), t), Mt.T, rtol=1e-12, atol=1e-12)
        for _ in range(op.dim):
            X = rand_sym_tuple(rng, 2, 3)
            got = Mt @ ops.coords(X)
            want = ops.coords(ops.lyap_apply(op, X, t))
            assert np.linalg.norm(got - want) <= 1e-12 * np.linalg.norm(want)


def test_coords_round_trip_and_isometry():
    rng = np.random.default_rng(5)
    X, Y = rand_sym_tuple(rng, 3, 4), rand_sym_tuple(rng, 3, 4)
    np.testing.assert_allclose(ops.from_coords(ops.coords(X), 3, 4), X)
    assert ops.coords(X) @ ops.coords(Y) == pytest.approx(ops.inner(X, Y))


def test_spectral_radius_examples():
    assert ops.monodromy_spectral_radius(scalar_op(0.5)) == pytest.approx(0.25, abs=1e-14)
    assert ops.monodromy_spectral_radius(scalar_op([0.6, 0.5])) == pytest.approx(0.61, abs=1e-14)
    rng = np.random.default_rng(6)
    P = rand_stochastic(rng, 1, 3)
    ident = LyapunovOperator(np.eye(2)[None, None, None].repeat(3, axis=1), P)
    assert ops.monodromy_spectral_radius(ident) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_spectral_radius_matches_dense_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    op = random_operator(rng, p=3, N=2, n=2, r=1)
    Phi = np.eye(op.dim)
    for t in range(3):
        mats = [[op.matrices[t, i, k] for k in range(2)] for i in range(2)]
        Phi = oracles.forward_matrix_kron(mats, op.P[t]) @ Phi
    want = np.abs(np.linalg.eigvals(Phi)).max()
    assert ops.monodromy_spectral_radius(op) == pytest.approx(want, rel=1e-9)


def test_spectral_radius_with_periodic_chain_falls_back():
    # the swap chain gives eigenvalues of equal modulus, power iteration cannot settle on a vector
    mats = np.array([[[[[0.9]]], [[[0.3]]]]])
    op = LyapunovOperator(mats, np.array([[[0.0, 1.0], [1.0, 0.0]]]))
    assert ops.monodromy_spectral_radius(op) == pytest.approx(0.9 * 0.3, rel=1e-12)


# --------------------------------------------------------------------------
# certificate


def test_certificate_examples():
    cert = ops.stability_certificate(scalar_op(0.0))
    assert cert.Y[0, 0, 0, 0] == pytest.approx(1.0)
    a = 0.8
    cert = ops.stability_certificate(scalar_op(a))
    assert cert.Y[0, 0, 0, 0] == pytest.approx(1 / (1 - a * a), rel=1e-12)
    with pytest.raises(NotStable):
        ops.stability_certificate(scalar_op(1.1))


@pytest.mark.parametrize("seed", range(5))
def test_certificate_solves_equation(seed):
    rng = np.random.default_rng(seed)
    op = random_operator(rng, p=3, N=2, n=2, r=1, target=0.7)
    cert = ops.stability_certificate(op)
    adj = op.dual()
    for t in range(3):
        want = ops.lyap_apply(adj, cert.Y[(t + 1) % 3], t) + np.eye(2)
        np.testing.assert_allclose(cert.Y[t], want, atol=1e-10)
    assert cert.lower >= 1 - 1e-8


def test_periodic_backward_solve_matches_iteration():
    rng = np.random.default_rng(9)
    op = random_operator(rng, p=2, N=2, n=2, r=1, target=0.5)
    H = rand_sym_tuple(rng, 2, 2, psd=True)
    free = np.stack([H, 2 * H])
    Z, res = ops.periodic_backward_solve(op, free)
    # plain backward iteration over many periods
    Y = np.zeros((2, 2, 2))
    for _ in range(200):
        for t in (1, 0):
            Y = ops.lyap_apply(op.dual(), Y, t) + free[t]
    np.testing.assert_allclose(Z[0], Y, rtol=1e-10)
    assert res < 1e-12
