"""Linear operators on N-tuples of symmetric matrices.

A tuple X of N symmetric n x n matrices is stored as an array of shape
(N, n, n). The inner product is sum_i Tr[X(i) Y(i)]. Coordinates use the
scaled half-vectorisation (off-diagonal entries multiplied by sqrt(2)),
which is orthonormal for that inner product, so the matrix of an adjoint
operator is the transpose of the forward one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, NotStable
from .model import as_quadruple

POWER_RTOL = 1e-12
POWER_MAX_ITER = 10_000


def sym(X):
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def inner(X, Y) -> float:
    return float(np.einsum("iab,iba->", X, Y))


def identity_tuple(N, n):
    return np.broadcast_to(np.eye(n), (N, n, n)).copy()


# --------------------------------------------------------------------------
# conditional expectation and quadratic-form operators


def xi(spec, t, X):
    """result(i) = sum_j p_t(i, j) X(j)."""
    q = as_quadruple(spec)
    P = q.P[q.phase(t)]
    return np.einsum("ij,jab->iab", P, X)


def _xi_P(P, X):
    return np.einsum("ij,jab->iab", P, X)


@dataclass(frozen=True)
class PiTerms:
    """Pi_1, Pi_2, Pi_3 at one time, with block views for the input partition."""

    pi1: np.ndarray  # (N, n, n)
    pi2: np.ndarray  # (N, n, m)
    pi3: np.ndarray  # (N, m, m)

    def __iter__(self):
        return iter((self.pi1, self.pi2, self.pi3))

    def blocks(self, m1):
        return {
            "pi21": self.pi2[:, :, :m1],
            "pi22": self.pi2[:, :, m1:],
            "pi311": self.pi3[:, :m1, :m1],
            "pi312": self.pi3[:, :m1, m1:],
            "pi322": self.pi3[:, m1:, m1:],
        }


def pi_ops(spec, t, X) -> PiTerms:
    """Sums over noise channels k = 0..r of A_k^T Y A_k, A_k^T Y B_k, B_k^T Y B_k with Y = xi(X)."""
    q = as_quadruple(spec)
    k = q.phase(t)
    return _pi_terms(q.A[k], q.B[k], _xi_P(q.P[k], X))


def _pi_terms(A, B, Y):
    # A: (N, r+1, n, n), B: (N, r+1, n, m), Y: (N, n, n)
    At = np.swapaxes(A, -1, -2)
    YA = Y[:, None] @ A
    YB = Y[:, None] @ B
    pi1 = (At @ YA).sum(axis=1)
    pi2 = (At @ YB).sum(axis=1)
    pi3 = (np.swapaxes(B, -1, -2) @ YB).sum(axis=1)
    return PiTerms(sym(pi1), pi2, sym(pi3))


# --------------------------------------------------------------------------
# Lyapunov operators


@dataclass(frozen=True, eq=False)
class LyapunovOperator:
    """Periodic family of Lyapunov operators built from closed-loop matrices.

    ``matrices`` has shape (period, N, r+1, n, n); ``P`` has shape
    (period, N, N). The forward map sends X to
    sum_k sum_j p_t(j, i) M_k(t, j) X(j) M_k(t, j)^T; the adjoint map sends X to
    sum_k M_k(t, i)^T xi(X)(i) M_k(t, i).
    """

    matrices: np.ndarray
    P: np.ndarray
    adjoint: bool = False

    @property
    def period(self) -> int:
        return self.matrices.shape[0]

    @property
    def N(self) -> int:
        return self.matrices.shape[1]

    @property
    def n(self) -> int:
        return self.matrices.shape[-1]

    @property
    def dim(self) -> int:
        n = self.n
        return self.N * n * (n + 1) // 2

    def dual(self) -> "LyapunovOperator":
        return LyapunovOperator(self.matrices, self.P, not self.adjoint)

    def forward(self) -> "LyapunovOperator":
        return self if not self.adjoint else self.dual()

    def __call__(self, t, X):
        return lyap_apply(self, X, t)


def lyapunov_operator(spec, F=None, adjoint=False) -> LyapunovOperator:
    """Operator of the system closed by u = F x (open loop when F is None).

    F has shape (period, N, m, n).
    """
    q = as_quadruple(spec)
    mats = np.array(q.A, dtype=float)
    if F is not None:
        mats = mats + q.B @ np.asarray(F)[:, :, None]
    return LyapunovOperator(mats, np.asarray(q.P), adjoint)


def lyap_apply(op: LyapunovOperator, X, t=0):
    k = t % op.period
    Mk = op.matrices[k]
    P = op.P[k]
    if op.adjoint:
        Y = _xi_P(P, X)
        out = (np.swapaxes(Mk, -1, -2) @ Y[:, None] @ Mk).sum(axis=1)
    else:
        Z = (Mk @ X[:, None] @ np.swapaxes(Mk, -1, -2)).sum(axis=1)
        out = np.einsum("ji,jab->iab", P, Z)
    return sym(out)


# --------------------------------------------------------------------------
# coordinates


def _basis_index(n):
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return iu, scale


def coords(X):
    """Scaled half-vectorisation of a tuple, concatenated over modes."""
    X = np.asarray(X)
    n = X.shape[-1]
    iu, scale = _basis_index(n)
    return (X[:, iu[0], iu[1]] * scale).reshape(-1)


def from_coords(v, N, n):
    iu, scale = _basis_index(n)
    v = np.asarray(v).reshape(N, -1) / scale
    X = np.zeros((N, n, n))
    X[:, iu[0], iu[1]] = v
    X[:, iu[1], iu[0]] = v
    return X


def operator_matrix(op: LyapunovOperator, t=0) -> np.ndarray:
    """Dense D x D matrix of the operator at time t in the scaled basis."""
    N, n, D = op.N, op.n, op.dim
    out = np.empty((D, D))
    for c in range(D):
        e = np.zeros(D)
        e[c] = 1.0
        out[:, c] = coords(lyap_apply(op, from_coords(e, N, n), t))
    return out


def monodromy(op: LyapunovOperator) -> np.ndarray:
    """Phi = M(p-1) ... M(0) for the forward operator family."""
    fwd = op.forward()
    Phi = np.eye(fwd.dim)
    for t in range(fwd.period):
        Phi = operator_matrix(fwd, t) @ Phi
    return Phi


def spectral_radius(Phi, seed=None) -> float:
    """Spectral radius of a cone-preserving matrix.

    Power iteration from ``seed`` (coordinates of a positive definite tuple,
    so the Perron component is present); falls back to a dense eigensolver
    when the estimate stagnates.
    """
    D = Phi.shape[0]
    v = np.ones(D) if seed is None else np.asarray(seed, dtype=float)
    v = v / np.linalg.norm(v)
    lam = 0.0
    power_res = np.inf
    for _ in range(POWER_MAX_ITER):
        w = Phi @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        change = abs(nw - lam)
        lam = nw
        v = w / nw
        if change <= POWER_RTOL * nw:
            power_res = np.linalg.norm(Phi @ v - lam * v) / max(lam, 1e-300)
            if power_res <= 1e-6:
                return float(lam)
            break
    try:
        ev = np.linalg.eigvals(Phi)
    except np.linalg.LinAlgError:
        raise NonConvergence(power_res, np.inf) from None
    if not np.all(np.isfinite(ev)):
        raise NonConvergence(power_res, np.inf)
    return float(np.max(np.abs(ev)))


def monodromy_spectral_radius(op: LyapunovOperator) -> float:
    n = op.n
    return spectral_radius(monodromy(op), coords(identity_tuple(op.N, n)))


def is_stable(op: LyapunovOperator, margin=1e-7) -> bool:
    return monodromy_spectral_radius(op) < 1.0 - margin


# --------------------------------------------------------------------------
# periodic backward Lyapunov equations


def periodic_backward_solve(op: LyapunovOperator, free):
    """Periodic solution of Z(t) = L*(t)[Z(t+1)] + H(t).

    ``free`` has shape (period, N, n, n). Requires the forward family to be
    exponentially stable. Returns (Z, residual) with Z of shape
    (period, N, n, n).
    """
    adj = op.forward().dual()
    p, N, n = adj.period, adj.N, adj.n
    free = np.asarray(free, dtype=float)
    # c = value at t=0 of the recursion started from zero at t=p
    Z = np.zeros((N, n, n))
    for t in reversed(range(p)):
        Z = lyap_apply(adj, Z, t) + free[t]
    c = coords(Z)
    Psi = monodromy(op).T
    z0 = np.linalg.solve(np.eye(adj.dim) - Psi, c)
    Z0 = from_coords(z0, N, n)
    out = np.empty((p, N, n, n))
    nxt = Z0
    for t in reversed(range(p)):
        nxt = lyap_apply(adj, nxt, t) + free[t]
        out[t] = nxt
    out = sym(out)
    res = 0.0
    for t in range(p):
        nxt = out[(t + 1) % p]
        d = out[t] - lyap_apply(adj, nxt, t) - free[t]
        res = max(res, float(np.linalg.norm(d)))
    return out, res


@dataclass(frozen=True)
class Certificate:
    Y: np.ndarray  # (period, N, n, n)
    lower: float
    upper: float
    residual: float
    rho: float


def stability_certificate(op: LyapunovOperator, margin=1e-7, tol=1e-10) -> Certificate:
    """Bounded positive solution of Y(t) = L*(t)[Y(t+1)] + I.

    It exists exactly when the forward family is exponentially stable;
    otherwise :class:`NotStable` is raised.
    """
    rho = monodromy_spectral_radius(op)
    if not rho < 1.0 - margin:
        raise NotStable(rho)
    free = np.broadcast_to(np.eye(op.n), (op.period, op.N, op.n, op.n))
    Y, res = periodic_backward_solve(op, free)
    eig = np.linalg.eigvalsh(Y)
    scale = max(1.0, float(np.abs(eig).max()))
    if res > tol * scale:
        raise NotStable(rho)
    return Certificate(Y, float(eig.min()), float(eig.max()), res, rho)
