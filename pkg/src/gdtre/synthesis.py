"""Constructions around the Riccati solver.

Covers gain splitting, the equation obtained by closing the loop with
u2 = K x + W u1, the membership test for such (K, W) pairs, the
full-information responder gains, and detectability of the auxiliary
system used by the existence theory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    NoConvergence,
    NoStabilizingClosedLoopSolution,
    NotAdmissible,
    NotStabilizingGain,
    SingularRcal,
    SynthesisFailed,
)
from .model import ProblemSpec, Quadruple
from .operators import LyapunovOperator, _pi_terms, _xi_P, monodromy_spectral_radius, sym
from .riccati import (
    SignReport,
    StabilizingSolution,
    classify_sign,
    evaluate_solution,
    solve_limit,
    sym_inv,
    v_factorize,
)


def _T(a):
    return np.swapaxes(a, -1, -2)


def split_gain(F, m1):
    F = np.asarray(F)
    return F[..., :m1, :], F[..., m1:, :]


def stack_gain(F1, F2):
    return np.concatenate([F1, F2], axis=-2)


@dataclass(frozen=True, eq=False)
class GainPair:
    K: np.ndarray  # (period, N, m2, n)
    W: np.ndarray  # (period, N, m2, m1)

    @classmethod
    def zeros(cls, spec):
        p, N = spec.period, spec.N
        return cls(np.zeros((p, N, spec.m2, spec.n)), np.zeros((p, N, spec.m2, spec.m1)))

    def check(self, spec):
        p, N = spec.period, spec.N
        if self.K.shape != (p, N, spec.m2, spec.n):
            raise ValueError(f"K has shape {self.K.shape}, expected {(p, N, spec.m2, spec.n)}")
        if self.W.shape != (p, N, spec.m2, spec.m1):
            raise ValueError(f"W has shape {self.W.shape}, expected {(p, N, spec.m2, spec.m1)}")
        if not (np.all(np.isfinite(self.K)) and np.all(np.isfinite(self.W))):
            raise ValueError("gain pair has non-finite entries")


@dataclass(frozen=True, eq=False)
class ClosedLoopSpec:
    """Riccati data of the loop closed by u2 = K x + W u1; the remaining input is u1."""

    quadruple: Quadruple
    parent: ProblemSpec
    gains: GainPair

    @property
    def A_K(self):
        return self.quadruple.A

    @property
    def B_W(self):
        return self.quadruple.B

    @property
    def M_K(self):
        return self.quadruple.M

    @property
    def L_KW(self):
        return self.quadruple.L

    @property
    def R_W(self):
        return self.quadruple.R


def close_loop(spec: ProblemSpec, gains: GainPair) -> ClosedLoopSpec:
    gains.check(spec)
    m1 = spec.m1
    K, W = gains.K, gains.W
    B1, B2 = spec.B[..., :m1], spec.B[..., m1:]
    L1, L2 = spec.L[..., :m1], spec.L[..., m1:]
    R = spec.R
    R11, R12, R22 = R[..., :m1, :m1], R[..., :m1, m1:], R[..., m1:, m1:]
    A_K = spec.A + B2 @ K[:, :, None]
    B_W = B1 + B2 @ W[:, :, None]
    M_K = sym(spec.M + L2 @ K + _T(K) @ _T(L2) + _T(K) @ R22 @ K)
    L_KW = L1 + _T(K) @ _T(R12) + (L2 + _T(K) @ R22) @ W
    R_W = sym(R11 + R12 @ W + _T(W) @ _T(R12) + _T(W) @ R22 @ W)
    q = Quadruple(A_K, B_W, spec.P, M_K, L_KW, R_W, spec.tolerances)
    return ClosedLoopSpec(q, spec, gains)


@dataclass(frozen=True, eq=False)
class MembershipReport:
    member: bool
    rho_open: float  # u1 = 0 closed loop
    xi: float  # min eig of -(R_W + Pi_W[X_KW(t+1)])
    rho_closed: float  # closed loop under the u1 gain of X_KW
    X: np.ndarray  # X_KW, (period, N, n, n)
    min_eig_X: float
    residual: float
    sign: SignReport  # original Rcal evaluated at X_KW

    def to_dict(self):
        return {
            "member": self.member,
            "rho_open": self.rho_open,
            "xi": self.xi,
            "rho_closed": self.rho_closed,
            "min_eig_X": self.min_eig_X,
            "residual": self.residual,
            "sign": self.sign.to_dict(),
            "X": self.X,
        }


def a_sigma_membership(spec: ProblemSpec, gains: GainPair, tol=None, max_sweeps=None) -> MembershipReport:
    """Check that (K, W) stabilizes the loop and admits a stabilizing closed-loop solution.

    The closed-loop equation has a negative definite input weight. Writing
    Y = -X turns it into an equation with positive definite weight, solved
    with the same zero-terminal iteration.
    """
    cl = close_loop(spec, gains)
    q = cl.quadruple
    tols = spec.tolerances
    rho_open = monodromy_spectral_radius(LyapunovOperator(q.A, q.P))
    if not rho_open < 1.0 - tols.stability_margin:
        raise NotStabilizingGain(rho_open)

    flipped = Quadruple(q.A, q.B, q.P, -q.M, -q.L, -q.R, tols)
    try:
        Y, sweeps, delta = solve_limit(flipped, tol, max_sweeps)
    except (NoConvergence, SingularRcal) as exc:
        raise NoStabilizingClosedLoopSolution(f"iteration diverged ({exc})") from None
    ysol = evaluate_solution(flipped, Y, sweeps, delta)
    if not ysol.rho_closed < 1.0 - tols.stability_margin:
        raise NoStabilizingClosedLoopSolution(f"limit is not stabilizing (spectral radius {ysol.rho_closed:.6g})")
    # Rcal of the flipped equation is -(R_W + Pi_W[X])
    xi = float(np.linalg.eigvalsh(ysol.Rcal)[..., 0].min())
    if not xi > tols.sign_threshold:
        raise NoStabilizingClosedLoopSolution(f"sign condition fails (xi = {xi:.3e})")

    X = -ysol.X
    p = spec.period
    Rcal = np.empty((p, spec.N, spec.m, spec.m))
    for t in range(p):
        terms = _pi_terms(spec.A[t], spec.B[t], _xi_P(spec.P[t], X[(t + 1) % p]))
        Rcal[t] = sym(spec.R[t] + terms.pi3)
    sign = classify_sign(Rcal, spec.m1, tols.sign_threshold)
    min_eig = float(np.linalg.eigvalsh(X).min())
    psd = min_eig >= -tols.tol * (1.0 + float(np.abs(X).max()))
    return MembershipReport(bool(psd and sign.admissible), rho_open, xi, ysol.rho_closed, X, min_eig,
                            ysol.residual, sign)


@dataclass(frozen=True, eq=False)
class FullInformationGains:
    K: np.ndarray  # (period, N, m2, n)
    W: np.ndarray  # (period, N, m2, m1)
    V11: np.ndarray
    V21: np.ndarray
    V22: np.ndarray

    @property
    def pair(self) -> GainPair:
        return GainPair(self.K, self.W)


def full_information_gains(sol: StabilizingSolution) -> FullInformationGains:
    """Responder gains u2 = K x + W u1 built from the factorisation of Rcal at the solution."""
    m1 = sol.m1
    if sol.sign is None or not sol.sign.admissible:
        raise NotAdmissible("full-information gains need an Admissible solution")
    V = v_factorize(sol.Rcal, m1, sol.spec.tolerances.sign_threshold)
    V22inv = sym_inv(V.V22)
    W = -V22inv @ V.V21
    K = V22inv @ V.V21 @ sol.F1 + sol.F2
    return FullInformationGains(K, W, V.V11, V.V21, V.V22)


# --------------------------------------------------------------------------
# auxiliary system and detectability


@dataclass(frozen=True, eq=False)
class DetectabilityResult:
    detectable: bool
    H: np.ndarray | None  # (period, N, n, p)
    rho_injected: float
    C: np.ndarray  # (period, N, p, n)
    A_aux: np.ndarray  # (period, N, r+1, n, n)

    def to_dict(self):
        return {
            "detectable": self.detectable,
            "rho_injected": self.rho_injected,
            "output_dim": int(self.C.shape[2]),
            "H": self.H,
        }


def auxiliary_system(spec: ProblemSpec):
    """Return (A_aux, C): A_j - B_j2 R22^-1 L2^T and a square-root factor of M - L2 R22^-1 L2^T.

    C has one zero-padded row block of size p = the largest numerical rank
    over (t, i).
    """
    m1 = spec.m1
    R22inv = sym_inv(spec.R[..., m1:, m1:])
    L2 = spec.L[..., m1:]
    A_aux = spec.A - spec.B[..., m1:] @ (R22inv @ _T(L2))[:, :, None]
    S = sym(spec.M - L2 @ R22inv @ _T(L2))
    w, V = np.linalg.eigh(S)
    cut = 1e-12 * np.trace(S, axis1=-2, axis2=-1)
    keep = (w > cut[..., None]) & (w > 0)
    p_out = int(keep.sum(axis=-1).max())
    # sign convention: largest entry of each eigenvector positive, so C is deterministic
    pivot = np.take_along_axis(V, np.abs(V).argmax(axis=-2)[..., None, :], axis=-2)
    V = V * np.where(pivot < 0, -1.0, 1.0)
    rows = np.sqrt(np.where(keep, w, 0.0))[..., :, None] * _T(V)  # (..., n, n), row k = sqrt(w_k) v_k^T
    order = np.argsort(~keep, axis=-1, kind="stable")  # kept rows first
    rows = np.take_along_axis(rows, order[..., None], axis=-2)
    C = rows[..., :p_out, :]
    return A_aux, C


def _injected_operator(spec, A_aux, C, H):
    mats = np.array(A_aux)
    mats[:, :, 0] = A_aux[:, :, 0] + H @ C
    return LyapunovOperator(mats, spec.P)


def _synthesize_injection(spec, A_aux, C, max_sweeps=10_000, tol=1e-12):
    """Forward filter-type recursion; H(t) = -A0 Y C^T (I + C Y C^T)^-1."""
    p, N, n = spec.period, spec.N, spec.n
    q = C.shape[2]
    P = spec.P
    A0 = A_aux[:, :, 0]
    noise = A_aux[:, :, 1:]
    I = np.eye(n)
    Y = np.zeros((N, n, n))
    start = None
    H = np.zeros((p, N, n, q))
    for sweep in range(max_sweeps):
        for t in range(p):
            if q:
                S = np.eye(q) + C[t] @ Y @ _T(C[t])
                H[t] = -A0[t] @ Y @ _T(C[t]) @ np.linalg.inv(S)
            Acl = A0[t] + H[t] @ C[t]
            Z = Acl @ Y @ _T(Acl) + H[t] @ _T(H[t]) + I
            Z = Z + (noise[t] @ Y[:, None] @ _T(noise[t])).sum(axis=1)
            Y = sym(np.einsum("ji,jab->iab", P[t], Z))
        size = float(np.abs(Y).max())
        if not np.isfinite(size) or size > 1e12:
            raise SynthesisFailed("dual recursion diverged")
        if start is not None:
            d = float(np.abs(Y - start).max()) / (1.0 + size)
            if d < tol:
                return H
        start = Y.copy()
    raise SynthesisFailed(f"dual recursion did not settle in {max_sweeps} periods")


def auxiliary_detectability(spec: ProblemSpec, H=None, max_sweeps=10_000) -> DetectabilityResult:
    A_aux, C = auxiliary_system(spec)
    q = C.shape[2]
    if H is None:
        H = _synthesize_injection(spec, A_aux, C, max_sweeps)
    H = np.asarray(H, dtype=float)
    shape = (spec.period, spec.N, spec.n, q)
    if H.shape != shape:
        raise ValueError(f"injection gain has shape {H.shape}, expected {shape}")
    rho = monodromy_spectral_radius(_injected_operator(spec, A_aux, C, H))
    ok = rho < 1.0 - spec.tolerances.stability_margin
    return DetectabilityResult(bool(ok), H if ok else None, rho, C, A_aux)


def mode_distribution_margin(spec: ProblemSpec) -> float:
    """Smallest mode probability over one period, starting from pi0."""
    pi = np.array(spec.markov.initial_distribution)
    low = float(pi.min())
    for t in range(spec.period):
        pi = pi @ spec.P[t]
        low = min(low, float(pi.min()))
    return low
