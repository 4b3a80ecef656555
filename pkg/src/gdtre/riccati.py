"""Backward Riccati recursion with an indefinite input weight.

One step maps X(t+1) to

    X(t) = Pi1 + M - (Pi2 + L) Rcal^-1 (Pi2 + L)^T,   Rcal = R + Pi3[X(t+1)],

with feedback gain F(t) = -Rcal^-1 (Pi2 + L)^T. The stabilizing solution is
obtained as the limit of finite-horizon iterates started from zero, the
horizon growing in whole periods.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, NotAdmissible, NotStabilizing, PreconditionFailed, SingularRcal
from .model import ProblemSpec, as_quadruple
from .operators import _pi_terms, _xi_P, lyapunov_operator, monodromy_spectral_radius, sym

_EPS = np.finfo(float).eps
_BLOWUP = 1e150


# --------------------------------------------------------------------------
# small symmetric helpers (eigendecomposition only: blocks may be indefinite)


def sym_sqrt(S):
    w, V = np.linalg.eigh(sym(S))
    return (V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(V, -1, -2)


def sym_inv_sqrt(S):
    w, V = np.linalg.eigh(sym(S))
    return (V / np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def sym_inv(S):
    w, V = np.linalg.eigh(sym(S))
    return (V / w[..., None, :]) @ np.swapaxes(V, -1, -2)


def _m1_of(spec, m1):
    if m1 is not None:
        return m1
    return spec.m1 if isinstance(spec, ProblemSpec) else None


# --------------------------------------------------------------------------
# sign classification


class SignClass(str, enum.Enum):
    STRONG = "Strong"
    ADMISSIBLE = "Admissible"
    INDEFINITE_ONLY = "IndefiniteOnly"
    DEGENERATE = "Degenerate"


@dataclass(frozen=True)
class SignReport:
    """Margins of the sign conditions, minimised over all matrices examined.

    delta1: min of -max eig of the Schur complement Rcal11 - Rcal12 Rcal22^-1 Rcal12^T
    delta2: min of min eig of Rcal22
    delta3: min of -max eig of Rcal11
    """

    sign_class: SignClass
    delta1: float
    delta2: float
    delta3: float
    inertia: tuple
    expected_inertia: tuple

    @property
    def admissible(self) -> bool:
        return self.sign_class in (SignClass.STRONG, SignClass.ADMISSIBLE)

    @property
    def strong(self) -> bool:
        return self.sign_class is SignClass.STRONG

    @property
    def inertia_ok(self) -> bool:
        return all(tuple(x) == self.expected_inertia for x in self.inertia)

    def to_dict(self):
        return {
            "class": self.sign_class.value,
            "admissible": self.admissible,
            "strong": self.strong,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
            "inertia_ok": self.inertia_ok,
        }


def inertia(S, threshold=1e-12):
    """(negatives, zeros, positives) of a symmetric matrix."""
    w = np.linalg.eigvalsh(sym(S))
    cut = threshold * max(1.0, float(np.abs(w).max()))
    return (int(np.sum(w < -cut)), int(np.sum(np.abs(w) <= cut)), int(np.sum(w > cut)))


def classify_sign(Rcal, m1, threshold=1e-12) -> SignReport:
    """Classify Rcal (any leading batch shape) against the sign conditions."""
    if isinstance(Rcal, RiccatiIterate):
        Rcal = Rcal.Rcal
    Rcal = sym(np.asarray(Rcal, dtype=float))
    m = Rcal.shape[-1]
    flat = Rcal.reshape(-1, m, m)
    R11, R12, R22 = flat[:, :m1, :m1], flat[:, :m1, m1:], flat[:, m1:, m1:]
    w22 = np.linalg.eigvalsh(R22)
    delta2 = float(w22[:, 0].min())
    delta3 = float((-np.linalg.eigvalsh(R11)[:, -1]).min())
    if delta2 > 0:
        schur = R11 - R12 @ sym_inv(R22) @ np.swapaxes(R12, -1, -2)
        delta1 = float((-np.linalg.eigvalsh(sym(schur))[:, -1]).min())
    else:
        delta1 = -np.inf
    inert = tuple(inertia(S, threshold) for S in flat)
    expected = (m1, 0, m - m1)
    if delta2 > threshold and delta3 > threshold:
        cls = SignClass.STRONG
    elif delta2 > threshold and delta1 > threshold:
        cls = SignClass.ADMISSIBLE
    elif all(x == expected for x in inert):
        cls = SignClass.INDEFINITE_ONLY
    else:
        cls = SignClass.DEGENERATE
    return SignReport(cls, delta1, delta2, delta3, inert, expected)


@dataclass(frozen=True)
class VFactorization:
    V11: np.ndarray
    V21: np.ndarray
    V22: np.ndarray

    def lower(self):
        m1 = self.V11.shape[-1]
        m2 = self.V22.shape[-1]
        zero = np.zeros(self.V11.shape[:-2] + (m1, m2))
        top = np.concatenate([self.V11, zero], axis=-1)
        bottom = np.concatenate([self.V21, self.V22], axis=-1)
        return np.concatenate([top, bottom], axis=-2)

    def reconstruct(self):
        """[V11 0; V21 V22]^T diag(-I, I) [V11 0; V21 V22]."""
        m1 = self.V11.shape[-1]
        m = m1 + self.V22.shape[-1]
        J = np.diag(np.r_[-np.ones(m1), np.ones(m - m1)])
        V = self.lower()
        return np.swapaxes(V, -1, -2) @ J @ V


def v_factorize(Rcal, m1, threshold=1e-12) -> VFactorization:
    if isinstance(Rcal, RiccatiIterate):
        Rcal = Rcal.Rcal
    Rcal = sym(np.asarray(Rcal, dtype=float))
    report = classify_sign(Rcal, m1, threshold)
    if not report.admissible:
        raise NotAdmissible(f"sign class is {report.sign_class.value}, factorisation needs Admissible")
    R11, R12, R22 = Rcal[..., :m1, :m1], Rcal[..., :m1, m1:], Rcal[..., m1:, m1:]
    R12t = np.swapaxes(R12, -1, -2)
    schur = R11 - R12 @ sym_inv(R22) @ R12t
    return VFactorization(sym_sqrt(-schur), sym_inv_sqrt(R22) @ R12t, sym_sqrt(R22))


# --------------------------------------------------------------------------
# one backward step


@dataclass(frozen=True, eq=False)
class RiccatiIterate:
    t: int
    X: np.ndarray  # (N, n, n)
    Rcal: np.ndarray  # (N, m, m)
    F: np.ndarray  # (N, m, n)
    inertia: tuple
    sign: SignReport | None = None

    @property
    def sign_class(self):
        return None if self.sign is None else self.sign.sign_class


def _step(q, t, Xnext, rcond, horizon=None):
    k = q.phase(t)
    terms = _pi_terms(q.A[k], q.B[k], _xi_P(q.P[k], Xnext))
    Rcal = sym(q.R[k] + terms.pi3)
    w, V = np.linalg.eigh(Rcal)
    aw = np.abs(w)
    top = aw.max(axis=-1)
    ratio = np.where(top > 0, aw.min(axis=-1) / np.where(top > 0, top, 1.0), 0.0)
    bad = np.flatnonzero(~(ratio >= rcond))
    if bad.size:
        i = int(bad[0])
        raise SingularRcal(t, i, float(aw[i].min()), horizon)
    G = terms.pi2 + q.L[k]
    Rinv = (V / w[:, None, :]) @ np.swapaxes(V, -1, -2)
    F = -Rinv @ np.swapaxes(G, -1, -2)
    X = sym(terms.pi1 + q.M[k] + G @ F)
    return X, Rcal, F, w


def riccati_step(spec, t, Xnext, m1=None):
    """One backward step. Returns (X, iterate, F)."""
    q = as_quadruple(spec)
    X, Rcal, F, w = _step(q, t, np.asarray(Xnext, dtype=float), q.tolerances.inversion_rcond)
    m1 = _m1_of(spec, m1)
    cut = q.tolerances.sign_threshold * np.maximum(1.0, np.abs(w).max(axis=-1, keepdims=True))
    inert = tuple((int((wi < -c).sum()), int((np.abs(wi) <= c).sum()), int((wi > c).sum()))
                  for wi, c in zip(w, cut[:, 0]))
    sign = classify_sign(Rcal, m1, q.tolerances.sign_threshold) if m1 is not None else None
    it = RiccatiIterate(t, X, Rcal, F, inert, sign)
    return X, it, F


def reparametrized_rhs(spec, t, Xnext, Gamma):
    """Right side of the Riccati step rewritten around an arbitrary gain Gamma.

    L*_Gamma[Xnext] + [I; Gamma]^T Q [I; Gamma] - (Gamma - F)^T Rcal (Gamma - F),
    where L*_Gamma uses A_k + B_k Gamma at the current mode. The value does
    not depend on Gamma and equals the ordinary step.
    """
    q = as_quadruple(spec)
    k = q.phase(t)
    Xnext = np.asarray(Xnext, dtype=float)
    Gamma = np.asarray(Gamma, dtype=float)
    _, Rcal, F, _ = _step(q, t, Xnext, q.tolerances.inversion_rcond)
    Y = _xi_P(q.P[k], Xnext)
    Acl = q.A[k] + q.B[k] @ Gamma[:, None]
    lyap = (np.swapaxes(Acl, -1, -2) @ Y[:, None] @ Acl).sum(axis=1)
    n = q.n
    IG = np.concatenate([np.broadcast_to(np.eye(n), (q.N, n, n)), Gamma], axis=-2)
    weight = np.swapaxes(IG, -1, -2) @ q.Q(t) @ IG
    D = Gamma - F
    penalty = np.swapaxes(D, -1, -2) @ Rcal @ D
    return sym(lyap + weight - penalty)


# --------------------------------------------------------------------------
# finite horizon


@dataclass(frozen=True, eq=False)
class FiniteHorizonSolution:
    """Iterates X_tau(t) for t = 0..tau, with X_tau(tau+1) = 0.

    ``X`` has shape (tau+2, N, n, n); ``iterates[t]`` is the step at time t.
    """

    tau: int
    X: np.ndarray
    iterates: list


def finite_horizon_solve(spec, tau: int, m1=None) -> FiniteHorizonSolution:
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    q = as_quadruple(spec)
    m1 = _m1_of(spec, m1)
    X = np.zeros((tau + 2, q.N, q.n, q.n))
    its = [None] * (tau + 1)
    for t in range(tau, -1, -1):
        try:
            X[t], its[t], _ = riccati_step(spec, t, X[t + 1], m1)
        except SingularRcal as exc:
            raise SingularRcal(exc.t, exc.mode, exc.min_abs_eig, horizon=tau) from None
    return FiniteHorizonSolution(tau, X, its)


# --------------------------------------------------------------------------
# stabilizing solution


def _sweep(q, Xterm, rcond, horizon):
    """Backward over one period from X(p) = Xterm; returns X(0..p-1)."""
    p = q.period
    out = np.empty((p, q.N, q.n, q.n))
    X = Xterm
    for t in range(p - 1, -1, -1):
        X = _step(q, t, X, rcond, horizon)[0]
        out[t] = X
    return out


def _delta(new, old):
    num = np.linalg.norm((new - old).reshape(new.shape[0], -1), axis=1)
    den = 1.0 + np.linalg.norm(old.reshape(old.shape[0], -1), axis=1)
    return float(np.max(num / den))


@dataclass(frozen=True, eq=False)
class StabilizingSolution:
    spec: object
    X: np.ndarray  # (period, N, n, n)
    F: np.ndarray  # (period, N, m, n)
    Rcal: np.ndarray  # (period, N, m, m), Rcal(t) = R(t) + Pi3(t)[X(t+1)]
    residual: float
    rho_closed: float
    sweeps: int = 0
    last_delta: float = 0.0
    sign: SignReport | None = None
    min_eig_X: float = 0.0

    @property
    def m1(self):
        return _m1_of(self.spec, None)

    @property
    def F1(self):
        return self.F[:, :, : self.m1]

    @property
    def F2(self):
        return self.F[:, :, self.m1:]

    @property
    def sign_margins(self):
        return (self.sign.delta1, self.sign.delta2) if self.sign is not None else None

    def X_at(self, t):
        return self.X[t % self.X.shape[0]]


def evaluate_solution(spec, X, sweeps=0, last_delta=0.0, m1=None) -> StabilizingSolution:
    """Gains, residual, closed-loop radius and sign report of a candidate periodic X."""
    q = as_quadruple(spec)
    X = sym(np.asarray(X, dtype=float))
    p = q.period
    if X.shape != (p, q.N, q.n, q.n):
        raise ValueError(f"solution has shape {X.shape}, expected {(p, q.N, q.n, q.n)}")
    F = np.empty((p, q.N, q.m, q.n))
    Rcal = np.empty((p, q.N, q.m, q.m))
    res = 0.0
    for t in range(p):
        Xt, Rcal[t], F[t], _ = _step(q, t, X[(t + 1) % p], q.tolerances.inversion_rcond)
        res = max(res, float(np.linalg.norm(Xt - X[t])))
    rho = monodromy_spectral_radius(lyapunov_operator(q, F))
    m1 = _m1_of(spec, m1)
    sign = classify_sign(Rcal, m1, q.tolerances.sign_threshold) if m1 is not None else None
    min_eig = float(np.linalg.eigvalsh(X).min())
    return StabilizingSolution(spec, X, F, Rcal, res, rho, sweeps, last_delta, sign, min_eig)


def solve_limit(spec, tol=None, max_sweeps=None, schedule="arithmetic", initial_sweeps=1, polish=True):
    """Limit of the zero-terminal iterates, compared one period apart.

    ``schedule`` is "arithmetic" (compare horizons k and k+1 periods) or
    "geometric" (compare k and 2k periods). Returns (X, sweeps, delta).
    """
    q = as_quadruple(spec)
    tol = q.tolerances.tol if tol is None else tol
    max_sweeps = q.tolerances.max_sweeps if max_sweeps is None else max_sweeps
    rcond = q.tolerances.inversion_rcond
    p = q.period
    if schedule not in ("arithmetic", "geometric"):
        raise ValueError(f"unknown schedule {schedule!r}")

    X = np.zeros((p, q.N, q.n, q.n))
    Xterm = np.zeros((q.N, q.n, q.n))
    sweeps = 0
    delta = np.inf
    checkpoint = max(1, int(initial_sweeps))
    snapshot = None
    prev = None
    converged = False
    while sweeps < max_sweeps:
        prev = X
        X = _sweep(q, Xterm, rcond, (sweeps + 1) * p - 1)
        Xterm = X[0]
        sweeps += 1
        size = float(np.abs(X).max())
        if not np.isfinite(size) or size > _BLOWUP:
            raise NoConvergence(sweeps, float(delta), "iterates grew without bound")
        if schedule == "arithmetic":
            if sweeps > checkpoint:
                delta = _delta(X, prev)
                if delta < tol:
                    converged = True
                    break
        elif sweeps == checkpoint:
            if snapshot is not None:
                delta = _delta(X, snapshot)
                if delta < tol:
                    converged = True
                    break
            snapshot = X
            checkpoint *= 2
    if not converged:
        raise NoConvergence(max_sweeps, float(delta))

    if polish:
        # a few more sweeps while the change still shrinks; the limit is an
        # attracting fixed point so this only removes the remaining tail
        d_prev = _delta(X, prev)
        while sweeps < max_sweeps:
            nxt = _sweep(q, X[0], rcond, (sweeps + 1) * p - 1)
            d = _delta(nxt, X)
            X = nxt
            sweeps += 1
            if d <= 4 * _EPS or d >= d_prev:
                break
            d_prev = d
    return X, sweeps, float(delta)


def stabilizing_solve(spec, tol=None, max_sweeps=None, schedule="arithmetic", initial_sweeps=1,
                      polish=True) -> StabilizingSolution:
    """Stabilizing solution of a game spec.

    Raises NoConvergence when the iterates do not settle, NotStabilizing
    (limit attached) when the limit does not stabilize the closed loop and
    NotAdmissible (limit attached) when the sign conditions or X >= 0 fail.
    """
    X, sweeps, delta = solve_limit(spec, tol, max_sweeps, schedule, initial_sweeps, polish)
    sol = evaluate_solution(spec, X, sweeps, delta)
    q = as_quadruple(spec)
    if not sol.rho_closed < 1.0 - q.tolerances.stability_margin:
        raise NotStabilizing(sol.rho_closed, sol)
    if sol.sign is not None and not sol.sign.admissible:
        raise NotAdmissible(f"limit has sign class {sol.sign.sign_class.value}", sol)
    scale = 1.0 + float(np.abs(sol.X).max())
    if sol.min_eig_X < -(q.tolerances.tol * scale):
        raise NotAdmissible(f"limit is not positive semidefinite (min eig {sol.min_eig_X:.3e})", sol)
    return sol


# --------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class ComparisonReport:
    min_gap: float
    gaps: np.ndarray = field(repr=False)  # min eig of X2(t) - X1(t), t = 0..tau

    @property
    def ordered(self) -> bool:
        return self.min_gap >= -1e-10


def compare_solutions(spec1, spec2, tau: int, tol=1e-10) -> ComparisonReport:
    """Min over t in [0, tau] and modes of min eig(X2(t) - X1(t)), both from zero terminal."""
    problems = []
    for name in ("A", "B", "P"):
        a, b = getattr(spec1, name), getattr(spec2, name)
        if a.shape != b.shape or not np.array_equal(a, b):
            problems.append(f"{name} differs between the two specs")
    if problems:
        raise PreconditionFailed(problems)
    for k in range(spec1.period):
        gap = np.linalg.eigvalsh(sym(spec2.Q(k) - spec1.Q(k)))[:, 0]
        for i in np.flatnonzero(gap < -tol):
            problems.append(f"Q2 - Q1 not PSD at t={k}, mode={int(i)} (min eig {gap[i]:.3e})")
    if problems:
        raise PreconditionFailed(problems)
    m1 = _m1_of(spec1, None) or _m1_of(spec2, None)
    s1 = finite_horizon_solve(spec1, tau, m1)
    s2 = finite_horizon_solve(spec2, tau, m1)
    for t in range(tau + 1):
        if not s2.iterates[t].sign.admissible:
            problems.append(f"second spec iterate not Admissible at t={t}")
        if not s1.iterates[t].sign.delta2 > 0:
            problems.append(f"first spec iterate violates Rcal22 > 0 at t={t}")
    if problems:
        raise PreconditionFailed(problems)
    gaps = np.array([np.linalg.eigvalsh(s2.X[t] - s1.X[t]).min() for t in range(tau + 1)])
    return ComparisonReport(float(gaps.min()), gaps)
