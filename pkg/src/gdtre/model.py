"""Problem data: periodic Markov-jump system, weights, tolerances.

All coefficient tables are stored as numpy arrays with the period axis
first and the mode axis second:

========  ==================================  ====================
field     shape                               meaning
========  ==================================  ====================
P         (period, N, N)                      row-stochastic P_t
A         (period, N, r+1, n, n)              drift + noise channels
B         (period, N, r+1, n, m)              m = m1 + m2
M         (period, N, n, n)                   state weight
L         (period, N, n, m)                   cross weight
R         (period, N, m, m)                   input weight (indefinite)
========  ==================================  ====================

Arrays are made read-only on construction, so a built spec can be shared
between threads.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import jsonfmt
from .errors import StructuralError


@dataclass(frozen=True)
class Dims:
    n: int
    m1: int
    m2: int
    r: int
    N: int
    period: int = 1

    def __post_init__(self):
        for name in ("n", "m1", "m2", "r", "N", "period"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise StructuralError(f"dims.{name} must be an integer, got {v!r}")
        lows = {"n": 1, "m1": 1, "m2": 1, "r": 0, "N": 1, "period": 1}
        for name, low in lows.items():
            if getattr(self, name) < low:
                raise StructuralError(f"dims.{name} must be >= {low}")

    @property
    def m(self) -> int:
        return self.m1 + self.m2


@dataclass(frozen=True)
class Tolerances:
    tol: float = 1e-10
    max_sweeps: int = 100_000
    stability_margin: float = 1e-7
    symmetrization: float = 1e-10
    probability: float = 1e-10
    inversion_rcond: float = 1e-12
    sign_threshold: float = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _check_shape(name, a, shape):
    a = np.asarray(a, dtype=float)
    if a.shape != tuple(shape):
        raise StructuralError(f"{name} has shape {a.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(a)):
        bad = tuple(int(k) for k in np.argwhere(~np.isfinite(a))[0])
        raise StructuralError(f"{name} has a non-finite entry at index {bad}")
    return a


def _symmetrized(name, a, tol):
    """Return (a + a^T)/2, rejecting matrices that are visibly non-symmetric."""
    at = np.swapaxes(a, -1, -2)
    asym = np.linalg.norm(a - at, axis=(-2, -1))
    scale = np.linalg.norm(a, axis=(-2, -1))
    bad = asym > tol * scale
    if np.any(bad):
        idx = tuple(int(k) for k in np.argwhere(bad)[0])
        raise StructuralError(f"{name}{list(idx)} is not symmetric (asymmetry {asym[idx]:.3e})")
    return 0.5 * (a + at)


@dataclass(frozen=True, eq=False)
class MarkovSpec:
    transition_matrices: np.ndarray
    initial_distribution: np.ndarray

    @classmethod
    def create(cls, P, pi0, tol=1e-10):
        """Build a chain, renormalising rows whose sums are within ``tol`` of one.

        Rows further off are kept as given so that :func:`validate` can
        report them.
        """
        P = np.array(P, dtype=float)
        pi0 = np.array(pi0, dtype=float)
        sums = P.sum(axis=-1, keepdims=True)
        # rows already stochastic up to rounding are left alone, which keeps
        # the parse/serialise round trip stable
        err = np.abs(sums - 1.0)
        fix = (err <= tol) & (err > P.shape[-1] * np.finfo(float).eps)
        P = np.where(fix, P / np.where(fix, sums, 1.0), P)
        s = pi0.sum()
        if pi0.shape[0] * np.finfo(float).eps < abs(s - 1.0) <= tol:
            pi0 = pi0 / s
        return cls(_frozen(P), _frozen(pi0))

    @property
    def N(self) -> int:
        return self.initial_distribution.shape[0]

    @property
    def period(self) -> int:
        return self.transition_matrices.shape[0]

    def distribution(self, t: int) -> np.ndarray:
        """Mode distribution at time t, propagated by pi_{s+1} = pi_s P_s."""
        pi = np.array(self.initial_distribution)
        p = self.period
        for s in range(t):
            pi = pi @ self.transition_matrices[s % p]
        return pi


@dataclass(frozen=True, eq=False)
class SystemCoeffs:
    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True, eq=False)
class WeightCoeffs:
    M: np.ndarray
    L: np.ndarray
    R: np.ndarray
    rho1: float = 1e-8
    rho2: float = 1e-8


@dataclass(frozen=True, eq=False)
class Quadruple:
    """Coefficients of one Riccati equation, without the game partition.

    The closed-loop equations built in :mod:`gdtre.synthesis` are of this
    type too, so every routine in :mod:`gdtre.riccati` works on either a
    :class:`ProblemSpec` or a bare quadruple.
    """

    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    M: np.ndarray
    L: np.ndarray
    R: np.ndarray
    tolerances: Tolerances = field(default_factory=Tolerances)

    @property
    def period(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]

    @property
    def r(self) -> int:
        return self.A.shape[2] - 1

    @property
    def n(self) -> int:
        return self.A.shape[3]

    @property
    def m(self) -> int:
        return self.B.shape[4]

    def phase(self, t: int) -> int:
        return t % self.period

    def Q(self, t: int) -> np.ndarray:
        """Stacked weight [[M, L], [L^T, R]] per mode at time t."""
        k = self.phase(t)
        top = np.concatenate([self.M[k], self.L[k]], axis=-1)
        bottom = np.concatenate([np.swapaxes(self.L[k], -1, -2), self.R[k]], axis=-1)
        return np.concatenate([top, bottom], axis=-2)


def as_quadruple(obj) -> Quadruple:
    return obj if isinstance(obj, Quadruple) else obj.quadruple


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    dims: Dims
    markov: MarkovSpec
    sys: SystemCoeffs
    weights: WeightCoeffs
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        d = self.dims
        t = self.tolerances
        p, N, n, m = d.period, d.N, d.n, d.m
        P = _check_shape("markov.transitions", self.markov.transition_matrices, (p, N, N))
        pi0 = _check_shape("markov.initial_distribution", self.markov.initial_distribution, (N,))
        A = _check_shape("system.A", self.sys.A, (p, N, d.r + 1, n, n))
        B = _check_shape("system.B", self.sys.B, (p, N, d.r + 1, n, m))
        M = _symmetrized("weights.M", _check_shape("weights.M", self.weights.M, (p, N, n, n)), t.symmetrization)
        L = _check_shape("weights.L", self.weights.L, (p, N, n, m))
        R = _symmetrized("weights.R", _check_shape("weights.R", self.weights.R, (p, N, m, m)), t.symmetrization)
        for name in ("rho1", "rho2"):
            v = getattr(self.weights, name)
            if not (np.isfinite(v) and v > 0):
                raise StructuralError(f"weights.{name} must be a positive finite number")
        # normalise the stored arrays (dtype, symmetry, read-only)
        object.__setattr__(self, "markov", MarkovSpec(_frozen(P), _frozen(pi0)))
        object.__setattr__(self, "sys", SystemCoeffs(_frozen(A), _frozen(B)))
        object.__setattr__(
            self,
            "weights",
            WeightCoeffs(_frozen(M), _frozen(L), _frozen(R), float(self.weights.rho1), float(self.weights.rho2)),
        )

    @classmethod
    def build(cls, A, B, P, M, L, R, m1, pi0=None, rho1=1e-8, rho2=1e-8, tolerances=None):
        """Convenience constructor from full-shape arrays (see module docstring)."""
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim != 5 or B.ndim != 5:
            raise StructuralError("A and B must have shape (period, N, r+1, n, *)")
        p, N, r1, n, _ = A.shape
        m = B.shape[-1]
        tolerances = tolerances or Tolerances()
        if pi0 is None:
            pi0 = np.full(N, 1.0 / N)
        dims = Dims(n=n, m1=m1, m2=m - m1, r=r1 - 1, N=N, period=p)
        markov = MarkovSpec.create(P, pi0, tolerances.probability)
        return cls(dims, markov, SystemCoeffs(A, B), WeightCoeffs(M, L, R, rho1, rho2), tolerances)

    @cached_property
    def quadruple(self) -> Quadruple:
        w = self.weights
        return Quadruple(self.sys.A, self.sys.B, self.markov.transition_matrices, w.M, w.L, w.R, self.tolerances)

    # shorthand used throughout the solvers
    A = property(lambda self: self.sys.A)
    B = property(lambda self: self.sys.B)
    P = property(lambda self: self.markov.transition_matrices)
    M = property(lambda self: self.weights.M)
    L = property(lambda self: self.weights.L)
    R = property(lambda self: self.weights.R)
    n = property(lambda self: self.dims.n)
    m = property(lambda self: self.dims.m)
    m1 = property(lambda self: self.dims.m1)
    m2 = property(lambda self: self.dims.m2)
    N = property(lambda self: self.dims.N)
    r = property(lambda self: self.dims.r)
    period = property(lambda self: self.dims.period)

    def phase(self, t: int) -> int:
        return time_index(self, t)

    def Q(self, t: int) -> np.ndarray:
        return self.quadruple.Q(t)

    def replace(self, **changes) -> "ProblemSpec":
        """Copy with some of A, B, P, pi0, M, L, R, rho1, rho2, tolerances swapped."""
        kw = dict(
            A=self.A, B=self.B, P=self.P, M=self.M, L=self.L, R=self.R, m1=self.m1,
            pi0=self.markov.initial_distribution, rho1=self.weights.rho1,
            rho2=self.weights.rho2, tolerances=self.tolerances,
        )
        unknown = set(changes) - set(kw)
        if unknown:
            raise TypeError(f"unknown fields: {sorted(unknown)}")
        kw.update(changes)
        return ProblemSpec.build(**kw)


def time_index(spec, t: int) -> int:
    if t < 0:
        raise ValueError("time index must be nonnegative")
    return int(t) % spec.period


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    t: int | None = None
    mode: int | None = None
    margin: float | None = None

    def to_dict(self):
        return {"code": self.code, "message": self.message, "t": self.t, "mode": self.mode, "margin": self.margin}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def codes(self):
        return [v.code for v in self.violations]

    def to_dict(self):
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}


def _inv_sym(S):
    w, V = np.linalg.eigh(S)
    return (V / w) @ V.T


def validate(spec: ProblemSpec) -> ValidationReport:
    """Check the chain and sign hypotheses; structural problems raise instead."""
    out = []
    tol = spec.tolerances
    P = spec.P
    pi0 = spec.markov.initial_distribution
    m1 = spec.m1

    for t in range(spec.period):
        for i in range(spec.N):
            row = P[t, i]
            if np.any(row < 0):
                j = int(np.argmin(row))
                out.append(Violation("H1b-negative-probability",
                                     f"negative transition probability p_{t}({i},{j}) = {row[j]:.6g}",
                                     t, i, float(row[j])))
            s = row.sum()
            if abs(s - 1.0) > tol.probability:
                out.append(Violation("H1b-row-sum", f"row {i} of P_{t} sums to {s:.17g}", t, i, float(s - 1.0)))
        cols = P[t].sum(axis=0)
        for j in np.flatnonzero(cols <= 0):
            out.append(Violation("H1b-column-sum-zero", f"column {j} of P_{t} has zero sum (degenerate chain)",
                                 t, int(j), float(cols[j])))

    for i in np.flatnonzero(pi0 <= 0):
        out.append(Violation("H3b-initial-distribution", f"pi0({i}) = {pi0[i]:.6g} is not positive",
                             None, int(i), float(pi0[i])))
    if abs(pi0.sum() - 1.0) > tol.probability:
        out.append(Violation("H3b-initial-distribution", f"pi0 sums to {pi0.sum():.17g}",
                             None, None, float(pi0.sum() - 1.0)))

    rho1, rho2 = spec.weights.rho1, spec.weights.rho2
    for t in range(spec.period):
        for i in range(spec.N):
            R = spec.R[t, i]
            R11, R12, R22 = R[:m1, :m1], R[:m1, m1:], R[m1:, m1:]
            lo = float(np.linalg.eigvalsh(R22)[0])
            if lo < rho2:
                out.append(Violation("H4a", f"min eig of R22 is {lo:.6g} < rho2 = {rho2:.3g}", t, i, lo - rho2))
                continue
            R22i = _inv_sym(R22)
            L2 = spec.L[t, i][:, m1:]
            S = spec.M[t, i] - L2 @ R22i @ L2.T
            mS = float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])
            floor = -tol.symmetrization * max(1.0, float(np.linalg.norm(spec.M[t, i])))
            if mS < floor:
                out.append(Violation("H4b", f"M - L2 R22^-1 L2^T has min eig {mS:.6g} < 0", t, i, mS))
            sch = R11 - R12 @ R22i @ R12.T
            hi = float(np.linalg.eigvalsh(0.5 * (sch + sch.T))[-1])
            if hi > -rho1:
                out.append(Violation("H4c", f"H4 Schur complement not <= -rho1: max eig {hi:.6g}",
                                     t, i, -rho1 - hi))
    return ValidationReport(tuple(out))


# --------------------------------------------------------------------------
# problem file I/O

_TOP = ("dims", "markov", "system", "weights", "tolerances")
_DIMS = ("n", "m1", "m2", "r", "N", "period")
_MARKOV = ("transitions", "initial_distribution")
_SYSTEM = ("A", "B")
_WEIGHTS = ("M", "L", "R", "rho1", "rho2")
_TOLS = tuple(f.name for f in dataclasses.fields(Tolerances))


def _keys(where, obj, allowed, required):
    if not isinstance(obj, dict):
        raise StructuralError(f"{where} must be an object")
    unknown = [k for k in obj if k not in allowed]
    if unknown:
        raise StructuralError(f"unknown key(s) in {where}: {', '.join(map(str, unknown))}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise StructuralError(f"missing key(s) in {where}: {', '.join(missing)}")


def _array(where, value):
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise StructuralError(f"{where}: not a rectangular numeric array ({exc})") from None
    return a


def problem_from_dict(doc) -> ProblemSpec:
    _keys("problem", doc, _TOP, ("dims", "markov", "system", "weights"))
    _keys("dims", doc["dims"], _DIMS, _DIMS[:-1])
    _keys("markov", doc["markov"], _MARKOV, _MARKOV)
    _keys("system", doc["system"], _SYSTEM, _SYSTEM)
    _keys("weights", doc["weights"], _WEIGHTS, ("M", "L", "R"))
    tol_doc = doc.get("tolerances", {})
    _keys("tolerances", tol_doc, _TOLS, ())
    try:
        tolerances = Tolerances(**{k: (int(v) if k == "max_sweeps" else float(v)) for k, v in tol_doc.items()})
    except (TypeError, ValueError) as exc:
        raise StructuralError(f"tolerances: {exc}") from None
    dims = Dims(**doc["dims"])
    mk = doc["markov"]
    markov = MarkovSpec.create(_array("markov.transitions", mk["transitions"]),
                               _array("markov.initial_distribution", mk["initial_distribution"]),
                               tolerances.probability)
    sysc = SystemCoeffs(_array("system.A", doc["system"]["A"]), _array("system.B", doc["system"]["B"]))
    w = doc["weights"]
    weights = WeightCoeffs(_array("weights.M", w["M"]), _array("weights.L", w["L"]), _array("weights.R", w["R"]),
                           float(w.get("rho1", 1e-8)), float(w.get("rho2", 1e-8)))
    return ProblemSpec(dims, markov, sysc, weights, tolerances)


def problem_to_dict(spec: ProblemSpec) -> dict:
    d = spec.dims
    return {
        "dims": {k: int(getattr(d, k)) for k in _DIMS},
        "markov": {
            "transitions": spec.P,
            "initial_distribution": spec.markov.initial_distribution,
        },
        "system": {"A": spec.A, "B": spec.B},
        "weights": {"M": spec.M, "L": spec.L, "R": spec.R, "rho1": spec.weights.rho1, "rho2": spec.weights.rho2},
        "tolerances": dataclasses.asdict(spec.tolerances),
    }


def dumps_problem(spec: ProblemSpec) -> str:
    return jsonfmt.dumps(problem_to_dict(spec))


def parse_problem(text: str) -> ProblemSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructuralError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return problem_from_dict(doc)


def load_problem(path) -> ProblemSpec:
    return parse_problem(Path(path).read_text())


def save_problem(spec: ProblemSpec, path) -> None:
    Path(path).write_text(dumps_problem(spec))


def spec_digest(spec: ProblemSpec) -> str:
    return hashlib.sha256(dumps_problem(spec).encode()).hexdigest()
