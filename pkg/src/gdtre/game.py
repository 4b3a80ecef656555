"""Exact costs of linear strategy pairs and saddle-point verification.

Costs are infinite-horizon expectations computed from the periodic solution
of a backward Lyapunov equation, so no sampling is involved here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionFailed, SaddleViolation, UnstablePair
from .model import ProblemSpec
from .operators import lyap_apply, lyapunov_operator, monodromy_spectral_radius, periodic_backward_solve
from .riccati import StabilizingSolution
from .synthesis import FullInformationGains, full_information_gains


def _T(a):
    return np.swapaxes(a, -1, -2)


@dataclass(frozen=True, eq=False)
class StrategyPair:
    """Linear strategies: state feedback (F1, F2) or full information (F1, K, W).

    Under full information player 2 answers u2 = K x + W u1.
    """

    F1: np.ndarray
    F2: np.ndarray | None = None
    K: np.ndarray | None = None
    W: np.ndarray | None = None

    def __post_init__(self):
        if (self.F2 is None) == (self.K is None or self.W is None):
            raise ValueError("give either F2 or both K and W")

    @classmethod
    def state_feedback(cls, F1, F2):
        return cls(np.asarray(F1, dtype=float), F2=np.asarray(F2, dtype=float))

    @classmethod
    def full_information(cls, F1, K, W):
        return cls(np.asarray(F1, dtype=float), K=np.asarray(K, dtype=float), W=np.asarray(W, dtype=float))

    @classmethod
    def equilibrium(cls, sol: StabilizingSolution):
        return cls.state_feedback(sol.F1, sol.F2)

    @property
    def kind(self) -> str:
        return "state_feedback" if self.F2 is not None else "full_information"

    def player2_gain(self):
        """Equivalent state-feedback gain of player 2."""
        if self.F2 is not None:
            return self.F2
        return self.K + self.W @ self.F1

    def gain(self):
        return np.concatenate([self.F1, self.player2_gain()], axis=-2)

    def controls(self, phase, modes, x):
        """Inputs for a batch of states x (count, n) in modes (count,) at one phase."""
        u1 = np.einsum("bij,bj->bi", self.F1[phase, modes], x)
        if self.F2 is not None:
            u2 = np.einsum("bij,bj->bi", self.F2[phase, modes], x)
        else:
            u2 = np.einsum("bij,bj->bi", self.K[phase, modes], x) + np.einsum("bij,bj->bi", self.W[phase, modes], u1)
        return u1, u2


@dataclass(frozen=True, eq=False)
class CostReport:
    value_per_mode: np.ndarray
    expected_value: float
    stable: bool
    rho: float
    Z: np.ndarray = field(repr=False)
    residual: float = 0.0

    def to_dict(self):
        return {
            "value_per_mode": self.value_per_mode,
            "expected_value": self.expected_value,
            "stable": self.stable,
            "rho": self.rho,
        }


def _pi_at(spec, t0, pi):
    return spec.markov.distribution(t0) if pi is None else np.asarray(pi, dtype=float)


def _quad(Z, x0):
    x0 = np.asarray(x0, dtype=float)
    return np.einsum("a,iab,b->i", x0, Z, x0)


def _closed_loop_value(spec, F, free, margin):
    op = lyapunov_operator(spec, F)
    rho = monodromy_spectral_radius(op)
    if not rho < 1.0 - margin:
        raise UnstablePair(rho)
    Z, res = periodic_backward_solve(op, free)
    return Z, rho, res


def stage_weight(spec, F):
    """[I; F]^T Q [I; F] per phase and mode."""
    n = spec.n
    p, N = spec.period, spec.N
    IF = np.concatenate([np.broadcast_to(np.eye(n), (p, N, n, n)), F], axis=-2)
    Q = np.stack([spec.Q(t) for t in range(p)])
    return _T(IF) @ Q @ IF


def exact_cost(spec: ProblemSpec, pair: StrategyPair, x0, t0=0, pi=None) -> CostReport:
    """Infinite-horizon expected cost of a linear strategy pair started at (t0, x0).

    ``pi`` is the mode distribution at t0; by default pi0 propagated through
    the chain. Raises UnstablePair when the closed loop is not exponentially
    stable.
    """
    F = pair.gain()
    Z, rho, res = _closed_loop_value(spec, F, stage_weight(spec, F), spec.tolerances.stability_margin)
    per_mode = _quad(Z[t0 % spec.period], x0)
    expected = float(_pi_at(spec, t0, pi) @ per_mode)
    return CostReport(per_mode, expected, True, rho, Z, res)


def truncated_cost(spec: ProblemSpec, pair: StrategyPair, x0, T, t0=0, pi=None) -> float:
    """Exact expected cost accumulated over steps t0 .. t0+T-1.

    Infinite-horizon value minus the tail E[x(t0+T)^T Z x(t0+T)], where the
    mode-split second moments of the state are propagated exactly by the
    forward Lyapunov operator.
    """
    report = exact_cost(spec, pair, x0, t0, pi)
    x0 = np.asarray(x0, dtype=float)
    S = _pi_at(spec, t0, pi)[:, None, None] * np.outer(x0, x0)
    op = lyapunov_operator(spec, pair.gain())
    for s in range(T):
        S = lyap_apply(op, S, t0 + s)
    tail = float(np.einsum("iab,iba->", report.Z[(t0 + T) % spec.period], S))
    return report.expected_value - tail


def game_value(sol: StabilizingSolution, x0, t0=0, pi=None) -> float:
    if pi is None:
        pi = sol.spec.markov.distribution(t0)
    return float(np.asarray(pi) @ _quad(sol.X_at(t0), x0))


def penalty_value(spec, F, weight, x0, t0=0, pi=None):
    """E sum_t x^T weight(t, theta_t) x along the loop closed by F."""
    Z, _, _ = _closed_loop_value(spec, F, weight, spec.tolerances.stability_margin)
    per_mode = _quad(Z[t0 % spec.period], x0)
    return float(_pi_at(spec, t0, pi) @ per_mode), per_mode


# --------------------------------------------------------------------------
# saddle point, state-feedback information


@dataclass(frozen=True)
class PerturbationResult:
    player: int
    index: int
    stable: bool
    rho: float
    value: float | None = None
    gap: float | None = None
    penalty: float | None = None
    decomposition_error: float | None = None
    ok: bool = True

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class SaddleReport:
    value: float
    mu1: float
    mu2: float
    results: tuple
    rtol: float

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    @property
    def skipped(self) -> int:
        return sum(not r.stable for r in self.results)

    def to_dict(self):
        return {
            "ok": self.ok,
            "value": self.value,
            "mu1": self.mu1,
            "mu2": self.mu2,
            "skipped_unstable": self.skipped,
            "perturbations": [r.to_dict() for r in self.results],
        }


def _rel_err(a, b, scale):
    return abs(a - b) / scale if scale > 0 else abs(a - b)


def random_perturbations(spec, sol, player, count, scale=0.5, seed=0, max_halvings=40):
    """Dense random gain perturbations for one player, shrunk until the loop stays stable."""
    rng = np.random.default_rng([int(seed), int(player)])
    m1 = spec.m1
    rows = m1 if player == 1 else spec.m2
    shape = (spec.period, spec.N, rows, spec.n)
    margin = spec.tolerances.stability_margin
    out = []
    for _ in range(count):
        delta = rng.standard_normal(shape) * scale
        for _ in range(max_halvings):
            F = np.array(sol.F)
            if player == 1:
                F[:, :, :m1] += delta
            else:
                F[:, :, m1:] += delta
            if monodromy_spectral_radius(lyapunov_operator(spec, F)) < 1.0 - margin:
                break
            delta = delta / 2
        out.append((player, delta))
    return out


def verify_saddle_point(spec: ProblemSpec, sol: StabilizingSolution, perturbations, x0, t0=0, pi=None,
                        rtol=1e-8, raise_on_violation=True) -> SaddleReport:
    """Check both one-sided deviations from the equilibrium gains.

    A deviation of player 1 (the maximiser) must not raise the cost and a
    deviation of player 2 must not lower it. The measured gap is also
    compared with the Rcal-weighted penalty of the gain change, evaluated
    by its own Lyapunov solve. Requires the Strong sign class.
    """
    if sol.sign is None or not sol.sign.strong:
        cls = None if sol.sign is None else sol.sign.sign_class.value
        raise PreconditionFailed([f"Strong sign condition does not hold (class {cls})"])
    m1 = spec.m1
    margin = spec.tolerances.stability_margin
    eq = exact_cost(spec, StrategyPair.equilibrium(sol), x0, t0, pi)
    J0 = eq.expected_value
    results = []
    for idx, (player, delta) in enumerate(perturbations):
        F = np.array(sol.F)
        if player == 1:
            F[:, :, :m1] += delta
        elif player == 2:
            F[:, :, m1:] += delta
        else:
            raise ValueError(f"player must be 1 or 2, got {player}")
        rho = monodromy_spectral_radius(lyapunov_operator(spec, F))
        if not rho < 1.0 - margin:
            results.append(PerturbationResult(player, idx, False, rho))
            continue
        J = exact_cost(spec, StrategyPair.state_feedback(F[:, :, :m1], F[:, :, m1:]), x0, t0, pi).expected_value
        D = F - sol.F
        pen, _ = penalty_value(spec, F, _T(D) @ sol.Rcal @ D, x0, t0, pi)
        gap = J - J0
        scale = max(abs(J0), abs(J))
        err = _rel_err(gap, pen, scale)
        slack = -gap if player == 1 else gap
        ok = slack >= -rtol * abs(J0) and err <= rtol
        results.append(PerturbationResult(player, idx, True, rho, J, gap, pen, err, ok))
        if not ok and raise_on_violation:
            raise SaddleViolation("player-%d" % player, delta, gap)
    return SaddleReport(J0, sol.sign.delta3, sol.sign.delta2, tuple(results), rtol)


def cost_decomposition(spec, sol, pair: StrategyPair, x0, t0=0, pi=None, fi: FullInformationGains | None = None):
    """Split the cost of a linear pair into equilibrium value + positive term - negative term.

    With D = F - F_eq, the positive term weights V21 D1 + V22 D2 and the
    negative term weights V11 D1, both along the loop closed by the pair.
    """
    fi = fi or full_information_gains(sol)
    m1 = spec.m1
    F = pair.gain()
    D = F - sol.F
    D1, D2 = D[:, :, :m1], D[:, :, m1:]
    pos = fi.V21 @ D1 + fi.V22 @ D2
    neg = fi.V11 @ D1
    plus, _ = penalty_value(spec, F, _T(pos) @ pos, x0, t0, pi)
    minus, _ = penalty_value(spec, F, _T(neg) @ neg, x0, t0, pi)
    return game_value(sol, x0, t0, pi), plus, minus


# --------------------------------------------------------------------------
# full-information responder


@dataclass(frozen=True)
class FullInformationReport:
    left: float  # exact cost of the perturbed full-information pair
    right: float  # equilibrium value - penalty
    equilibrium: float
    penalty: float
    agreement: float  # relative difference of the two sides
    gain_identity_error: float  # max |K + W F1 - F2|
    rtol: float

    @property
    def agree(self) -> bool:
        return self.agreement <= self.rtol

    @property
    def below_equilibrium(self) -> bool:
        return self.left <= self.equilibrium + self.rtol * abs(self.equilibrium)

    @property
    def ok(self) -> bool:
        return self.agree and self.below_equilibrium

    def to_dict(self):
        d = dict(self.__dict__)
        d.update(agree=self.agree, below_equilibrium=self.below_equilibrium)
        return d


def full_information_value_identity(spec, sol, delta, x0, t0=0, pi=None, fi=None, rtol=1e-8):
    """Compare two evaluations of the cost when player 1 deviates by ``delta``
    and player 2 answers with the full-information gains.

    Left: exact cost of the induced state feedback. Right: equilibrium
    value minus the V11-weighted penalty of the deviation.
    """
    fi = fi or full_information_gains(sol)
    delta = np.asarray(delta, dtype=float)
    F1 = sol.F1 + delta
    pair = StrategyPair.full_information(F1, fi.K, fi.W)
    left = exact_cost(spec, pair, x0, t0, pi).expected_value
    J0 = game_value(sol, x0, t0, pi)
    V = fi.V11 @ delta
    pen, _ = penalty_value(spec, pair.gain(), _T(V) @ V, x0, t0, pi)
    right = J0 - pen
    scale = max(abs(left), abs(J0))
    ident = float(np.abs(fi.K + fi.W @ sol.F1 - sol.F2).max())
    return FullInformationReport(left, right, J0, pen, _rel_err(left, right, scale), ident, rtol)
