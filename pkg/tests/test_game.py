import math
from dataclasses import replace

import numpy as np
import pytest

from gdtre import fixtures, game, synthesis
from gdtre.errors import PreconditionFailed, SaddleViolation, UnstablePair
from gdtre.game import StrategyPair

import oracles
from conftest import ALL, solution_of, spec_of

STRONG = [name for name in ALL if name != "coupled_weight_game"]


def brute_force_cost(spec, F, x0, pi, steps=3000):
    """Sum of expected stage costs with second moments propagated by loops."""
    p, N, n = spec.period, spec.N, spec.n
    S = [pi[i] * np.outer(x0, x0) for i in range(N)]
    total = 0.0
    for t in range(steps):
        k = t % p
        Acl = [[spec.A[k, i, c] + spec.B[k, i, c] @ F[k, i] for c in range(spec.r + 1)] for i in range(N)]
        for i in range(N):
            IF = np.vstack([np.eye(n), F[k, i]])
            total += np.trace(IF.T @ spec.Q(k)[i] @ IF @ S[i])
        S = oracles.lyap_forward_loop(Acl, spec.P[k], S)
    return total


def _x0(spec):
    return np.linspace(1.0, -0.5, spec.n)


@pytest.mark.parametrize("name", ALL)
def test_equilibrium_cost_is_game_value(name):
    spec, sol = spec_of(name), solution_of(name)
    x0 = _x0(spec)
    rep = game.exact_cost(spec, StrategyPair.equilibrium(sol), x0)
    assert rep.expected_value == pytest.approx(game.game_value(sol, x0), rel=1e-10)
    assert rep.stable and rep.rho == pytest.approx(sol.rho_closed, rel=1e-12)


@pytest.mark.parametrize("name", ["jump_game", "periodic_jump_game", "noisy_scalar_game"])
def test_exact_cost_matches_brute_force_sum(name):
    spec, sol = spec_of(name), solution_of(name)
    x0 = _x0(spec)
    rng = np.random.default_rng(0)
    F = sol.F + 0.05 * rng.standard_normal(sol.F.shape)
    pair = StrategyPair.state_feedback(F[:, :, :spec.m1], F[:, :, spec.m1:])
    got = game.exact_cost(spec, pair, x0).expected_value
    want = brute_force_cost(spec, F, x0, spec.markov.initial_distribution)
    assert got == pytest.approx(want, rel=1e-10)


def test_scalar_closed_form_cost():
    spec = fixtures.scalar_game()
    f1, f2 = 0.1, -0.6
    pair = StrategyPair.state_feedback(np.full((1, 1, 1, 1), f1), np.full((1, 1, 1, 1), f2))
    w = 1 - 5 * f1 * f1 + f2 * f2
    a = 1 + f1 + f2
    assert game.exact_cost(spec, pair, [2.0]).expected_value == pytest.approx(4 * w / (1 - a * a), rel=1e-13)


def test_game_value_examples():
    sol = solution_of("lqr_limb")
    assert game.game_value(sol, [0.0]) == 0.0
    assert game.game_value(sol, [1.0]) == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-9)
    sol = solution_of("scalar_game")
    x = sol.X[0, 0, 0, 0]
    assert game.game_value(sol, [3.0]) == pytest.approx(9 * x, rel=1e-15)
    assert game.game_value(sol, [3.0], t0=7, pi=[1.0]) == pytest.approx(9 * x, rel=1e-15)


def test_value_scales_quadratically():
    spec, sol = spec_of("periodic_jump_game"), solution_of("periodic_jump_game")
    x0 = _x0(spec)
    pair = StrategyPair.equilibrium(sol)
    for t0 in range(3):
        v1 = game.exact_cost(spec, pair, x0, t0).expected_value
        v2 = game.exact_cost(spec, pair, 2 * x0, t0).expected_value
        assert v2 == pytest.approx(4 * v1, rel=1e-12)
        assert game.exact_cost(spec, pair, 0 * x0, t0).expected_value == 0.0


def test_zero_dynamics_cost_is_stage_cost():
    s = fixtures.scalar_game()
    spec = s.replace(A=np.zeros_like(s.A), B=np.zeros_like(s.B))
    pair = StrategyPair.state_feedback(np.full((1, 1, 1, 1), 0.2), np.full((1, 1, 1, 1), 0.3))
    w = 1 - 5 * 0.04 + 0.09
    assert game.exact_cost(spec, pair, [1.5]).expected_value == pytest.approx(2.25 * w, rel=1e-14)


def test_one_sided_deviations_on_scalar_game():
    spec, sol = spec_of("scalar_game"), solution_of("scalar_game")
    v = game.game_value(sol, [1.0])
    F1, F2 = sol.F1, sol.F2
    dev1 = StrategyPair.state_feedback(F1 + 0.1, F2)
    dev2 = StrategyPair.state_feedback(F1, F2 + 0.1)
    assert game.exact_cost(spec, dev1, [1.0]).expected_value < v
    assert game.exact_cost(spec, dev2, [1.0]).expected_value > v


def test_unstable_pair():
    spec = fixtures.scalar_game()
    pair = StrategyPair.state_feedback(np.full((1, 1, 1, 1), 0.5), np.zeros((1, 1, 1, 1)))
    with pytest.raises(UnstablePair) as exc:
        game.exact_cost(spec, pair, [1.0])
    assert exc.value.rho == pytest.approx(2.25)


def test_strategy_pair_needs_one_form():
    with pytest.raises(ValueError):
        StrategyPair(np.zeros((1, 1, 1, 1)))


@pytest.mark.parametrize("name", ALL)
def test_truncated_cost_limits(name):
    spec, sol = spec_of(name), solution_of(name)
    pair = StrategyPair.equilibrium(sol)
    x0 = _x0(spec)
    assert game.truncated_cost(spec, pair, x0, 0) == pytest.approx(0.0, abs=1e-12)
    assert game.truncated_cost(spec, pair, x0, 400) == pytest.approx(game.game_value(sol, x0), rel=1e-10)


def test_truncated_cost_matches_brute_force():
    spec, sol = spec_of("periodic_jump_game"), solution_of("periodic_jump_game")
    x0 = _x0(spec)
    got = game.truncated_cost(spec, StrategyPair.equilibrium(sol), x0, 4, t0=0)
    assert got == pytest.approx(brute_force_cost(spec, sol.F, x0, spec.markov.initial_distribution, 4), rel=1e-12)


# --------------------------------------------------------------------------
# saddle point


@pytest.mark.parametrize("name", STRONG)
def test_saddle_point(name):
    spec, sol = spec_of(name), solution_of(name)
    perts = game.random_perturbations(spec, sol, 1, 20, seed=1) + game.random_perturbations(spec, sol, 2, 20, seed=1)
    rep = game.verify_saddle_point(spec, sol, perts, _x0(spec))
    assert rep.ok
    assert all(r.stable for r in rep.results)
    for r in rep.results:
        assert r.decomposition_error <= 1e-8


def test_zero_perturbation_has_zero_gap():
    spec, sol = spec_of("jump_game"), solution_of("jump_game")
    zero = np.zeros_like(sol.F1)
    rep = game.verify_saddle_point(spec, sol, [(1, zero), (2, np.zeros_like(sol.F2))], _x0(spec))
    for r in rep.results:
        assert r.gap == pytest.approx(0.0, abs=1e-12 * abs(rep.value))
        assert r.penalty == 0.0


def test_saddle_needs_strong_class():
    spec, sol = spec_of("coupled_weight_game"), solution_of("coupled_weight_game")
    with pytest.raises(PreconditionFailed):
        game.verify_saddle_point(spec, sol, [], [1.0])


def test_saddle_violation_is_raised_for_wrong_solution():
    # drop player 1's gain from the solution: player 1 then gains by deviating
    spec = spec_of("scalar_game")
    sol = solution_of("scalar_game")
    F = np.array(sol.F)
    F[..., 0, :] = 0.0
    fake = replace(sol, F=F)
    with pytest.raises(SaddleViolation) as exc:
        game.verify_saddle_point(spec, fake, [(1, np.full_like(sol.F1, 0.1))], [1.0])
    assert exc.value.direction == "player-1"


@pytest.mark.parametrize("name", ALL)
def test_cost_decomposition(name):
    spec, sol = spec_of(name), solution_of(name)
    rng = np.random.default_rng(3)
    x0 = _x0(spec)
    for _ in range(5):
        F = sol.F + 0.05 * rng.standard_normal(sol.F.shape)
        pair = StrategyPair.state_feedback(F[:, :, :spec.m1], F[:, :, spec.m1:])
        value, plus, minus = game.cost_decomposition(spec, sol, pair, x0)
        cost = game.exact_cost(spec, pair, x0).expected_value
        assert value + plus - minus == pytest.approx(cost, rel=1e-8)
        assert plus >= 0 and minus >= 0


# --------------------------------------------------------------------------
# full-information identity


def test_full_information_identity_scalar():
    spec, sol = spec_of("scalar_game"), solution_of("scalar_game")
    rep = game.full_information_value_identity(spec, sol, np.full_like(sol.F1, 0.05), [1.0])
    assert rep.agree and rep.below_equilibrium
    assert rep.left < rep.equilibrium
    assert rep.gain_identity_error <= 1e-12


def test_full_information_zero_deviation_is_equilibrium():
    spec, sol = spec_of("jump_game"), solution_of("jump_game")
    rep = game.full_information_value_identity(spec, sol, np.zeros_like(sol.F1), _x0(spec))
    assert rep.penalty == 0.0
    assert rep.left == pytest.approx(rep.equilibrium, rel=1e-12)


@pytest.mark.parametrize("name", ALL)
def test_full_information_identity_random(name):
    spec, sol = spec_of(name), solution_of(name)
    fi = synthesis.full_information_gains(sol)
    rng = np.random.default_rng(5)
    for _ in range(10):
        delta = 0.05 * rng.standard_normal(sol.F1.shape)
        rep = game.full_information_value_identity(spec, sol, delta, _x0(spec), fi=fi)
        assert rep.ok


def test_full_information_controls_match_feedback():
    sol = solution_of("jump_game")
    fi = synthesis.full_information_gains(sol)
    pair = StrategyPair.full_information(sol.F1, fi.K, fi.W)
    x = np.array([[1.0, 2.0], [-0.5, 0.3]])
    u1, u2 = pair.controls(0, np.array([0, 1]), x)
    e1, e2 = StrategyPair.equilibrium(sol).controls(0, np.array([0, 1]), x)
    np.testing.assert_allclose(u1, e1)
    np.testing.assert_allclose(u2, e2, atol=1e-12)


def test_mode_permutation_equivariance():
    spec, sol = spec_of("jump_game"), solution_of("jump_game")
    perm = [1, 0]
    swapped = spec.replace(A=spec.A[:, perm], B=spec.B[:, perm], P=spec.P[:, perm][:, :, perm],
                           M=spec.M[:, perm], L=spec.L[:, perm], R=spec.R[:, perm],
                           pi0=spec.markov.initial_distribution[perm])
    x0 = _x0(spec)
    other = game.exact_cost(swapped, StrategyPair.state_feedback(sol.F1[:, perm], sol.F2[:, perm]), x0)
    base = game.exact_cost(spec, StrategyPair.equilibrium(sol), x0)
    np.testing.assert_allclose(other.value_per_mode, base.value_per_mode[perm], rtol=1e-12)
    assert other.expected_value == pytest.approx(base.expected_value, rel=1e-12)
