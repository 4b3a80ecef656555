"""Small reference problems used by the tests, the CLI examples and the README."""

import numpy as np

from .model import ProblemSpec


def _tile(a, period, N):
    a = np.asarray(a, dtype=float)
    return np.broadcast_to(a, (period, N) + a.shape).copy()


def lqr_limb():
    """Scalar problem where player 1 has no influence: A=1, B=[0, 1], M=1, R=diag(-1, 1).

    The stabilizing solution is the golden ratio.
    """
    return ProblemSpec.build(
        A=_tile([[[1.0]]], 1, 1),
        B=_tile([[[0.0, 1.0]]], 1, 1),
        P=[[[1.0]]],
        M=_tile([[1.0]], 1, 1),
        L=_tile([[0.0, 0.0]], 1, 1),
        R=_tile([[-1.0, 0.0], [0.0, 1.0]], 1, 1),
        m1=1,
    )


def scalar_game():
    """Scalar zero-sum game: A=1, B1=B2=1, M=1, L=0, R=diag(-5, 1)."""
    return ProblemSpec.build(
        A=_tile([[[1.0]]], 1, 1),
        B=_tile([[[1.0, 1.0]]], 1, 1),
        P=[[[1.0]]],
        M=_tile([[1.0]], 1, 1),
        L=_tile([[0.0, 0.0]], 1, 1),
        R=_tile([[-5.0, 0.0], [0.0, 1.0]], 1, 1),
        m1=1,
    )


def noisy_scalar_game():
    """The scalar game with one multiplicative noise channel (a1=0.3, b1=(0.1, 0.2))."""
    return ProblemSpec.build(
        A=_tile([[[1.0]], [[0.3]]], 1, 1),
        B=_tile([[[1.0, 1.0]], [[0.1, 0.2]]], 1, 1),
        P=[[[1.0]]],
        M=_tile([[1.0]], 1, 1),
        L=_tile([[0.0, 0.0]], 1, 1),
        R=_tile([[-5.0, 0.0], [0.0, 1.0]], 1, 1),
        m1=1,
    )


def period2_limb():
    """Two alternating scalar limbs, A(0)=1, A(1)=0.5, M(0)=1, M(1)=2."""
    A = np.array([[[[[1.0]]]], [[[[0.5]]]]])
    B = _tile([[[0.0, 1.0]]], 2, 1)
    M = np.array([[[[1.0]]], [[[2.0]]]])
    return ProblemSpec.build(
        A=A,
        B=B,
        P=[[[1.0]], [[1.0]]],
        M=M,
        L=_tile([[0.0, 0.0]], 2, 1),
        R=_tile([[-1.0, 0.0], [0.0, 1.0]], 2, 1),
        m1=1,
    )


def jump_game():
    """Two modes, two states, one noise channel, time-invariant."""
    A0 = np.array([
        [[1.1, 0.3], [0.0, 0.8]],
        [[0.6, -0.2], [0.4, 1.2]],
    ])
    A1 = np.array([
        [[0.2, 0.0], [0.1, 0.1]],
        [[0.1, 0.1], [0.0, 0.2]],
    ])
    B0 = np.array([
        [[0.3, 1.0], [0.1, 0.5]],
        [[0.2, 0.0], [0.3, 1.0]],
    ])
    B1 = np.array([
        [[0.05, 0.1], [0.0, 0.0]],
        [[0.0, 0.0], [0.05, 0.1]],
    ])
    A = np.stack([A0, A1], axis=1)[None]
    B = np.stack([B0, B1], axis=1)[None]
    M = np.array([np.eye(2), np.diag([2.0, 0.5])])[None]
    L = np.array([
        [[0.0, 0.1], [0.0, 0.0]],
        [[0.0, 0.0], [0.0, 0.2]],
    ])[None]
    R = np.array([
        [[-4.0, 0.5], [0.5, 1.0]],
        [[-3.0, 0.0], [0.0, 2.0]],
    ])[None]
    P = np.array([[[0.9, 0.1], [0.3, 0.7]]])
    return ProblemSpec.build(A=A, B=B, P=P, M=M, L=L, R=R, m1=1, pi0=[0.6, 0.4])


def periodic_jump_game():
    """Two modes, two states, one noise channel, period 3 with a switching chain."""
    base = jump_game()
    scales = [1.0, 0.7, 1.2]
    A = np.stack([base.A[0] * s for s in scales])
    B = np.stack([base.B[0] for _ in scales])
    M = np.stack([base.M[0] * (1.0 + 0.5 * k) for k in range(3)])
    L = np.stack([base.L[0] for _ in scales])
    R = np.stack([base.R[0] for _ in scales])
    P = np.array([
        [[0.9, 0.1], [0.3, 0.7]],
        [[0.5, 0.5], [0.5, 0.5]],
        [[0.0, 1.0], [1.0, 0.0]],
    ])
    return ProblemSpec.build(A=A, B=B, P=P, M=M, L=L, R=R, m1=1, pi0=[0.5, 0.5])


def coupled_weight_game():
    """Scalar game whose input weight has a positive R11 block: Admissible but not Strong."""
    return ProblemSpec.build(
        A=_tile([[[0.9]]], 1, 1),
        B=_tile([[[1.0, 1.0]]], 1, 1),
        P=[[[1.0]]],
        M=_tile([[1.0]], 1, 1),
        L=_tile([[0.0, 0.0]], 1, 1),
        R=_tile([[1.0, 2.0], [2.0, 1.0]], 1, 1),
        m1=1,
    )


FIXTURES = {
    "lqr_limb": lqr_limb,
    "scalar_game": scalar_game,
    "noisy_scalar_game": noisy_scalar_game,
    "period2_limb": period2_limb,
    "jump_game": jump_game,
    "periodic_jump_game": periodic_jump_game,
    "coupled_weight_game": coupled_weight_game,
}
