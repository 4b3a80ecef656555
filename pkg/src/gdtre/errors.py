"""Exception hierarchy shared by the solver modules."""


class GDTREError(Exception):
    """Base class for every error raised by the package."""


class StructuralError(GDTREError, ValueError):
    """Problem data has the wrong shape, non-finite entries or unknown keys."""


class SingularRcal(GDTREError):
    def __init__(self, t, mode, min_abs_eig, horizon=None):
        self.t = t
        self.mode = mode
        self.min_abs_eig = min_abs_eig
        self.horizon = horizon
        where = f"t={t}, mode={mode}"
        if horizon is not None:
            where += f", horizon={horizon}"
        super().__init__(f"numerically singular Rcal at {where} (min |eig| = {min_abs_eig:.3e})")


class NoConvergence(GDTREError):
    def __init__(self, max_sweeps, last_delta, reason="sweep limit reached"):
        self.max_sweeps = max_sweeps
        self.last_delta = last_delta
        super().__init__(f"no convergence after {max_sweeps} sweeps ({reason}); last delta {last_delta:.3e}")


class NotStabilizing(GDTREError):
    """The iteration converged but the limit does not stabilize the closed loop."""

    def __init__(self, rho, solution=None):
        self.rho = rho
        self.solution = solution
        super().__init__(f"limit is not stabilizing: closed-loop spectral radius {rho:.6g}")


class NotAdmissible(GDTREError):
    def __init__(self, message, solution=None):
        self.solution = solution
        super().__init__(message)


class NonConvergence(GDTREError):
    """Power iteration and the dense eigensolver fallback both failed."""

    def __init__(self, power_residual, eig_residual):
        self.power_residual = power_residual
        self.eig_residual = eig_residual
        super().__init__(
            f"spectral radius not resolved: power residual {power_residual:.3e}, "
            f"eigensolver residual {eig_residual:.3e}"
        )


class NotStable(GDTREError):
    def __init__(self, rho):
        self.rho = rho
        super().__init__(f"operator is not exponentially stable (spectral radius {rho:.6g})")


class PreconditionFailed(GDTREError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NotStabilizingGain(GDTREError):
    def __init__(self, rho):
        self.rho = rho
        super().__init__(f"gain pair does not stabilize the closed loop (spectral radius {rho:.6g})")


class NoStabilizingClosedLoopSolution(GDTREError):
    def __init__(self, reason):
        self.reason = reason
        super().__init__(f"closed-loop Riccati equation has no admissible stabilizing solution: {reason}")


class SynthesisFailed(GDTREError):
    def __init__(self, reason):
        self.reason = reason
        super().__init__(f"injection synthesis failed, system not certified: {reason}")


class UnstablePair(GDTREError):
    def __init__(self, rho):
        self.rho = rho
        super().__init__(f"strategy pair is not exponentially stable (spectral radius {rho:.6g})")


class SaddleViolation(GDTREError):
    def __init__(self, direction, perturbation, gap):
        self.direction = direction
        self.perturbation = perturbation
        self.gap = gap
        super().__init__(f"saddle inequality violated by a {direction} perturbation (gap {gap:.6g})")


class InsufficientDecay(GDTREError):
    pass
