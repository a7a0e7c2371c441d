"""
Exception taxonomy for gelsim.

Every failure raised by the library derives from GelSimError so the CLI can map
it onto a stable exit code.
"""

from typing import Optional


class GelSimError(Exception):
    """Base class for all gelsim failures"""

    exit_code = 1


class DomainError(GelSimError, ValueError):
    """Argument outside the domain of a constitutive function"""


class InvalidParameter(GelSimError, ValueError):
    """MaterialParams invariant violated"""

    exit_code = 2


class ConfigError(GelSimError, ValueError):
    """Scenario configuration could not be parsed or validated"""

    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        context = []
        if key is not None:
            context.append(f"key '{key}'")
        if line is not None:
            context.append(f"line {line}")
        suffix = f" ({', '.join(context)})" if context else ""
        super().__init__(f"{message}{suffix}")


class StabilityGateError(GelSimError):
    """Effective moduli fail the coercivity hypotheses; the time loop is refused"""

    exit_code = 3

    def __init__(self, mu_t_margin: float, bulk_margin: float):
        self.mu_t_margin = mu_t_margin
        self.bulk_margin = bulk_margin
        super().__init__(
            f"spherical stability gate failed: mu_t={mu_t_margin:.6g}, "
            f"3*lambda_t+2*mu_t={bulk_margin:.6g}"
        )


class SingularMatrix(GelSimError):
    """Factorization hit a zero pivot"""

    exit_code = 4

    def __init__(self, message: str, pivot: Optional[int] = None, step: Optional[int] = None):
        self.pivot = pivot
        self.step = step
        details = []
        if pivot is not None:
            details.append(f"pivot {pivot}")
        if step is not None:
            details.append(f"step {step}")
        suffix = f" [{', '.join(details)}]" if details else ""
        super().__init__(f"{message}{suffix}")


class IterationLimit(GelSimError):
    """Iterative solver stalled before reaching its tolerance"""

    exit_code = 4

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"Krylov solver stalled after {iterations} iterations (residual {residual:.3e})")


class DimensionMismatch(GelSimError, ValueError):
    """Operator, space or vector sizes disagree"""

    exit_code = 4


class DirichletConflict(GelSimError, ValueError):
    """The same dof was constrained to two different values"""

    exit_code = 4


class NonSPD(GelSimError, ValueError):
    """Right Cauchy-Green tensor is not symmetric positive definite"""


class NoBracket(GelSimError):
    """Equilibrium residual has no sign change on the search grid"""

    exit_code = 5


class EquilibriumError(GelSimError):
    """A bracketed root does not satisfy the equilibrium requirements"""

    exit_code = 5


class MultipleRoots(UserWarning):
    """More than one spherical equilibrium exists (phase-separation regime)"""


class MeshError(GelSimError, ValueError):
    """Invalid mesh request or inconsistent boundary tagging"""
