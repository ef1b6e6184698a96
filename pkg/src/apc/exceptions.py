"""Exception hierarchy shared across the package.

Two branches matter for the command line tool: :class:`InputError` maps to
exit code 1 (bad data or configuration) and :class:`NumericalError` maps to
exit code 2 (a computation failed or diverged).
"""

from __future__ import annotations


class ApcError(Exception):
    """Base class for all package errors."""


class InputError(ApcError):
    """Invalid input data or configuration."""


class NumericalError(ApcError):
    """A numerical procedure failed, diverged, or lost too much precision."""


class ZeroRowError(InputError):
    """A row of the coefficient matrix is identically zero."""

    def __init__(self, index: int):
        super().__init__(f"row {index} of the coefficient matrix is zero")
        self.index = index


class DimensionMismatchError(InputError):
    """Shapes, lengths, or finiteness constraints are violated."""


class RankDeficientError(InputError):
    """The coefficient matrix does not have full numerical column rank."""


class MissingGroundTruthError(InputError):
    """An analysis-mode operation needs the ground-truth solution."""


class InvalidSpectrumError(InputError):
    """Eigenvalue bounds outside the admissible range (0, 1]."""


class KappaUnreachableError(InputError):
    """The requested condition number cannot be realized by the generator."""

    def __init__(self, target: float, achieved_lo: float, achieved_hi: float):
        super().__init__(
            f"condition-number target {target:g} not reachable; "
            f"achieved range [{achieved_lo:g}, {achieved_hi:g}]"
        )
        self.target = target
        self.achieved_range = (achieved_lo, achieved_hi)


class MissingAgentError(NumericalError):
    """The round barrier was violated: an agent update never arrived."""

    def __init__(self, index: int):
        super().__init__(f"agent {index} did not deliver an update this round")
        self.index = index


class NonFiniteError(NumericalError):
    """An iterate contains NaN or infinity, signalling divergence."""

    def __init__(self, round_index: int):
        super().__init__(f"non-finite iterate at round {round_index}")
        self.round_index = round_index


class SingularIterationError(NumericalError):
    """The fixed-point system is singular; the iteration does not contract."""


class EigensolveFailedError(NumericalError):
    """The dense eigensolver did not converge."""
