"""Closed-form step-size and momentum parameters from the consensus spectrum."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import InvalidSpectrumError


@dataclass(frozen=True)
class TuningParams:
    """Optimal relaxation ``gamma``, momentum ``eta``, and contraction factor.

    ``alpha`` is the per-round contraction factor of the consensus error and
    satisfies ``alpha**2 == (gamma - 1) * (eta - 1)``; ``kappa`` is the
    condition number ``theta_max / theta_min`` of the consensus matrix.
    """

    gamma: float
    eta: float
    alpha: float
    kappa: float
    theta_min: float
    theta_max: float

    def consistency_residuals(self) -> tuple[float, float]:
        """Residuals of the two defining identities of the optimal pair.

        Both are zero (to round-off) exactly when gamma takes the smaller
        closed-form root and eta the larger one. ``alpha`` stands in for the
        square root of ``(gamma - 1)(eta - 1)``: the two agree analytically,
        and evaluating the radical directly would cancel catastrophically
        whenever both factors vanish.
        """
        res_max = abs(self.theta_max * self.eta * self.gamma - (1.0 + self.alpha) ** 2)
        res_min = abs(self.theta_min * self.eta * self.gamma - (1.0 - self.alpha) ** 2)
        return res_max, res_min


def optimal_params(theta_min: float, theta_max: float) -> TuningParams:
    """Optimal (gamma, eta) and the contraction factor for a given spectrum.

    Parameters
    ----------
    theta_min, theta_max : float
        Extreme eigenvalues of the consensus matrix, ``0 < theta_min <=
        theta_max <= 1``.

    Raises
    ------
    InvalidSpectrumError
        If the eigenvalue bounds are outside the admissible range.
    """
    if not theta_min > 0.0:
        raise InvalidSpectrumError(f"theta_min must be positive, got {theta_min:g}")
    if theta_max > 1.0 + 1e-10:
        raise InvalidSpectrumError(f"theta_max must not exceed 1, got {theta_max:g}")
    if theta_min > theta_max:
        raise InvalidSpectrumError(
            f"theta_min {theta_min:g} exceeds theta_max {theta_max:g}"
        )
    kappa = theta_max / theta_min
    sqrt_kappa = math.sqrt(kappa)
    alpha = (sqrt_kappa - 1.0) / (sqrt_kappa + 1.0)
    a = math.sqrt(theta_max)
    b = math.sqrt(theta_min)
    # (1 - theta_max)*(1 - theta_min) is nonnegative analytically but can
    # round to a tiny negative when theta_max is at the upper boundary.
    cross = math.sqrt(max((1.0 - theta_max) * (1.0 - theta_min), 0.0))
    denom = (a + b) ** 2
    # gamma takes the minus sign and eta the plus sign. The consistency
    # identities are symmetric in the pair, so they pin {gamma, eta} as a
    # set; the ordering gamma <= eta picks the assignment. Swapping the two
    # inflates the repeated eigenvalue of the iteration beyond alpha and
    # destroys the contraction rate (exercised in the tests).
    gamma = (2.0 * (a * b + 1.0) - 2.0 * cross) / denom
    eta = (2.0 * (a * b + 1.0) + 2.0 * cross) / denom
    return TuningParams(
        gamma=gamma,
        eta=eta,
        alpha=alpha,
        kappa=kappa,
        theta_min=theta_min,
        theta_max=theta_max,
    )
