"""Closed-form error trajectory, fixed point, and asymptotic noise error.

The stacked error state evolves as ``d(t+1) = G d(t) + w_d`` with the gain
matrix ``G`` from :mod:`apc.spectral` and a constant drive ``w_d`` built from
the observation noise. This module evaluates the trajectory in closed form,
solves for its fixed point, and predicts the asymptotic consensus error
directly from the problem data. The closed-form routes never touch the
round-based engine, so the two sides cross-validate each other in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    MissingGroundTruthError,
    NumericalError,
    RankDeficientError,
    SingularIterationError,
)
from .model import LinearSystem, Projection, RowBlock, row_pseudoinverse
from .spectral import GainMatrix
from .tuning import TuningParams

#: Contraction level below which the transient is flushed to the fixed point
#: instead of being propagated through matrix powers.
_SHORT_CIRCUIT = 1e-250


@dataclass(frozen=True)
class StateVector:
    """Stacked error state: the per-agent blocks followed by the consensus
    block. The consensus block equals the mean of the agent blocks at
    initialization (and again in the limit), but not along the way."""

    d: np.ndarray
    m: int
    s: int

    def agent_block(self, ell: int) -> np.ndarray:
        """Error block of agent ``ell`` (1-based)."""
        if not 1 <= ell <= self.m:
            raise DimensionMismatchError(f"agent index {ell} outside 1..{self.m}")
        return self.d[(ell - 1) * self.s : ell * self.s]

    def consensus_block(self) -> np.ndarray:
        return self.d[self.m * self.s :]


@dataclass(frozen=True)
class NoiseDrive:
    """Constant forcing term of the error recursion.

    Agent block ``ell`` is ``gamma`` times that agent's minimum-norm noise
    injection. The consensus block is ``eta`` times the mean of the agent
    blocks: the server aggregates the freshly corrected agent solutions, so
    the injected noise reaches the consensus iterate within the same round.
    """

    w_d: np.ndarray
    m: int
    s: int

    def agent_block(self, ell: int) -> np.ndarray:
        if not 1 <= ell <= self.m:
            raise DimensionMismatchError(f"agent index {ell} outside 1..{self.m}")
        return self.w_d[(ell - 1) * self.s : ell * self.s]

    def consensus_block(self) -> np.ndarray:
        return self.w_d[self.m * self.s :]


@dataclass(frozen=True)
class ErrorPrediction:
    """Asymptotic consensus error and the transient contraction rate.

    ``xi_diag`` holds the reciprocal squared row norms that weight each
    observation's noise entry.
    """

    asymptotic: np.ndarray
    xi_diag: np.ndarray
    transient_rate: float

    def to_json_dict(self) -> dict:
        return {
            "asymptotic": [[z.real, z.imag] for z in self.asymptotic],
            "asymptotic_sq_norm": float(np.linalg.norm(self.asymptotic) ** 2),
            "alpha": self.transient_rate,
            "xi_diag": [float(v) for v in self.xi_diag],
        }


@dataclass
class DecayFit:
    """Least-squares fit of the transient's log-norm decay."""

    slope: float
    intercept: float
    rounds: np.ndarray
    log_norms: np.ndarray
    stopped_early: bool


def initial_state(
    system: LinearSystem, blocks: list[RowBlock], projections: list[Projection]
) -> StateVector:
    """Error state right after initialization.

    Each agent block is the projected ground truth plus the agent's noise
    injection; the consensus block is their mean. Matches the engine's
    initialization to round-off.
    """
    if system.x_star is None:
        raise MissingGroundTruthError("initial error state needs x_star")
    x_star = system.x_star
    noise = system.noise()
    m, s = system.m, system.s
    blocks_out = []
    for block, proj in zip(blocks, projections):
        q = row_pseudoinverse(block)
        blocks_out.append(-(proj.p @ x_star) + q * noise[block.index - 1])
    mean = sum(blocks_out) / m
    d = np.concatenate(blocks_out + [mean])
    return StateVector(d=d, m=m, s=s)


def noise_drive(
    system: LinearSystem, blocks: list[RowBlock], params: TuningParams
) -> NoiseDrive:
    """Constant forcing term of the error recursion for this instance."""
    noise = system.noise()
    m, s = system.m, system.s
    agent_blocks = []
    for block in blocks:
        q = row_pseudoinverse(block)
        agent_blocks.append(params.gamma * q * noise[block.index - 1])
    consensus = params.eta * (sum(agent_blocks) / m)
    w_d = np.concatenate(agent_blocks + [consensus])
    return NoiseDrive(w_d=w_d, m=m, s=s)


def _solve_fixed_point(gain: GainMatrix, w_d: np.ndarray) -> np.ndarray:
    if gain.alpha >= 1.0:
        raise SingularIterationError(
            f"contraction factor {gain.alpha:g} >= 1; the iteration has no fixed point"
        )
    eye = np.eye(gain.dim)
    try:
        solution = np.linalg.solve(eye - gain.g, w_d)
    except np.linalg.LinAlgError as exc:
        raise SingularIterationError(str(exc)) from exc
    residual = np.linalg.norm((eye - gain.g) @ solution - w_d)
    if residual > 1e-10 * max(np.linalg.norm(w_d), 1e-300):
        raise SingularIterationError(
            f"fixed-point solve residual {residual:.3e} too large"
        )
    return solution


def closed_form_state(
    gain: GainMatrix, d0: StateVector, w_d: NoiseDrive, t: int
) -> StateVector:
    """Error state after ``t`` rounds, evaluated in closed form.

    The matrix-power form ``G^t d0 + (I - G^t)(I - G)^{-1} w_d`` is the
    primary route; the drive's partial geometric sum is also accumulated
    term by term and both evaluations must agree to 1e-9, otherwise
    :class:`NumericalError` is raised. For ``t`` deep enough that the
    transient underflows, the fixed point is returned directly.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return d0
    alpha = gain.alpha
    if 0.0 < alpha < 1.0 and t * math.log(alpha) < math.log(_SHORT_CIRCUIT):
        return limit_state(gain, w_d)
    power = np.linalg.matrix_power(gain.g, t)
    fixed = _solve_fixed_point(gain, w_d.w_d)
    primary = power @ d0.d + fixed - power @ fixed

    partial = np.zeros_like(w_d.w_d)
    term = w_d.w_d.copy()
    for _ in range(t):
        partial += term
        term = gain.g @ term
    direct = power @ d0.d + partial

    gap = np.abs(primary - direct).max()
    if gap > 1e-9 * (1.0 + np.abs(primary).max()):
        raise NumericalError(
            f"closed-form evaluations disagree at t={t} (gap {gap:.3e})"
        )
    return StateVector(d=primary, m=d0.m, s=d0.s)


def limit_state(gain: GainMatrix, w_d: NoiseDrive) -> StateVector:
    """Fixed point of the error recursion: the state the solver settles into."""
    solution = _solve_fixed_point(gain, w_d.w_d)
    return StateVector(d=solution, m=w_d.m, s=w_d.s)


def predict_asymptotic_error(
    system: LinearSystem, params: TuningParams, x: np.ndarray
) -> ErrorPrediction:
    """Asymptotic consensus error, straight from the problem data.

    The prediction is ``(1/m) X^{-1} A^H Xi w`` with ``Xi`` the diagonal of
    reciprocal squared row norms. It must match the consensus block of
    :func:`limit_state`, which it never references; that agreement is the
    module's primary cross-check and is enforced in the tests.
    """
    noise = system.noise()
    xi_diag = 1.0 / np.einsum("ms,ms->m", system.a.conj(), system.a).real
    weighted = system.a.conj().T @ (xi_diag * noise)
    try:
        asymptotic = np.linalg.solve(x, weighted) / system.m
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError(f"consensus matrix is singular: {exc}") from exc
    return ErrorPrediction(
        asymptotic=asymptotic, xi_diag=xi_diag, transient_rate=params.alpha
    )


def transient_decay_fit(
    gain: GainMatrix, d0: StateVector, w_d: NoiseDrive, t_max: int
) -> DecayFit:
    """Fit the decay rate of the transient ``G^t ((I - G) d0 - w_d)``.

    Least squares on the log norms over the tail ``t >= t_max/2``. The
    iteration stops early if the transient underflows below 1e-300.
    """
    alpha = gain.alpha
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"decay fit needs a contraction factor in (0, 1), got {alpha:g}")
    if t_max < 4:
        raise ValueError("t_max too small for a tail fit")
    eye = np.eye(gain.dim)
    vector = (eye - gain.g) @ d0.d - w_d.w_d
    norms = []
    stopped_early = False
    for _ in range(t_max):
        vector = gain.g @ vector
        norm = float(np.linalg.norm(vector))
        if norm < 1e-300:
            stopped_early = True
            break
        norms.append(norm)
    rounds = np.arange(1, len(norms) + 1, dtype=np.float64)
    log_norms = np.log(np.asarray(norms))
    tail = rounds >= len(norms) / 2.0
    slope, intercept = np.polyfit(rounds[tail], log_norms[tail], 1)
    return DecayFit(
        slope=float(slope),
        intercept=float(intercept),
        rounds=rounds,
        log_norms=log_norms,
        stopped_early=stopped_early,
    )


def stacked_error(agent_matrix: np.ndarray, x_bar: np.ndarray, x_star: np.ndarray) -> np.ndarray:
    """Stack engine-side errors into the state-vector layout."""
    return np.concatenate([(agent_matrix - x_star).ravel(), x_bar - x_star])


def prediction_report(
    system: LinearSystem,
    params: TuningParams,
    x: np.ndarray,
    gain: GainMatrix,
    blocks: list[RowBlock],
    projections: list[Projection],
    t_max: int = 50,
) -> dict:
    """JSON-ready report: asymptotic error plus per-round transient norms."""
    prediction = predict_asymptotic_error(system, params, x)
    d0 = initial_state(system, blocks, projections)
    drive = noise_drive(system, blocks, params)
    transient_norms = []
    state = d0.d.copy()
    for _ in range(t_max + 1):
        consensus = state[system.m * system.s :]
        transient_norms.append(float(np.linalg.norm(consensus - prediction.asymptotic)))
        state = gain.g @ state + drive.w_d
    report = prediction.to_json_dict()
    report["transient_norms"] = transient_norms
    return report
