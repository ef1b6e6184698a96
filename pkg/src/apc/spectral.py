"""Gain matrix of the stacked error recursion and its spectral verification.

The solver's error dynamics are linear: the stacked vector of per-agent errors
and the consensus error evolves by a fixed gain matrix plus a constant noise
drive. This module assembles that matrix densely, predicts its spectrum in
closed form from the consensus eigenvalues, and checks the prediction against
a dense eigensolve, eigenvector formulas, and rank counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .exceptions import DimensionMismatchError, EigensolveFailedError, NumericalError
from .model import ConsensusSpectrum, LinearSystem, Projection, consensus_matrix, partition_rows, projection_complement
from .tuning import TuningParams, optimal_params

#: Matching tolerances are escalated through this ladder before giving up and
#: pairing with the nearest leftover value.
_MATCH_TOLERANCES = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

#: Eigenvalues closer than this to another predicted value are treated as a
#: cluster: rank-based multiplicity counting is skipped for them.
SEPARATION_TOL = 1e-6

#: Relative singular-value threshold for numerical rank decisions.
RANK_EPS = 1e-8


@dataclass(frozen=True)
class GainMatrix:
    """Dense one-round update matrix of the stacked error recursion.

    Block layout for ``m`` agents of dimension ``s``: the leading ``m*s`` rows
    hold ``(1-gamma) I`` beside the stacked, gamma-scaled nullspace projectors;
    the trailing ``s`` rows hold the scaled identities through which the
    server aggregates, beside the consensus block ``b``.
    """

    g: np.ndarray
    b: np.ndarray
    gamma: float
    eta: float
    m: int
    s: int

    @property
    def alpha(self) -> float:
        """Contraction factor implied by the tuning baked into the matrix."""
        return math.sqrt(max((self.gamma - 1.0) * (self.eta - 1.0), 0.0))

    @property
    def dim(self) -> int:
        return (self.m + 1) * self.s


@dataclass
class SpectralReport:
    """Predicted versus measured spectrum of a gain matrix.

    ``rho_measured`` is the raw spectral radius of the dense eigensolve.
    Defective eigenvalue pairs split by about the square root of machine
    epsilon under any backward-stable eigensolver, so ``rho_refined``
    re-estimates the radius from multiplicity-cluster means, which are
    insensitive to that splitting.
    """

    predicted_repeated: complex
    repeated_multiplicity: int
    predicted_xi: np.ndarray  # shape (s, 2), columns are the +/- roots
    measured: np.ndarray
    rho_measured: float
    rho_refined: float
    alpha: float
    match_residual: float

    def to_json_dict(self) -> dict:
        return {
            "predicted_repeated": [self.predicted_repeated.real, self.predicted_repeated.imag],
            "repeated_multiplicity": self.repeated_multiplicity,
            "predicted_xi": [[z.real, z.imag] for z in self.predicted_xi.ravel()],
            "measured": [[z.real, z.imag] for z in self.measured],
            "rho_measured": self.rho_measured,
            "rho_refined": self.rho_refined,
            "alpha": self.alpha,
            "match_residual": self.match_residual,
        }


@dataclass
class EigenvectorCheck:
    """Residuals of the closed-form eigenvector construction."""

    max_residual: float
    residuals: list[tuple[int, int, float]]  # (theta index, +/-1, residual)
    degenerate: list[tuple[int, int]]  # pairs skipped: formula denominator vanished


@dataclass
class MultiplicityReport:
    """Rank-based geometric multiplicity counts.

    ``skipped`` lists predicted eigenvalues that sit within
    :data:`SEPARATION_TOL` of another predicted value; rank counts next to a
    cluster are numerically meaningless, so they are reported rather than
    failed.
    """

    shifted_rank: int
    rank_bound: int
    nullities: dict[complex, int] = field(default_factory=dict)
    skipped: list[complex] = field(default_factory=list)


def build_gain_matrix(
    projections: list[Projection], x: np.ndarray, params: TuningParams
) -> GainMatrix:
    """Assemble the dense gain matrix from cached projectors and the tuning."""
    m = len(projections)
    if m < 1:
        raise DimensionMismatchError("need at least one projection")
    s = x.shape[0]
    if x.shape != (s, s):
        raise DimensionMismatchError(f"consensus matrix must be square, got {x.shape}")
    gamma, eta = params.gamma, params.eta
    n = (m + 1) * s
    g = np.zeros((n, n), dtype=np.complex128)
    g[: m * s, : m * s] = (1.0 - gamma) * np.eye(m * s)
    for ell, proj in enumerate(projections):
        if proj.p.shape != (s, s):
            raise DimensionMismatchError(
                f"projection {ell + 1} has shape {proj.p.shape}, expected {(s, s)}"
            )
        g[ell * s : (ell + 1) * s, m * s :] = gamma * proj.p
        g[m * s :, ell * s : (ell + 1) * s] = (eta * (1.0 - gamma) / m) * np.eye(s)
    b = -eta * gamma * x + (1.0 - eta + eta * gamma) * np.eye(s, dtype=np.complex128)
    g[m * s :, m * s :] = b
    return GainMatrix(g=g, b=b, gamma=gamma, eta=eta, m=m, s=s)


def gain_from_system(
    system: LinearSystem, params: TuningParams | None = None
) -> tuple[GainMatrix, ConsensusSpectrum, TuningParams]:
    """Measure the consensus spectrum and assemble the gain matrix."""
    blocks = partition_rows(system)
    projections = [projection_complement(block) for block in blocks]
    spectrum = consensus_matrix(blocks)
    if params is None:
        params = optimal_params(spectrum.theta_min, spectrum.theta_max)
    gain = build_gain_matrix(projections, spectrum.x, params)
    return gain, spectrum, params


def _quadratic_roots_extended(theta_i: float, theta_min: float, theta_max: float) -> tuple[complex, complex]:
    # At double roots the discriminant cancels catastrophically in double
    # precision (error near sqrt(eps)), so this route runs in extended
    # precision, rebuilding the tuning from the spectrum bounds on the way.
    with mpmath.workdps(40):
        ti = mpmath.mpf(theta_i)
        tn = mpmath.mpf(theta_min)
        tx = mpmath.mpf(theta_max)
        a = mpmath.sqrt(tx)
        b = mpmath.sqrt(tn)
        cross_sq = (1 - tx) * (1 - tn)
        cross = mpmath.sqrt(cross_sq) if cross_sq > 0 else mpmath.mpf(0)
        denom = (a + b) ** 2
        gamma = (2 * (a * b + 1) - 2 * cross) / denom
        eta = (2 * (a * b + 1) + 2 * cross) / denom
        lin = -eta * gamma * (1 - ti) + gamma + eta - 2
        const = (gamma - 1) * (eta - 1)
        disc = lin * lin - 4 * const
        root = mpmath.sqrt(disc)
        return complex((-lin + root) / 2), complex((-lin - root) / 2)


def predicted_eigenvalues(thetas: np.ndarray, params: TuningParams) -> np.ndarray:
    """Closed-form nontrivial eigenvalues of the gain matrix, one +/- pair per
    consensus eigenvalue.

    Every pair is computed along two routes, the quadratic formula on the
    characteristic polynomial and the direct closed form in the consensus
    eigenvalues; the routes must agree to 1e-10 and every root must have
    modulus ``alpha`` to 1e-10, otherwise :class:`NumericalError` is raised.

    Returns
    -------
    ndarray of shape (s, 2)
        Row ``i`` holds the two roots for ``thetas[i]``; column 0 carries the
        ``+`` branch.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    theta_max = float(thetas[0])
    theta_min = float(thetas[-1])
    denom = (math.sqrt(theta_max) + math.sqrt(theta_min)) ** 2
    out = np.empty((thetas.size, 2), dtype=np.complex128)
    for i, theta_i in enumerate(thetas):
        real_part = (theta_max + theta_min - 2.0 * theta_i) / denom
        radical = 2.0 * np.sqrt(complex((theta_i - theta_max) * (theta_i - theta_min))) / denom
        plus, minus = real_part + radical, real_part - radical
        q_plus, q_minus = _quadratic_roots_extended(float(theta_i), theta_min, theta_max)
        gap = max(abs(plus - q_plus), abs(minus - q_minus))
        if gap > 1e-10:
            raise NumericalError(
                f"eigenvalue routes disagree at theta={theta_i:.6g} (gap {gap:.3e})"
            )
        for root in (plus, minus):
            if abs(abs(root) - params.alpha) > 1e-10:
                raise NumericalError(
                    f"root modulus {abs(root):.12g} differs from alpha {params.alpha:.12g}"
                )
        out[i, 0], out[i, 1] = plus, minus
    return out


def _prediction_groups(gain: GainMatrix, xi: np.ndarray) -> list[tuple[complex, int]]:
    """Distinct predicted eigenvalues with multiplicities, sorted for
    deterministic matching."""
    groups: dict[complex, int] = {}
    repeated_mult = (gain.m - 1) * gain.s
    if repeated_mult > 0:
        groups[complex(1.0 - gain.gamma)] = repeated_mult
    for z in xi.ravel():
        z = complex(z)
        groups[z] = groups.get(z, 0) + 1
    return sorted(groups.items(), key=lambda kv: (kv[0].real, kv[0].imag))


def verify_spectrum(
    gain: GainMatrix, thetas: np.ndarray, params: TuningParams
) -> SpectralReport:
    """Match the measured spectrum of the gain matrix against the prediction.

    Greedy nearest-neighbour multiset matching with tolerance escalation; the
    final residual is reported rather than silently accepted.
    """
    try:
        measured = np.linalg.eigvals(gain.g)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailedError(str(exc)) from exc
    xi = predicted_eigenvalues(thetas, params)
    groups = _prediction_groups(gain, xi)

    available = np.ones(measured.size, dtype=bool)
    residual = 0.0
    rho_refined = 0.0
    pending = {value: mult for value, mult in groups}
    for tol in (*_MATCH_TOLERANCES, math.inf):
        for value, _ in groups:
            need = pending[value]
            if need == 0:
                continue
            dists = np.abs(measured - value)
            dists[~available] = math.inf
            order = np.argsort(dists)
            take = [j for j in order[:need] if dists[j] <= tol]
            if len(take) < need and tol is not math.inf:
                continue
            available[take] = False
            pending[value] -= len(take)
            if take:
                residual = max(residual, float(np.abs(measured[take] - value).max()))
    # Cluster means cancel the symmetric splitting of defective pairs, giving
    # a far sharper spectral-radius estimate than the raw maximum.
    available = np.ones(measured.size, dtype=bool)
    for value, mult in groups:
        dists = np.abs(measured - value)
        dists[~available] = math.inf
        take = np.argsort(dists)[:mult]
        available[take] = False
        rho_refined = max(rho_refined, float(abs(measured[take].mean())))

    return SpectralReport(
        predicted_repeated=complex(1.0 - gain.gamma),
        repeated_multiplicity=(gain.m - 1) * gain.s,
        predicted_xi=xi,
        measured=measured,
        rho_measured=float(np.abs(measured).max()),
        rho_refined=rho_refined,
        alpha=params.alpha,
        match_residual=residual,
    )


def verify_eigenvector_formula(
    gain: GainMatrix,
    spectrum: ConsensusSpectrum,
    projections: list[Projection],
    params: TuningParams,
) -> EigenvectorCheck:
    """Check the stacked closed-form eigenvectors of the nontrivial spectrum.

    For each consensus eigenpair and each root, the candidate eigenvector
    stacks the scaled projected consensus eigenvector over all agents. Pairs
    whose scale denominator vanishes are reported in ``degenerate`` and
    skipped.
    """
    xi = predicted_eigenvalues(spectrum.thetas, params)
    gamma = params.gamma
    residuals: list[tuple[int, int, float]] = []
    degenerate: list[tuple[int, int]] = []
    max_residual = 0.0
    for i in range(spectrum.thetas.size):
        v_i = spectrum.eigvecs[:, i]
        for sign, root in ((+1, xi[i, 0]), (-1, xi[i, 1])):
            denom = 1.0 - gamma - root
            if abs(denom) <= 1e-12:
                degenerate.append((i, sign))
                continue
            coeff = -gamma / denom
            stacked = np.concatenate(
                [coeff * (proj.p @ v_i) for proj in projections] + [v_i]
            )
            residual = float(
                np.linalg.norm(gain.g @ stacked - root * stacked) / np.linalg.norm(stacked)
            )
            residuals.append((i, sign, residual))
            max_residual = max(max_residual, residual)
    return EigenvectorCheck(
        max_residual=max_residual, residuals=residuals, degenerate=degenerate
    )


def _numerical_rank(matrix: np.ndarray) -> int:
    singvals = np.linalg.svd(matrix, compute_uv=False)
    if singvals[0] == 0.0:
        return 0
    return int((singvals > RANK_EPS * singvals[0]).sum())


def verify_multiplicity_structure(
    gain: GainMatrix, thetas: np.ndarray, params: TuningParams
) -> MultiplicityReport:
    """Measure geometric multiplicities through numerical rank counts.

    The rank of the gain matrix shifted by its repeated eigenvalue is bounded
    by twice the solution dimension; each well-separated nontrivial eigenvalue
    gets its kernel dimension counted. Clustered eigenvalues are listed in
    ``skipped``.
    """
    n = gain.dim
    eye = np.eye(n)
    shifted_rank = _numerical_rank(gain.g - (1.0 - gain.gamma) * eye)
    xi = predicted_eigenvalues(thetas, params)
    groups = _prediction_groups(gain, xi)
    values = [value for value, _ in groups]
    report = MultiplicityReport(shifted_rank=shifted_rank, rank_bound=2 * gain.s)
    for value, _ in groups:
        if value == complex(1.0 - gain.gamma) and (gain.m - 1) * gain.s > 0:
            continue  # covered by the shifted-rank bound above
        separation = min(
            (abs(value - other) for other in values if other != value),
            default=math.inf,
        )
        if separation <= SEPARATION_TOL:
            report.skipped.append(value)
            continue
        nullity = n - _numerical_rank(gain.g - value * eye)
        report.nullities[value] = nullity
    return report


def decay_envelope_constant(
    gain: GainMatrix,
    alpha: float,
    t_max: int = 100,
    rng: np.random.Generator | None = None,
    floor: float = 1e-12,
) -> float:
    """Smallest constant C with ``||G^t u|| <= C (t+1) alpha^(t-1) ||u||``
    observed on a random unit vector for ``t <= t_max``.

    Rounds where the envelope factor falls below ``floor`` are skipped: past
    that point the iterate sits at the round-off noise floor and the ratio is
    meaningless.
    """
    rng = rng or np.random.default_rng(0)
    n = gain.dim
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    u /= np.linalg.norm(u)
    constant = 0.0
    v = u.copy()
    for t in range(1, t_max + 1):
        v = gain.g @ v
        factor = (t + 1) * alpha ** max(t - 1, 0)
        if factor < floor:
            continue
        constant = max(constant, float(np.linalg.norm(v) / factor))
    return constant


def neumann_margin(gain: GainMatrix, alpha: float) -> tuple[float, float]:
    """Smallest singular value of (I - G) and its ratio to ``1 - alpha``.

    A strictly positive ratio certifies that the fixed-point system is
    invertible, i.e. the geometric series of gain powers converges.
    """
    smallest = float(np.linalg.svd(np.eye(gain.dim) - gain.g, compute_uv=False)[-1])
    return smallest, smallest / (1.0 - alpha)
