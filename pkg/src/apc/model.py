"""Problem instances, row partitioning, projections, and the consensus matrix.

Everything is stored in complex double precision; real-valued data is accepted
and widened with zero imaginary parts. All containers are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    EigensolveFailedError,
    MissingGroundTruthError,
    RankDeficientError,
    ZeroRowError,
)

#: Relative tolerance for numerical-rank decisions (scaled by the largest
#: singular value or eigenvalue of the matrix under test).
RANK_TOL_FACTOR = 1e-10


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _complex_vector(values, name: str, length: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.complex128)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.size != length:
        raise DimensionMismatchError(f"{name} must have length {length}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatchError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LinearSystem:
    """A linear observation model ``y = a @ x_star + w_tilde``.

    Parameters
    ----------
    a : array_like
        Coefficient matrix of shape ``(m, s)`` with ``m >= s >= 1`` and full
        numerical column rank. No row may be identically zero.
    y : array_like
        Observation vector of length ``m``.
    x_star : array_like, optional
        Ground-truth solution of length ``s``. Required by analysis-mode
        operations; plain solves work without it.
    w_tilde : array_like, optional
        Additive observation noise of length ``m``. When both ``x_star`` and
        ``w_tilde`` are present they must reproduce ``y`` to round-off.

    Raises
    ------
    ZeroRowError
        If some row of ``a`` is the zero row.
    RankDeficientError
        If ``a`` is numerically rank deficient.
    DimensionMismatchError
        On any shape, finiteness, or consistency violation.
    """

    a: np.ndarray
    y: np.ndarray
    x_star: np.ndarray | None = None
    w_tilde: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.complex128)
        if a.ndim != 2:
            raise DimensionMismatchError(f"a must be a matrix, got shape {a.shape}")
        m, s = a.shape
        if s < 1 or m < s:
            raise DimensionMismatchError(f"need m >= s >= 1, got shape {m}x{s}")
        if not np.all(np.isfinite(a)):
            raise DimensionMismatchError("a contains non-finite entries")
        row_norms = np.linalg.norm(a, axis=1)
        zero_rows = np.nonzero(row_norms == 0.0)[0]
        if zero_rows.size:
            raise ZeroRowError(int(zero_rows[0]) + 1)
        singvals = np.linalg.svd(a, compute_uv=False)
        if singvals[-1] <= RANK_TOL_FACTOR * singvals[0]:
            raise RankDeficientError(
                f"a is numerically rank deficient (sigma_min/sigma_max = "
                f"{singvals[-1] / singvals[0]:.3e})"
            )
        y = _complex_vector(self.y, "y", m)
        x_star = None if self.x_star is None else _complex_vector(self.x_star, "x_star", s)
        w_tilde = None if self.w_tilde is None else _complex_vector(self.w_tilde, "w_tilde", m)
        if x_star is not None and w_tilde is not None:
            residual = np.linalg.norm(y - a @ x_star - w_tilde)
            if residual > 1e-12 * (1.0 + np.linalg.norm(y)):
                raise DimensionMismatchError(
                    f"y, x_star, w_tilde are inconsistent (residual {residual:.3e})"
                )
        object.__setattr__(self, "a", _freeze(a))
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "x_star", None if x_star is None else _freeze(x_star))
        object.__setattr__(self, "w_tilde", None if w_tilde is None else _freeze(w_tilde))

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def s(self) -> int:
        return self.a.shape[1]

    def noise(self) -> np.ndarray:
        """Observation noise, explicit or derived as ``y - a @ x_star``."""
        if self.w_tilde is not None:
            return self.w_tilde
        if self.x_star is None:
            raise MissingGroundTruthError("need x_star (or explicit w_tilde) to know the noise")
        return self.y - self.a @ self.x_star


@dataclass(frozen=True)
class RowBlock:
    """One agent's private share of the problem: a single row and observation."""

    index: int  # 1-based agent index
    a_row: np.ndarray  # shape (s,)
    y_ell: complex

    def __post_init__(self):
        row = _complex_vector(self.a_row, "a_row")
        object.__setattr__(self, "a_row", _freeze(row))
        object.__setattr__(self, "y_ell", complex(self.y_ell))

    @property
    def gram(self) -> float:
        """The positive scalar ``a_row @ a_row^H``."""
        return float(np.vdot(self.a_row, self.a_row).real)


@dataclass(frozen=True)
class Projection:
    """Orthogonal projector onto the nullspace of one row.

    Hermitian, idempotent, and annihilates its defining row.
    """

    p: np.ndarray  # shape (s, s)

    def __post_init__(self):
        object.__setattr__(self, "p", _freeze(np.array(self.p, dtype=np.complex128)))


@dataclass(frozen=True)
class ConsensusSpectrum:
    """The consensus matrix together with its full Hermitian eigensystem.

    ``thetas`` is sorted descending, so ``thetas[0] == theta_max`` and
    ``thetas[-1] == theta_min``; column ``i`` of ``eigvecs`` belongs to
    ``thetas[i]``.
    """

    x: np.ndarray
    thetas: np.ndarray
    theta_min: float
    theta_max: float
    eigvecs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", _freeze(np.array(self.x, dtype=np.complex128)))
        object.__setattr__(self, "thetas", _freeze(np.array(self.thetas, dtype=np.float64)))
        object.__setattr__(self, "eigvecs", _freeze(np.array(self.eigvecs, dtype=np.complex128)))


def partition_rows(system: LinearSystem) -> list[RowBlock]:
    """Split a system into per-agent row blocks, one row per agent.

    Parameters
    ----------
    system : LinearSystem
        Validated problem instance.

    Returns
    -------
    list of RowBlock
        Blocks in row order; block ``ell`` carries row ``ell`` of ``a`` and
        entry ``ell`` of ``y`` (1-based indices).
    """
    blocks = []
    for ell in range(system.m):
        row = system.a[ell]
        if not np.vdot(row, row).real > 0.0:
            raise ZeroRowError(ell + 1)
        blocks.append(RowBlock(index=ell + 1, a_row=row, y_ell=complex(system.y[ell])))
    return blocks


def projection_complement(block: RowBlock) -> Projection:
    """Projector onto the orthogonal complement of one row's span.

    For row ``a`` this is ``I - a^H (a a^H)^{-1} a``; it is invariant under
    rescaling of ``a``.
    """
    gram = block.gram
    if not gram > 0.0:
        raise ZeroRowError(block.index)
    s = block.a_row.size
    p = np.eye(s, dtype=np.complex128) - np.outer(block.a_row.conj(), block.a_row) / gram
    return Projection(p=p)


def row_pseudoinverse(block: RowBlock) -> np.ndarray:
    """Minimum-norm solution map of one scalar equation: ``a^H (a a^H)^{-1}``."""
    gram = block.gram
    if not gram > 0.0:
        raise ZeroRowError(block.index)
    return block.a_row.conj() / gram


def consensus_matrix(blocks: list[RowBlock], rank_tol_factor: float = RANK_TOL_FACTOR) -> ConsensusSpectrum:
    """Average of the per-row orthogonal projectors onto the row spans.

    Parameters
    ----------
    blocks : list of RowBlock
        At least one block; all rows nonzero and of equal length.
    rank_tol_factor : float
        The smallest eigenvalue must exceed ``rank_tol_factor * theta_max``.

    Returns
    -------
    ConsensusSpectrum
        The matrix, its eigenvalues sorted descending, and orthonormal
        eigenvectors.

    Raises
    ------
    RankDeficientError
        If the smallest eigenvalue is numerically zero, meaning the rows do
        not span the full solution space.
    """
    if not blocks:
        raise DimensionMismatchError("need at least one row block")
    s = blocks[0].a_row.size
    x = np.zeros((s, s), dtype=np.complex128)
    for block in blocks:
        if block.a_row.size != s:
            raise DimensionMismatchError(
                f"block {block.index} has length {block.a_row.size}, expected {s}"
            )
        gram = block.gram
        if not gram > 0.0:
            raise ZeroRowError(block.index)
        x += np.outer(block.a_row.conj(), block.a_row) / gram
    x /= len(blocks)
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(x)
    except np.linalg.LinAlgError as exc:
        raise EigensolveFailedError(str(exc)) from exc
    thetas = eigenvalues[::-1].copy()
    eigvecs = eigenvectors[:, ::-1].copy()
    theta_max = float(thetas[0])
    theta_min = float(thetas[-1])
    if theta_min <= rank_tol_factor * theta_max:
        raise RankDeficientError(
            f"consensus matrix is singular (theta_min = {theta_min:.3e}); "
            "the rows do not span the solution space"
        )
    return ConsensusSpectrum(
        x=x, thetas=thetas, theta_min=theta_min, theta_max=theta_max, eigvecs=eigvecs
    )


def _pairs(vec: np.ndarray) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in vec]


def _from_pairs(pairs, name: str) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionMismatchError(f"{name} must be a list of [re, im] pairs")
    return arr[:, 0] + 1j * arr[:, 1]


def to_json_dict(system: LinearSystem) -> dict:
    """Self-describing JSON document for a problem instance."""
    return {
        "m": system.m,
        "s": system.s,
        "a": _pairs(system.a.ravel(order="C")),
        "y": _pairs(system.y),
        "x_star": None if system.x_star is None else _pairs(system.x_star),
        "w": None if system.w_tilde is None else _pairs(system.w_tilde),
    }


def from_json_dict(doc: dict) -> LinearSystem:
    """Rebuild a problem instance from its JSON document (bit-exact)."""
    try:
        m, s = int(doc["m"]), int(doc["s"])
        flat = _from_pairs(doc["a"], "a")
    except (KeyError, TypeError) as exc:
        raise DimensionMismatchError(f"malformed instance document: {exc}") from exc
    if flat.size != m * s:
        raise DimensionMismatchError(f"a has {flat.size} entries, expected m*s = {m * s}")
    a = flat.reshape(m, s)
    y = _from_pairs(doc["y"], "y")
    x_star = None if doc.get("x_star") is None else _from_pairs(doc["x_star"], "x_star")
    w_tilde = None if doc.get("w") is None else _from_pairs(doc["w"], "w")
    return LinearSystem(a=a, y=y, x_star=x_star, w_tilde=w_tilde)


def save_instance(system: LinearSystem, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(system)) + "\n")


def load_instance(path) -> LinearSystem:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DimensionMismatchError(f"not a valid instance file: {exc}") from exc
    return from_json_dict(doc)
