"""Round-based server/agents simulation of the consensus solver.

The execution model is bulk-synchronous: every round, each agent corrects its
local solution against the broadcast consensus iterate, and the server
aggregates all fresh agent solutions behind a full barrier. Agents may run
sequentially or on a thread pool; both modes aggregate in ascending agent
order with a fixed pairwise summation tree, so trajectories are bitwise
reproducible across modes and runs.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    MissingAgentError,
    NonFiniteError,
)
from .model import (
    LinearSystem,
    RowBlock,
    consensus_matrix,
    partition_rows,
    projection_complement,
    row_pseudoinverse,
)
from .tuning import TuningParams, optimal_params

#: Target residual contraction used when the caller does not pick a round count.
_DEFAULT_CONTRACTION = 1e-12
_MAX_DEFAULT_ROUNDS = 10_000


@dataclass(frozen=True)
class AgentState:
    """One agent's cached geometry and current local solution."""

    index: int
    projection: np.ndarray  # (s, s) nullspace projector, computed once
    pinv_row: np.ndarray  # (s,) minimum-norm solution map of the local equation
    x_ell: np.ndarray  # (s,) current local solution


@dataclass(frozen=True)
class ServerState:
    """Consensus iterate, tuning parameters, and the round counter."""

    x_bar: np.ndarray
    params: TuningParams
    round: int
    m: int


@dataclass
class RunRecord:
    """Trajectory of one solver run.

    ``trajectory`` holds ``(t, x_bar(t))`` for every round including ``t=0``,
    ``final`` is the last consensus iterate, and ``per_round_error`` holds
    ``||x_bar(t) - x_star||`` when the ground truth is known. When agent
    recording is enabled, ``agent_trajectory[t]`` is the ``(m, s)`` matrix of
    local solutions at round ``t``.
    """

    trajectory: list[tuple[int, np.ndarray]]
    final: np.ndarray
    per_round_error: list[float] | None
    params: TuningParams
    agent_trajectory: list[np.ndarray] | None = None


def agent_init(block: RowBlock) -> AgentState:
    """Initial agent state: the minimum-norm solution of the local equation."""
    projection = projection_complement(block).p
    pinv_row = row_pseudoinverse(block)
    return AgentState(
        index=block.index,
        projection=projection,
        pinv_row=pinv_row,
        x_ell=pinv_row * block.y_ell,
    )


def agent_step(state: AgentState, x_bar: np.ndarray, gamma: float) -> AgentState:
    """One agent round: projected correction toward the consensus iterate.

    The correction lives in the nullspace of the agent's row, so the local
    equation stays satisfied exactly.
    """
    if x_bar.shape != state.x_ell.shape:
        raise DimensionMismatchError(
            f"consensus iterate has shape {x_bar.shape}, expected {state.x_ell.shape}"
        )
    x_new = state.x_ell + gamma * (state.projection @ (x_bar - state.x_ell))
    return replace(state, x_ell=x_new)


def _pairwise_sum(vectors, lo: int, hi: int) -> np.ndarray:
    # Fixed binary-tree reduction: the result does not depend on scheduling.
    if hi - lo == 1:
        return vectors[lo]
    mid = lo + (hi - lo) // 2
    return _pairwise_sum(vectors, lo, mid) + _pairwise_sum(vectors, mid, hi)


def server_init(agent_solutions: list[np.ndarray], params: TuningParams) -> ServerState:
    """Initial server state: the plain average of the agent solutions."""
    if not agent_solutions:
        raise MissingAgentError(1)
    s = agent_solutions[0].shape
    for k, vec in enumerate(agent_solutions):
        if vec is None:
            raise MissingAgentError(k + 1)
        if vec.shape != s:
            raise DimensionMismatchError(f"agent {k + 1} solution has shape {vec.shape}")
    m = len(agent_solutions)
    x_bar = _pairwise_sum(agent_solutions, 0, m) / m
    return ServerState(x_bar=x_bar, params=params, round=0, m=m)


def server_step(state: ServerState, agent_solutions: list[np.ndarray]) -> ServerState:
    """One server round: momentum-weighted average of the fresh agent solutions.

    All ``m`` updates must be present (the barrier); a missing one raises
    :class:`MissingAgentError`.
    """
    if len(agent_solutions) != state.m:
        raise MissingAgentError(len(agent_solutions) + 1)
    for k, vec in enumerate(agent_solutions):
        if vec is None:
            raise MissingAgentError(k + 1)
        if vec.shape != state.x_bar.shape:
            raise DimensionMismatchError(f"agent {k + 1} solution has shape {vec.shape}")
    eta = state.params.eta
    total = _pairwise_sum(agent_solutions, 0, state.m)
    x_bar = (eta / state.m) * total + (1.0 - eta) * state.x_bar
    return replace(state, x_bar=x_bar, round=state.round + 1)


def default_round_count(alpha: float) -> int:
    """Rounds needed to contract the transient below 1e-12, clamped to [1, 10000]."""
    if alpha <= 0.0:
        return 1
    if alpha >= 1.0:
        return _MAX_DEFAULT_ROUNDS
    needed = math.ceil(math.log(_DEFAULT_CONTRACTION) / math.log(alpha))
    return min(_MAX_DEFAULT_ROUNDS, max(1, needed))


def run_apc(
    system: LinearSystem,
    rounds: int | None = None,
    params: TuningParams | None = None,
    mode: str = "sequential",
    workers: int | None = None,
    record_agents: bool = False,
) -> RunRecord:
    """Run the full solver for a fixed number of rounds.

    Parameters
    ----------
    system : LinearSystem
        Problem instance.
    rounds : int, optional
        Number of rounds ``T``; the consensus iterate is reported for
        ``t = 0, ..., T``. Defaults to :func:`default_round_count` of the
        contraction factor.
    params : TuningParams, optional
        Tuning to use. By default the consensus spectrum is measured and the
        optimal closed-form parameters are applied.
    mode : str
        ``"sequential"`` or ``"threads"``. Both produce bitwise identical
        trajectories; the thread mode exercises the concurrent execution path.
    workers : int, optional
        Thread-pool size for ``mode="threads"``.
    record_agents : bool
        Also record the full matrix of local solutions at every round.

    Raises
    ------
    NonFiniteError
        If any iterate stops being finite (divergence; cannot happen with the
        optimal tuning of a full-rank instance).
    """
    if mode not in ("sequential", "threads"):
        raise ValueError(f"unknown mode {mode!r}")
    blocks = partition_rows(system)
    if params is None:
        spectrum = consensus_matrix(blocks)
        params = optimal_params(spectrum.theta_min, spectrum.theta_max)
    if rounds is None:
        rounds = default_round_count(params.alpha)
    if rounds < 0:
        raise ValueError("rounds must be nonnegative")

    agents = [agent_init(block) for block in blocks]
    server = server_init([agent.x_ell for agent in agents], params)

    x_star = system.x_star
    trajectory = [(0, server.x_bar)]
    errors = None if x_star is None else [float(np.linalg.norm(server.x_bar - x_star))]
    agent_frames = None
    if record_agents:
        agent_frames = [np.stack([agent.x_ell for agent in agents])]

    executor = ThreadPoolExecutor(max_workers=workers or min(len(agents), 8)) if mode == "threads" else None
    try:
        gamma = params.gamma
        for _ in range(rounds):
            x_bar = server.x_bar
            if executor is not None:
                agents = list(executor.map(lambda ag: agent_step(ag, x_bar, gamma), agents))
            else:
                agents = [agent_step(agent, x_bar, gamma) for agent in agents]
            server = server_step(server, [agent.x_ell for agent in agents])
            if not np.all(np.isfinite(server.x_bar)) or not all(
                np.all(np.isfinite(agent.x_ell)) for agent in agents
            ):
                raise NonFiniteError(server.round)
            trajectory.append((server.round, server.x_bar))
            if errors is not None:
                errors.append(float(np.linalg.norm(server.x_bar - x_star)))
            if agent_frames is not None:
                agent_frames.append(np.stack([agent.x_ell for agent in agents]))
    finally:
        if executor is not None:
            executor.shutdown()

    return RunRecord(
        trajectory=trajectory,
        final=server.x_bar,
        per_round_error=errors,
        params=params,
        agent_trajectory=agent_frames,
    )


def export_run_csv(record: RunRecord, path, include_coords: bool = False) -> None:
    """Write one row per round: ``t``, the error norm when known, and
    optionally the consensus coordinates as ``re``/``im`` column pairs."""
    s = record.final.size
    header = ["t"]
    if record.per_round_error is not None:
        header.append("err_l2")
    if include_coords:
        for i in range(s):
            header += [f"x{i}_re", f"x{i}_im"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, x_bar in record.trajectory:
            row = [str(t)]
            if record.per_round_error is not None:
                row.append(f"{record.per_round_error[t]:.17g}")
            if include_coords:
                for z in x_bar:
                    row += [f"{z.real:.17g}", f"{z.imag:.17g}"]
            writer.writerow(row)
