"""Observability analysis for the networked estimation problem.

The test linearizes every robot's process and measurement models along a
trajectory, appends the inter-robot residual Jacobians, and decides local
observability from the column rank of the stacked matrix. Including the
inter-robot rows is what distinguishes this from a per-robot test: a robot
without absolute sensing is observable only through the communication
structure, and the naive per-robot test would wrongly call the system
unobservable.
"""

from __future__ import annotations

import dataclasses

import numpy as np


@dataclasses.dataclass(frozen=True)
class TrajectoryLinearization:
    """Per-step Jacobians along a trajectory over the total stacked state.

    ``f_blocks[k]`` maps step k to k+1 (length K); ``g_blocks[k]`` and
    ``phi_blocks[k]`` hold measurement and inter-robot rows at step k
    (length K+1). Zero-row matrices encode steps without measurements.
    """

    f_blocks: tuple[np.ndarray, ...]
    g_blocks: tuple[np.ndarray, ...]
    phi_blocks: tuple[np.ndarray, ...]
    n_total: int

    def __post_init__(self):
        if len(self.g_blocks) != len(self.f_blocks) + 1:
            raise ValueError("need one more measurement block than transitions")
        if len(self.phi_blocks) != len(self.g_blocks):
            raise ValueError("pseudo and measurement block counts differ")
        for m in (*self.f_blocks, *self.g_blocks, *self.phi_blocks):
            if m.shape[-1] != self.n_total:
                raise ValueError(
                    f"block with {m.shape[-1]} columns in a {self.n_total}-state problem"
                )

    @property
    def steps(self) -> int:
        return len(self.f_blocks)


@dataclasses.dataclass(frozen=True)
class ObservabilityReport:
    rank: int
    required: int
    singular_values: np.ndarray
    observable: bool
    null_directions: np.ndarray  # columns span the unobservable subspace

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "required": self.required,
            "observable": self.observable,
            "singular_values_tail": [float(s) for s in self.singular_values[-8:]],
            "null_directions": [list(map(float, col)) for col in self.null_directions.T],
        }


def build_observability_matrix(lin: TrajectoryLinearization) -> np.ndarray:
    """Stack [G_k; Phi_k] left-multiplied by the transition product to step k."""
    rows = []
    transport = np.eye(lin.n_total)
    for k in range(lin.steps + 1):
        m_k = np.vstack([lin.g_blocks[k], lin.phi_blocks[k]])
        if m_k.shape[0]:
            rows.append(m_k @ transport)
        if k < lin.steps:
            transport = lin.f_blocks[k] @ transport
    if not rows:
        return np.zeros((0, lin.n_total))
    return np.vstack(rows)


def is_observable(o: np.ndarray, rel_tol: float = 1e-8) -> ObservabilityReport:
    """Numeric rank decision with null directions from the right singular
    vectors of the small singular values."""
    o = np.atleast_2d(np.asarray(o, dtype=float))
    if o.size == 0:
        raise ValueError("empty observability matrix")
    n = o.shape[1]
    _, svals, vt = np.linalg.svd(o)
    svals = np.concatenate([svals, np.zeros(max(0, n - len(svals)))])
    cutoff = rel_tol * (svals[0] if svals.size and svals[0] > 0 else 1.0)
    rank = int(np.sum(svals > cutoff))
    null_directions = vt[rank:].T if rank < n else np.zeros((n, 0))
    return ObservabilityReport(
        rank=rank,
        required=n,
        singular_values=svals,
        observable=rank == n,
        null_directions=null_directions,
    )


def linearize_scenario(config, steps: int, seed: int | None = None) -> TrajectoryLinearization:
    """Linearize a shipped scenario along its simulated true trajectory."""
    from .scenarios import build_definition

    definition = build_definition(config)
    return definition.linearize(steps, seed if seed is not None else config.seed)


def _batch_jacobian(lin: TrajectoryLinearization) -> np.ndarray:
    # Full trajectory-stacked Jacobian retained as a rank oracle for tests:
    # process rows couple consecutive steps, measurement and inter-robot
    # rows sit on their own step's columns.
    n = lin.n_total
    k_steps = lin.steps
    cols = (k_steps + 1) * n
    blocks = []
    for k in range(k_steps):
        row = np.zeros((n, cols))
        row[:, k * n : (k + 1) * n] = -lin.f_blocks[k]
        row[:, (k + 1) * n : (k + 2) * n] = np.eye(n)
        blocks.append(row)
    for k in range(k_steps + 1):
        g = lin.g_blocks[k]
        if g.shape[0]:
            row = np.zeros((g.shape[0], cols))
            row[:, k * n : (k + 1) * n] = -g
            blocks.append(row)
    for k in range(k_steps + 1):
        phi = lin.phi_blocks[k]
        if phi.shape[0]:
            row = np.zeros((phi.shape[0], cols))
            row[:, k * n : (k + 1) * n] = -phi
            blocks.append(row)
    return np.vstack(blocks)
