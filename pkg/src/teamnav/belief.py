"""Gaussians on Lie groups: covariance intersection, sampling, consistency."""

from __future__ import annotations

import dataclasses

import numpy as np

from .groups import GroupDescriptor, ManifoldElement, Side, ominus, oplus

# Default intersection weight; the receiving robot keeps most of its own
# information and heavily discounts the incoming marginal.
DEFAULT_CI_WEIGHT = 0.99


@dataclasses.dataclass(frozen=True)
class CiWeight:
    w: float = DEFAULT_CI_WEIGHT

    def __post_init__(self):
        if not 0.0 < self.w < 1.0:
            raise ValueError(f"intersection weight must be in (0, 1), got {self.w}")

    def __float__(self) -> float:
        return self.w


def _weight(w) -> float:
    value = float(w)
    if not 0.0 < value < 1.0:
        raise ValueError(f"intersection weight must be in (0, 1), got {value}")
    return value


def symmetrize(cov: np.ndarray) -> np.ndarray:
    return (cov + cov.T) / 2.0


@dataclasses.dataclass(frozen=True)
class Belief:
    """Mean on a group plus a covariance over its tangent coordinates."""

    mean: ManifoldElement
    cov: np.ndarray
    side: Side = Side.RIGHT

    def __post_init__(self):
        cov = symmetrize(np.array(self.cov, dtype=float))
        n = self.mean.descriptor.dof
        if cov.shape != (n, n):
            raise ValueError(f"covariance shape {cov.shape} != ({n}, {n})")
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)

    @property
    def descriptor(self) -> GroupDescriptor:
        return self.mean.descriptor

    @property
    def dof(self) -> int:
        return self.mean.descriptor.dof

    def with_cov(self, cov: np.ndarray) -> "Belief":
        return Belief(self.mean, cov, self.side)

    def with_mean(self, mean: ManifoldElement) -> "Belief":
        return Belief(mean, self.cov, self.side)


def ci_inflate(a: Belief, b: Belief, w=DEFAULT_CI_WEIGHT) -> tuple[Belief, Belief]:
    """Inflate two marginals so their block-diagonal upper-bounds any joint."""
    wv = _weight(w)
    return a.with_cov(a.cov / wv), b.with_cov(b.cov / (1.0 - wv))


def sample(b: Belief, rng: np.random.Generator) -> ManifoldElement:
    """Draw mean (+) L z with L the Cholesky factor of the covariance."""
    if not np.any(b.cov):
        return b.mean
    try:
        chol = np.linalg.cholesky(b.cov + 1e-12 * np.eye(b.dof))
    except np.linalg.LinAlgError as err:
        raise ValueError("covariance is not positive semidefinite") from err
    return oplus(b.mean, chol @ rng.standard_normal(b.dof), b.side)


def nees(b: Belief, truth: ManifoldElement) -> float:
    """Normalized estimation error squared; expectation is dof if consistent."""
    err = ominus(truth, b.mean, b.side)
    try:
        solved = np.linalg.solve(b.cov, err)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular covariance in consistency check") from exc
    return float(err @ solved)
