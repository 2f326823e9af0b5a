"""On-manifold Kalman prediction/update, pseudomeasurement fusion, and a
generic MAP Gauss-Newton solver.

All operations are pure: they take beliefs and return new beliefs. The
fusion of a pseudomeasurement follows the iterated scheme in which both
marginals are re-linearized at the current iterate; a single iteration
reduces to the familiar EKF update form.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.stats import chi2

from .belief import DEFAULT_CI_WEIGHT, Belief, ci_inflate, symmetrize
from .groups import (
    ManifoldElement,
    Side,
    group_jacobian,
    numerical_jacobian,
    ominus,
    oplus,
)

log = logging.getLogger(__name__)


class ProcessModel:
    """State transition x_k = f(x_{k-1}, u, w) with white input noise w.

    Subclasses provide ``evaluate`` and may override the Jacobians with
    analytic forms; the defaults fall back to central finite differences.
    ``noise_cov`` is the per-step covariance of w.
    """

    side: Side = Side.RIGHT
    noise_cov: np.ndarray
    dt: float = 0.0

    def evaluate(self, x: ManifoldElement, u, w) -> ManifoldElement:
        raise NotImplementedError

    def noise_dim(self) -> int:
        return np.asarray(self.noise_cov).shape[0]

    def jac_state(self, x: ManifoldElement, u) -> np.ndarray:
        zero_w = np.zeros(self.noise_dim())
        return numerical_jacobian(lambda e: self.evaluate(e, u, zero_w), x, self.side)

    def jac_noise(self, x: ManifoldElement, u) -> np.ndarray:
        nw = self.noise_dim()
        base = self.evaluate(x, u, np.zeros(nw))
        out = np.zeros((x.descriptor.dof, nw))
        h = 1e-6
        for j in range(nw):
            w = np.zeros(nw)
            w[j] = h
            plus = ominus(self.evaluate(x, u, w), base, self.side)
            minus = ominus(self.evaluate(x, u, -w), base, self.side)
            out[:, j] = (plus - minus) / (2.0 * h)
        return out


class MeasurementModel:
    """Local measurement y = g(x) + v with noise covariance ``noise_cov``."""

    side: Side = Side.RIGHT
    noise_cov: np.ndarray

    def evaluate(self, x: ManifoldElement) -> np.ndarray:
        raise NotImplementedError

    def jac(self, x: ManifoldElement) -> np.ndarray:
        base = self.evaluate(x)
        n = x.descriptor.dof
        out = np.zeros((base.shape[0], n))
        h = 1e-6
        for j in range(n):
            d = np.zeros(n)
            d[j] = h
            out[:, j] = (
                self.evaluate(oplus(x, d, self.side))
                - self.evaluate(oplus(x, -d, self.side))
            ) / (2.0 * h)
        return out


class PseudoModel:
    """Zero-valued residual c(x_i, x_j) relating two robots' states.

    ``psi`` is the pseudomeasurement covariance and may be exactly zero.
    """

    side: Side = Side.RIGHT
    psi: np.ndarray

    def evaluate(self, xi: ManifoldElement, xj: ManifoldElement) -> np.ndarray:
        raise NotImplementedError

    def jac_i(self, xi: ManifoldElement, xj: ManifoldElement) -> np.ndarray:
        base = self.evaluate(xi, xj)
        n = xi.descriptor.dof
        out = np.zeros((base.shape[0], n))
        h = 1e-6
        for k in range(n):
            d = np.zeros(n)
            d[k] = h
            out[:, k] = (
                self.evaluate(oplus(xi, d, self.side), xj)
                - self.evaluate(oplus(xi, -d, self.side), xj)
            ) / (2.0 * h)
        return out

    def jac_j(self, xi: ManifoldElement, xj: ManifoldElement) -> np.ndarray:
        base = self.evaluate(xi, xj)
        n = xj.descriptor.dof
        out = np.zeros((base.shape[0], n))
        h = 1e-6
        for k in range(n):
            d = np.zeros(n)
            d[k] = h
            out[:, k] = (
                self.evaluate(xi, oplus(xj, d, self.side))
                - self.evaluate(xi, oplus(xj, -d, self.side))
            ) / (2.0 * h)
        return out

    def evaluate_with_jacobians(
        self, xi: ManifoldElement, xj: ManifoldElement
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Residual and both Jacobians; override when one pass is cheaper."""
        return self.evaluate(xi, xj), self.jac_i(xi, xj), self.jac_j(xi, xj)


@dataclasses.dataclass(frozen=True)
class FusionSettings:
    max_iters: int = 10
    step_tol: float = 1e-8
    perform_ci: bool = True
    ci_weight: float = DEFAULT_CI_WEIGHT

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_tol <= 0.0:
            raise ValueError("step_tol must be positive")


class UpdateResult(NamedTuple):
    belief: Belief
    innovation: np.ndarray
    innovation_cov: np.ndarray
    gated: bool = False


class GnResult(NamedTuple):
    belief: Belief
    converged: bool
    iterations: int


def predict(b: Belief, pm: ProcessModel, u) -> Belief:
    """Propagate mean through f and covariance through F P F' + L Q L'."""
    mean = pm.evaluate(b.mean, u, np.zeros(pm.noise_dim()))
    f = pm.jac_state(b.mean, u)
    l = pm.jac_noise(b.mean, u)
    cov = f @ b.cov @ f.T + l @ np.asarray(pm.noise_cov) @ l.T
    return Belief(mean, cov, b.side)


def update_local(
    b: Belief, mm: MeasurementModel, y, gate_prob: float | None = None
) -> UpdateResult:
    """Kalman update against a local measurement, Joseph-form covariance.

    With ``gate_prob`` set, measurements whose normalized innovation squared
    exceeds the chi-square quantile are rejected and the belief returned
    unchanged.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    g = mm.jac(b.mean)
    r = np.atleast_2d(np.asarray(mm.noise_cov, dtype=float))
    innov = y - np.atleast_1d(mm.evaluate(b.mean))
    s_inn = symmetrize(g @ b.cov @ g.T + r)
    try:
        gain = np.linalg.solve(s_inn, g @ b.cov).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular innovation covariance") from exc
    if gate_prob is not None:
        nis = float(innov @ np.linalg.solve(s_inn, innov))
        if nis > chi2.ppf(gate_prob, y.shape[0]):
            return UpdateResult(b, innov, s_inn, gated=True)
    mean = oplus(b.mean, gain @ innov, b.side)
    ikg = np.eye(b.dof) - gain @ g
    cov = ikg @ b.cov @ ikg.T + gain @ r @ gain.T
    return UpdateResult(Belief(mean, cov, b.side), innov, s_inn, gated=False)


def _fusion_terms(pm, c, s1, s2, x1, x2, t1, t2, p1, p2, side):
    eps1 = ominus(x1, t1.mean, side)
    eps2 = ominus(x2, t2.mean, side)
    j1 = group_jacobian(t1.descriptor, eps1, side)
    j2 = group_jacobian(t2.descriptor, eps2, side)
    a1 = j1 @ p1 @ j1.T
    a2 = j2 @ p2 @ j2.T
    v = symmetrize(
        np.asarray(pm.psi, dtype=float) + s1 @ a1 @ s1.T + s2 @ a2 @ s2.T
    )
    return eps1, eps2, j1, j2, a1, a2, v


def fuse_pseudo(
    b_i: Belief, b_j: Belief, pm: PseudoModel, settings: FusionSettings = FusionSettings()
) -> tuple[Belief, Belief]:
    """Fuse a zero-valued pseudomeasurement relating two robots' states.

    Covariance intersection, when enabled, inflates both marginals once
    before iterating. Iteration relinearizes at the current estimates and
    stops when the combined step is below ``step_tol``.
    """
    side = b_i.side
    if settings.perform_ci:
        b_i, b_j = ci_inflate(b_i, b_j, settings.ci_weight)
    p1, p2 = b_i.cov, b_j.cov
    x1, x2 = b_i.mean, b_j.mean
    last = None
    prev_residual = None
    for _ in range(settings.max_iters):
        c, s1, s2 = pm.evaluate_with_jacobians(x1, x2)
        c = np.atleast_1d(c)
        res_norm = float(np.linalg.norm(c))
        if prev_residual is not None and res_norm > prev_residual + 1e-12:
            log.debug(
                "fusion residual increased: %.3e -> %.3e", prev_residual, res_norm
            )
        prev_residual = res_norm
        eps1, eps2, j1, j2, a1, a2, v = _fusion_terms(
            pm, c, s1, s2, x1, x2, b_i, b_j, p1, p2, side
        )
        try:
            vinv = np.linalg.inv(v)
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                "singular fusion information: zero pseudomeasurement covariance "
                "with a rank-deficient projected prior"
            ) from exc
        k1 = a1 @ s1.T @ vinv
        k2 = a2 @ s2.T @ vinv
        z = -c + s1 @ (j1 @ eps1) + s2 @ (j2 @ eps2)
        d1 = -j1 @ eps1 + k1 @ z
        d2 = -j2 @ eps2 + k2 @ z
        x1 = oplus(x1, d1, side)
        x2 = oplus(x2, d2, side)
        last = (j1, j2, s1, s2, k1, k2, a1, a2)
        if np.linalg.norm(np.concatenate([d1, d2])) < settings.step_tol:
            break
    j1, j2, s1, s2, k1, k2, a1, a2 = last
    cov1 = (np.eye(b_i.dof) - k1 @ s1) @ a1
    cov2 = (np.eye(b_j.dof) - k2 @ s2) @ a2
    return Belief(x1, cov1, side), Belief(x2, cov2, side)


@dataclasses.dataclass(frozen=True)
class ResidualBlock:
    """One weighted residual e(x) with its Jacobian de/dx and covariance."""

    evaluate: Callable[[ManifoldElement], np.ndarray]
    jacobian: Callable[[ManifoldElement], np.ndarray]
    weight: np.ndarray


def gauss_newton_map(
    prior: Belief,
    blocks: Sequence[ResidualBlock],
    settings: FusionSettings = FusionSettings(),
) -> GnResult:
    """Maximize the posterior of a prior plus independent residual blocks.

    Returns the optimum with covariance (H' W H)^{-1} evaluated there. Used
    as the reference solution that the closed-form fusion is checked
    against, and as a batch utility.
    """
    side = prior.side
    x = prior.mean
    n = prior.dof
    prior_info = np.linalg.inv(prior.cov)
    weights = [np.linalg.inv(np.atleast_2d(np.asarray(b.weight))) for b in blocks]
    converged = False
    iterations = 0
    hwh = None
    for iterations in range(1, settings.max_iters + 1):
        eps = ominus(x, prior.mean, side)
        jinv = np.linalg.inv(group_jacobian(prior.descriptor, eps, side))
        hwh = jinv.T @ prior_info @ jinv
        hwe = jinv.T @ (prior_info @ eps)
        for blk, winv in zip(blocks, weights):
            e = np.atleast_1d(blk.evaluate(x))
            h = np.atleast_2d(blk.jacobian(x))
            hwh = hwh + h.T @ winv @ h
            hwe = hwe + h.T @ (winv @ e)
        try:
            delta = -np.linalg.solve(hwh, hwe)
        except np.linalg.LinAlgError as exc:
            raise ValueError("normal equations are singular") from exc
        x = oplus(x, delta, side)
        if np.linalg.norm(delta) < settings.step_tol:
            converged = True
            break
    if not converged:
        log.debug("gauss_newton_map hit max_iters=%d", settings.max_iters)
    cov = np.linalg.inv(hwh)
    return GnResult(Belief(x, cov, side), converged, iterations)
