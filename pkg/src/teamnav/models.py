"""Reusable process, measurement, and inter-robot residual models.

Measurement and residual models operate on composite robot states; each is
configured with the tangent slices of the members it touches and writes
its analytic Jacobian blocks into those columns. Every analytic Jacobian
here is covered by a finite-difference comparison in the test suite.

All models use right perturbations.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .filtering import MeasurementModel, ProcessModel, PseudoModel
from .groups import (
    SE2,
    Composite,
    ManifoldElement,
    Side,
    adjoint,
    compose,
    exp_map,
    group_jacobian,
    inverse,
    log_map,
    se2_parts,
    se23_parts,
    skew,
    vector_element,
)
from .preint import gravity_step, imu_input_jacobian, imu_step_matrix

_S2 = np.array([[0.0, -1.0], [1.0, 0.0]])


# ---------------------------------------------------------------------------
# Products of pose factors: value and per-slot Jacobians
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Factor:
    """One term of a pose product; ``slot`` names where its state lives."""

    slot: tuple[str, int]  # ("i" | "j", member index)
    inverted: bool = False


def product_log(
    elements: Sequence[ManifoldElement], factors: Sequence[Factor]
) -> tuple[np.ndarray, dict[tuple[str, int], np.ndarray]]:
    """Log of a product of (possibly inverted) pose factors plus the
    right-perturbation Jacobian contribution of every slot.

    Perturbing a forward factor X -> X Exp(d) inserts Exp(d) before the
    remaining suffix S, giving Jr^{-1}(xi) Ad(S^{-1}) d; an inverted factor
    contributes -Jr^{-1}(xi) Ad(S^{-1} X) d.
    """
    desc = elements[0].descriptor
    eff = [inverse(e) if f.inverted else e for e, f in zip(elements, factors)]
    n = len(eff)
    prod = eff[0]
    for e in eff[1:]:
        prod = compose(prod, e)
    xi = log_map(prod)
    jr_inv = np.linalg.inv(group_jacobian(desc, xi, Side.RIGHT))
    contribs: dict[tuple[str, int], np.ndarray] = {}
    suffix = None
    for m in range(n - 1, -1, -1):
        if suffix is None:
            ad_suffix_inv = np.eye(desc.dof)
            suffix_inv = None
        else:
            suffix_inv = inverse(suffix)
            ad_suffix_inv = adjoint(suffix_inv)
        if factors[m].inverted:
            inner = (
                adjoint(compose(suffix_inv, inverse(eff[m])))
                if suffix_inv is not None
                else adjoint(inverse(eff[m]))
            )
            block = -jr_inv @ inner
        else:
            block = jr_inv @ ad_suffix_inv
        key = factors[m].slot
        contribs[key] = contribs.get(key, 0) + block
        suffix = eff[m] if suffix is None else compose(eff[m], suffix)
    return xi, contribs


# ---------------------------------------------------------------------------
# Composite state layout
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class StateLayout:
    """Named members of a robot's composite state with tangent slices."""

    names: tuple[str, ...]
    slices: tuple[slice, ...]
    descriptor: "Composite"

    @staticmethod
    def build(named_members) -> "StateLayout":
        from .groups import Composite

        names = tuple(n for n, _ in named_members)
        descs = tuple(d for _, d in named_members)
        desc = Composite(descs)
        return StateLayout(names, tuple(desc.member_slices()), desc)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def slice_of(self, name: str) -> slice:
        return self.slices[self.index(name)]

    def member(self, state: ManifoldElement, name: str) -> ManifoldElement:
        return state.parts[self.index(name)]

    @property
    def dof(self) -> int:
        return self.descriptor.dof


# ---------------------------------------------------------------------------
# Simple process models
# ---------------------------------------------------------------------------


class RandomWalkProcess(ProcessModel):
    """x_k = x_{k-1} + w over a flat state."""

    def __init__(self, q_step: np.ndarray, dt: float):
        self.noise_cov = np.atleast_2d(np.asarray(q_step, dtype=float))
        self.dt = dt
        self._n = self.noise_cov.shape[0]

    def evaluate(self, x, u, w):
        return vector_element(np.asarray(x.value) + np.asarray(w))

    def jac_state(self, x, u):
        return np.eye(self._n)

    def jac_noise(self, x, u):
        return np.eye(self._n)


class WheelOdometryProcess(ProcessModel):
    """Planar pose advanced by body-frame twist: T_k = T_{k-1} Exp(dt (u+w))."""

    def __init__(self, dt: float, q_step: np.ndarray):
        self.dt = dt
        self.noise_cov = np.asarray(q_step, dtype=float)

    def evaluate(self, x, u, w):
        return compose(x, exp_map(SE2, self.dt * (np.asarray(u) + np.asarray(w))))

    def jac_state(self, x, u):
        return adjoint(inverse(exp_map(SE2, self.dt * np.asarray(u))))

    def jac_noise(self, x, u):
        return self.dt * group_jacobian(SE2, self.dt * np.asarray(u), Side.RIGHT)


class ImuPoseProcess(ProcessModel):
    """Extended pose driven by unbiased IMU input (gyro, accel)."""

    def __init__(self, dt: float, q_step6: np.ndarray, gravity):
        self.dt = dt
        self.noise_cov = np.asarray(q_step6, dtype=float)
        self.g_step = gravity_step(gravity, dt)

    def evaluate(self, x, u, w):
        u = np.asarray(u) + np.asarray(w)
        return compose(compose(self.g_step, x), imu_step_matrix(u[:3], u[3:], self.dt))

    def jac_state(self, x, u):
        u = np.asarray(u)
        return adjoint(inverse(imu_step_matrix(u[:3], u[3:], self.dt)))

    def jac_noise(self, x, u):
        u = np.asarray(u)
        return imu_input_jacobian(u[:3], u[3:], self.dt)


# ---------------------------------------------------------------------------
# Measurement models over composite states
# ---------------------------------------------------------------------------


def flat_vector(state: ManifoldElement) -> np.ndarray:
    """Stack a flat or composite-of-flat state into one coordinate vector."""
    if isinstance(state.descriptor, Composite):
        return np.concatenate([np.asarray(p.value) for p in state.parts])
    return np.asarray(state.value)


class LinearStateMeasurement(MeasurementModel):
    def __init__(self, g_row: np.ndarray, r: np.ndarray):
        self.g_row = np.atleast_2d(np.asarray(g_row, dtype=float))
        self.noise_cov = np.atleast_2d(np.asarray(r, dtype=float))

    def evaluate(self, x):
        return self.g_row @ flat_vector(x)

    def jac(self, x):
        return self.g_row


class LandmarkRelPosition2d(MeasurementModel):
    """Stacked body-frame positions of known landmarks seen from one pose."""

    def __init__(self, layout: StateLayout, member: str, landmarks, std: float):
        self.layout = layout
        self.member = member
        self.landmarks = np.atleast_2d(np.asarray(landmarks, dtype=float))
        self.noise_cov = std**2 * np.eye(2 * len(self.landmarks))

    def evaluate(self, x):
        c, r = se2_parts(self.layout.member(x, self.member))
        return np.concatenate([c.T @ (lm - r) for lm in self.landmarks])

    def jac(self, x):
        pose = self.layout.member(x, self.member)
        c, r = se2_parts(pose)
        out = np.zeros((2 * len(self.landmarks), self.layout.dof))
        s = self.layout.slice_of(self.member)
        for k, lm in enumerate(self.landmarks):
            pred = c.T @ (lm - r)
            out[2 * k : 2 * k + 2, s.start] = -_S2 @ pred
            out[2 * k : 2 * k + 2, s.start + 1 : s.start + 3] = -np.eye(2)
        return out


class InstanceRange2d(MeasurementModel):
    """Distance between two pose instances carried in the same state."""

    def __init__(self, layout: StateLayout, member_a: str, member_b: str, std: float):
        self.layout = layout
        self.member_a = member_a
        self.member_b = member_b
        self.noise_cov = np.array([[std**2]])

    def _geometry(self, x):
        ca, ra = se2_parts(self.layout.member(x, self.member_a))
        cb, rb = se2_parts(self.layout.member(x, self.member_b))
        d = rb - ra
        dist = float(np.linalg.norm(d))
        return ca, cb, d, dist

    def evaluate(self, x):
        return np.array([self._geometry(x)[3]])

    def jac(self, x):
        ca, cb, d, dist = self._geometry(x)
        dhat = d / dist
        out = np.zeros((1, self.layout.dof))
        sa = self.layout.slice_of(self.member_a)
        sb = self.layout.slice_of(self.member_b)
        out[0, sa.start + 1 : sa.start + 3] = -dhat @ ca
        out[0, sb.start + 1 : sb.start + 3] = dhat @ cb
        return out


class AbsolutePosition3d(MeasurementModel):
    def __init__(self, layout: StateLayout, member: str, std: float):
        self.layout = layout
        self.member = member
        self.noise_cov = std**2 * np.eye(3)

    def evaluate(self, x):
        _, _, r, _ = se23_parts(self.layout.member(x, self.member))
        return r

    def jac(self, x):
        c, _, _, _ = se23_parts(self.layout.member(x, self.member))
        out = np.zeros((3, self.layout.dof))
        s = self.layout.slice_of(self.member)
        out[:, s.start + 6 : s.start + 9] = c
        return out


class Height(MeasurementModel):
    def __init__(self, layout: StateLayout, member: str, std: float):
        self.layout = layout
        self.member = member
        self.noise_cov = np.array([[std**2]])

    def evaluate(self, x):
        _, _, r, _ = se23_parts(self.layout.member(x, self.member))
        return np.array([r[2]])

    def jac(self, x):
        c, _, _, _ = se23_parts(self.layout.member(x, self.member))
        out = np.zeros((1, self.layout.dof))
        s = self.layout.slice_of(self.member)
        out[0, s.start + 6 : s.start + 9] = c[2, :]
        return out


class Magnetometer(MeasurementModel):
    """Body-frame resolution of a fixed world-frame field direction."""

    def __init__(self, layout: StateLayout, member: str, world_field, std: float):
        self.layout = layout
        self.member = member
        self.field = np.asarray(world_field, dtype=float)
        self.noise_cov = std**2 * np.eye(3)

    def evaluate(self, x):
        c, _, _, _ = se23_parts(self.layout.member(x, self.member))
        return c.T @ self.field

    def jac(self, x):
        c, _, _, _ = se23_parts(self.layout.member(x, self.member))
        out = np.zeros((3, self.layout.dof))
        s = self.layout.slice_of(self.member)
        out[:, s.start : s.start + 3] = skew(c.T @ self.field)
        return out


class RelativePoseTagRange(MeasurementModel):
    """Range between an own antenna and a neighbor antenna, both offset by
    body-frame lever arms; depends only on the relative pose member."""

    def __init__(self, layout: StateLayout, member: str, tag_self, tag_other, std: float):
        self.layout = layout
        self.member = member
        self.tag_self = np.asarray(tag_self, dtype=float)
        self.tag_other = np.asarray(tag_other, dtype=float)
        self.noise_cov = np.array([[std**2]])

    def _geometry(self, x):
        c, _, r, _ = se23_parts(self.layout.member(x, self.member))
        d = c @ self.tag_other + r - self.tag_self
        return c, d, float(np.linalg.norm(d))

    def evaluate(self, x):
        return np.array([self._geometry(x)[2]])

    def jac(self, x):
        c, d, dist = self._geometry(x)
        dhat = d / dist
        out = np.zeros((1, self.layout.dof))
        s = self.layout.slice_of(self.member)
        out[0, s.start : s.start + 3] = -dhat @ c @ skew(self.tag_other)
        out[0, s.start + 6 : s.start + 9] = dhat @ c
        return out


class AbsoluteTagRange(MeasurementModel):
    """Range between lever-arm antennas of two absolute poses; used by the
    joint reference filter which carries no relative-pose states."""

    def __init__(self, layout, member_a, member_b, tag_a, tag_b, std):
        self.layout = layout
        self.member_a = member_a
        self.member_b = member_b
        self.tag_a = np.asarray(tag_a, dtype=float)
        self.tag_b = np.asarray(tag_b, dtype=float)
        self.noise_cov = np.array([[std**2]])

    def _geometry(self, x):
        ca, _, ra, _ = se23_parts(self.layout.member(x, self.member_a))
        cb, _, rb, _ = se23_parts(self.layout.member(x, self.member_b))
        d = (rb + cb @ self.tag_b) - (ra + ca @ self.tag_a)
        return ca, cb, d, float(np.linalg.norm(d))

    def evaluate(self, x):
        return np.array([self._geometry(x)[3]])

    def jac(self, x):
        ca, cb, d, dist = self._geometry(x)
        dhat = d / dist
        out = np.zeros((1, self.layout.dof))
        sa = self.layout.slice_of(self.member_a)
        sb = self.layout.slice_of(self.member_b)
        out[0, sa.start : sa.start + 3] = dhat @ ca @ skew(self.tag_a)
        out[0, sa.start + 6 : sa.start + 9] = -dhat @ ca
        out[0, sb.start : sb.start + 3] = -dhat @ cb @ skew(self.tag_b)
        out[0, sb.start + 6 : sb.start + 9] = dhat @ cb
        return out


# ---------------------------------------------------------------------------
# Inter-robot residual models
# ---------------------------------------------------------------------------


class SubtractionPseudo(PseudoModel):
    """Full state overlap on a flat state: c = x_i - x_j."""

    def __init__(self, n: int, psi: np.ndarray):
        self.psi = np.asarray(psi, dtype=float)
        self._eye = np.eye(n)

    def evaluate(self, xi, xj):
        return flat_vector(xi) - flat_vector(xj)

    def jac_i(self, xi, xj):
        return self._eye

    def jac_j(self, xi, xj):
        return -self._eye


class ProductPseudo(PseudoModel):
    """Stacked Log residuals of pose-factor products plus optional flat
    difference rows; covers both shipped nonlinear scenarios.

    ``pose_rows``: list of factor products (each a list of Factor) whose
    Log must vanish when the two robots' instances agree.
    ``diff_rows``: list of (member_i, member_j) flat members subtracted.
    """

    def __init__(
        self,
        layout_i: StateLayout,
        layout_j: StateLayout,
        pose_rows: list[list[Factor]],
        diff_rows: list[tuple[str, str]],
        psi: np.ndarray,
        pose_dof: int,
    ):
        self.layout_i = layout_i
        self.layout_j = layout_j
        self.pose_rows = pose_rows
        self.diff_rows = diff_rows
        self.psi = np.asarray(psi, dtype=float)
        self.pose_dof = pose_dof

    def _elements(self, factors, xi, xj):
        out = []
        for f in factors:
            side, idx = f.slot
            state = xi if side == "i" else xj
            out.append(state.parts[idx])
        return out

    def _n_rows(self, xi):
        return self.pose_dof * len(self.pose_rows) + sum(
            self.layout_i.member(xi, mi).descriptor.dof for mi, _ in self.diff_rows
        )

    def evaluate_with_jacobians(self, xi, xj):
        n_rows = self._n_rows(xi)
        value = np.zeros(n_rows)
        jac_i = np.zeros((n_rows, self.layout_i.dof))
        jac_j = np.zeros((n_rows, self.layout_j.dof))
        row = 0
        for factors in self.pose_rows:
            xi_row, contribs = product_log(self._elements(factors, xi, xj), factors)
            value[row : row + self.pose_dof] = xi_row
            for (side, idx), block in contribs.items():
                if side == "i":
                    jac_i[row : row + self.pose_dof, self.layout_i.slices[idx]] += block
                else:
                    jac_j[row : row + self.pose_dof, self.layout_j.slices[idx]] += block
            row += self.pose_dof
        for mi, mj in self.diff_rows:
            si = self.layout_i.slice_of(mi)
            sj = self.layout_j.slice_of(mj)
            dof = si.stop - si.start
            a = np.asarray(self.layout_i.member(xi, mi).value)
            b = np.asarray(self.layout_j.member(xj, mj).value)
            value[row : row + dof] = a - b
            jac_i[row : row + dof, si] = np.eye(dof)
            jac_j[row : row + dof, sj] = -np.eye(dof)
            row += dof
        return value, jac_i, jac_j

    def evaluate(self, xi, xj):
        return self.evaluate_with_jacobians(xi, xj)[0]

    def jac_i(self, xi, xj):
        return self.evaluate_with_jacobians(xi, xj)[1]

    def jac_j(self, xi, xj):
        return self.evaluate_with_jacobians(xi, xj)[2]
