"""Relative motion increments: state-independent compressions of an input
window that allow one-shot propagation over the window.

Three kinds are supported: linear models, SE(2) wheel odometry, and SE2(3)
IMU kinematics. Each accumulates a first-order noise covariance alongside
the mean, and the IMU kind additionally carries a bias sensitivity so a
receiver can correct a raw increment with its own bias estimate.

IMU covariance ordering is (attitude, velocity, position, gyro bias,
accel bias); the two bias blocks are carried for the wire format and the
receiving filter but are not driven by the increment recursion, since bias
random walk enters through the filter's process model instead.
"""

from __future__ import annotations

import dataclasses
import enum
import struct

import numpy as np

from .belief import Belief
from .groups import (
    SE23,
    ManifoldElement,
    Side,
    adjoint,
    compose,
    group_jacobian,
    inverse,
    oplus,
    phi1,
    se23_element,
    skew,
    so3_exp,
    so3_left_jacobian,
)

_SMALL_ANGLE = 1e-4


class SpanMismatch(ValueError):
    """An increment was applied at a step it does not start from."""


class RmiPlacement(enum.Enum):
    """Whether an increment propagates the owner's state or a neighbor block."""

    OWN = "own"
    NEIGHBOR = "neighbor"


# ---------------------------------------------------------------------------
# IMU step kinematics
# ---------------------------------------------------------------------------


def n_matrix(phi: np.ndarray) -> np.ndarray:
    """Double-integration rotation factor 2 sum phi^^n / (n+2)!."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    s = skew(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 / 3.0 - t2 / 60.0 + t2 * t2 / 2520.0
        b = 1.0 / 12.0 - t2 / 360.0 + t2 * t2 / 20160.0
    else:
        a = 2.0 * (theta - np.sin(theta)) / theta**3
        b = 2.0 * (np.cos(theta) - 1.0 + theta * theta / 2.0) / theta**4
    return np.eye(3) + a * s + b * (s @ s)


def imu_step_matrix(omega, accel, dt: float) -> ManifoldElement:
    """One-step input matrix of the discrete IMU kinematics (clock entry dt)."""
    omega = np.asarray(omega, dtype=float)
    accel = np.asarray(accel, dtype=float)
    theta = dt * omega
    c = so3_exp(theta)
    v = dt * (so3_left_jacobian(theta) @ accel)
    r = (dt * dt / 2.0) * (n_matrix(theta) @ accel)
    return se23_element(c, v, r, tau=dt)


def gravity_step(gravity, dt: float) -> ManifoldElement:
    """Gravity propagation factor over dt (clock entry -dt)."""
    g = np.asarray(gravity, dtype=float)
    out = np.eye(5)
    out[:3, 3] = dt * g
    out[:3, 4] = -(dt * dt / 2.0) * g
    out[3, 4] = -dt
    return ManifoldElement(SE23, out)


def _ad10(x: np.ndarray) -> np.ndarray:
    # little adjoint of the clock-extended algebra, coordinates
    # (attitude, velocity, position, clock)
    phi, nu, rho, tau = x[0:3], x[3:6], x[6:9], float(x[9])
    out = np.zeros((10, 10))
    out[0:3, 0:3] = skew(phi)
    out[3:6, 0:3] = skew(nu)
    out[3:6, 3:6] = skew(phi)
    out[6:9, 0:3] = skew(rho)
    out[6:9, 3:6] = -tau * np.eye(3)
    out[6:9, 6:9] = skew(phi)
    out[6:9, 9] = nu
    return out


def imu_input_jacobian(omega, accel, dt: float) -> np.ndarray:
    """Right-perturbation derivative of the step matrix w.r.t. (omega, accel).

    The step matrix is the exponential of dt times the algebra element
    (omega, accel, 0, 1), so the derivative is dt times the right group
    Jacobian of the clock-extended algebra, restricted to the input slots.
    """
    lam = np.concatenate([np.asarray(omega, float), np.asarray(accel, float),
                          np.zeros(3), [1.0]])
    jr = phi1(-_ad10(dt * lam))
    return dt * jr[0:9, 0:6]


# ---------------------------------------------------------------------------
# Increment types
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class LinearRmi:
    f_pq: np.ndarray
    dx_pq: np.ndarray
    q_pq: np.ndarray
    span: tuple[int, int]

    @staticmethod
    def identity(dim: int, at_step: int = 0) -> "LinearRmi":
        return LinearRmi(
            np.eye(dim), np.zeros(dim), np.zeros((dim, dim)), (at_step, at_step)
        )


@dataclasses.dataclass(frozen=True)
class WheelRmi:
    dt_pq: ManifoldElement
    q_pq: np.ndarray
    span: tuple[int, int]

    @staticmethod
    def identity(at_step: int = 0) -> "WheelRmi":
        from .groups import SE2, identity as group_identity

        return WheelRmi(group_identity(SE2), np.zeros((3, 3)), (at_step, at_step))


@dataclasses.dataclass(frozen=True)
class ImuRmi:
    du_pq: ManifoldElement
    q_pq: np.ndarray  # 15x15, ordering (att, vel, pos, gyro bias, accel bias)
    b_pq: np.ndarray  # 9x6 bias sensitivity of the mean
    span: tuple[int, int]
    dt_total: float

    @staticmethod
    def identity(at_step: int = 0) -> "ImuRmi":
        from .groups import identity as group_identity

        return ImuRmi(
            group_identity(SE23),
            np.zeros((15, 15)),
            np.zeros((9, 6)),
            (at_step, at_step),
            0.0,
        )

    def delta_g(self, gravity) -> ManifoldElement:
        return gravity_step(gravity, self.dt_total)


Rmi = LinearRmi | WheelRmi | ImuRmi


@dataclasses.dataclass(frozen=True)
class ImuInput:
    gyro: np.ndarray
    accel: np.ndarray
    dt: float

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float))


# ---------------------------------------------------------------------------
# Increment recursions
# ---------------------------------------------------------------------------


def increment_linear(rmi: LinearRmi, f_k, l_k, u_k, q_k) -> LinearRmi:
    f_k = np.atleast_2d(np.asarray(f_k, float))
    l_k = np.atleast_2d(np.asarray(l_k, float))
    u_k = np.atleast_1d(np.asarray(u_k, float))
    q_k = np.atleast_2d(np.asarray(q_k, float))
    return LinearRmi(
        f_pq=f_k @ rmi.f_pq,
        dx_pq=f_k @ rmi.dx_pq + l_k @ u_k,
        q_pq=f_k @ rmi.q_pq @ f_k.T + l_k @ q_k @ l_k.T,
        span=(rmi.span[0], rmi.span[1] + 1),
    )


def wheel_step_terms(u_k, dt: float):
    from .groups import SE2, exp_map

    u_k = np.asarray(u_k, dtype=float)
    step = exp_map(SE2, dt * u_k)
    f = adjoint(inverse(step))
    l = dt * group_jacobian(SE2, dt * u_k, Side.RIGHT)
    return step, f, l


def increment_wheel(rmi: WheelRmi, u_k, q_k, dt: float, terms=None) -> WheelRmi:
    step, f, l = terms if terms is not None else wheel_step_terms(u_k, dt)
    return WheelRmi(
        dt_pq=compose(rmi.dt_pq, step),
        q_pq=f @ rmi.q_pq @ f.T + l @ np.asarray(q_k, float) @ l.T,
        span=(rmi.span[0], rmi.span[1] + 1),
    )


def imu_step_terms(omega, accel, dt: float):
    """Step matrix with its state and input transports, reusable across
    several accumulators fed by the same input."""
    step = imu_step_matrix(omega, accel, dt)
    f = adjoint(inverse(step))
    l = imu_input_jacobian(omega, accel, dt)
    return step, f, l


def increment_imu(rmi: ImuRmi, u: ImuInput, q_k, terms=None) -> ImuRmi:
    """Accumulate one IMU step: mean by right-composition, covariance and
    bias sensitivity by first-order transport through the new step."""
    step, f, l = terms if terms is not None else imu_step_terms(u.gyro, u.accel, u.dt)
    q_k = np.asarray(q_k, dtype=float)
    q = rmi.q_pq.copy()
    q[:9, :9] = f @ rmi.q_pq[:9, :9] @ f.T + l @ q_k @ l.T
    return ImuRmi(
        du_pq=compose(rmi.du_pq, step),
        q_pq=q,
        b_pq=f @ rmi.b_pq - l,
        span=(rmi.span[0], rmi.span[1] + 1),
        dt_total=rmi.dt_total + u.dt,
    )


def correct_bias(rmi: ImuRmi, b) -> ImuRmi:
    """First-order correction of a raw increment for a constant input bias."""
    b = np.asarray(b, dtype=float)
    if b.shape != (6,):
        raise ValueError("bias vector must have 6 entries (gyro, accel)")
    return ImuRmi(
        du_pq=oplus(rmi.du_pq, rmi.b_pq @ b, Side.RIGHT),
        q_pq=rmi.q_pq,
        b_pq=rmi.b_pq,
        span=rmi.span,
        dt_total=rmi.dt_total,
    )


def identity_rmi(kind: str, at_step: int = 0, dim: int | None = None) -> Rmi:
    if kind == "linear":
        if dim is None:
            raise ValueError("linear identity needs the state dimension")
        return LinearRmi.identity(dim, at_step)
    if kind == "wheel":
        return WheelRmi.identity(at_step)
    if kind == "imu":
        return ImuRmi.identity(at_step)
    raise ValueError(f"unknown increment kind {kind!r}")


# ---------------------------------------------------------------------------
# Application to states and beliefs
# ---------------------------------------------------------------------------


def _check_span(rmi: Rmi, at_step: int | None) -> None:
    if at_step is not None and at_step != rmi.span[0]:
        raise SpanMismatch(
            f"state at step {at_step} but increment spans {rmi.span}"
        )


def _apply_mean(mean: ManifoldElement, rmi: Rmi, placement: RmiPlacement, gravity):
    if isinstance(rmi, LinearRmi):
        return ManifoldElement(
            mean.descriptor, rmi.f_pq @ np.asarray(mean.value) + rmi.dx_pq
        )
    if isinstance(rmi, WheelRmi):
        return compose(mean, rmi.dt_pq)
    if placement is RmiPlacement.OWN:
        if gravity is None:
            raise ValueError("own-state IMU application needs the gravity vector")
        return compose(compose(rmi.delta_g(gravity), mean), rmi.du_pq)
    return compose(mean, rmi.du_pq)


def _state_jacobian(rmi: Rmi) -> np.ndarray:
    if isinstance(rmi, LinearRmi):
        return rmi.f_pq
    if isinstance(rmi, WheelRmi):
        return adjoint(inverse(rmi.dt_pq))
    return adjoint(inverse(rmi.du_pq))


def _noise_cov(rmi: Rmi) -> np.ndarray:
    if isinstance(rmi, ImuRmi):
        return rmi.q_pq[:9, :9]
    return rmi.q_pq


def apply_rmi(
    state: Belief | ManifoldElement,
    rmi: Rmi,
    placement: RmiPlacement = RmiPlacement.OWN,
    gravity=None,
    at_step: int | None = None,
):
    """Propagate a state (or belief) across the increment's whole span.

    Equivalent to sequentially processing the raw inputs the increment was
    built from: the group mean exactly, the covariance to first order.
    """
    _check_span(rmi, at_step)
    if isinstance(state, Belief):
        mean = _apply_mean(state.mean, rmi, placement, gravity)
        f = _state_jacobian(rmi)
        cov = f @ state.cov @ f.T + _noise_cov(rmi)
        return Belief(mean, cov, state.side)
    return _apply_mean(state, rmi, placement, gravity)


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<cBII")  # kind, flags, span p, span q


def _tril(m: np.ndarray) -> np.ndarray:
    return m[np.tril_indices(m.shape[0])]


def _from_tril(values: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n))
    out[np.tril_indices(n)] = values
    return out + np.tril(out, -1).T


def serialize_rmi(rmi: Rmi) -> bytes:
    """Fixed-size little-endian encoding; length is independent of span."""
    if isinstance(rmi, LinearRmi):
        n = rmi.dx_pq.shape[0]
        floats = np.concatenate([rmi.f_pq.ravel(), rmi.dx_pq, _tril(rmi.q_pq)])
        head = _HEADER.pack(b"L", n, *rmi.span)
    elif isinstance(rmi, WheelRmi):
        m = np.asarray(rmi.dt_pq.value)
        floats = np.concatenate([m.ravel(), _tril(rmi.q_pq)])
        head = _HEADER.pack(b"W", 0, *rmi.span)
    elif isinstance(rmi, ImuRmi):
        m = np.asarray(rmi.du_pq.value)
        floats = np.concatenate(
            [
                m[:3, :3].ravel(),
                m[:3, 3],
                m[:3, 4],
                [rmi.dt_total],
                _tril(rmi.q_pq),
                rmi.b_pq.ravel(),
            ]
        )
        head = _HEADER.pack(b"I", 1, *rmi.span)
    else:
        raise TypeError(f"not an increment: {rmi!r}")
    return head + struct.pack(f"<{floats.size}d", *floats)


def deserialize_rmi(data: bytes) -> Rmi:
    kind, flag, p, q = _HEADER.unpack_from(data)
    floats = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if kind == b"L":
        n = flag
        f_pq = floats[: n * n].reshape(n, n)
        dx = floats[n * n : n * n + n]
        q_pq = _from_tril(floats[n * n + n :], n)
        return LinearRmi(f_pq, dx, q_pq, (p, q))
    if kind == b"W":
        from .groups import SE2

        m = floats[:9].reshape(3, 3)
        return WheelRmi(ManifoldElement(SE2, m), _from_tril(floats[9:], 3), (p, q))
    if kind == b"I":
        c = floats[:9].reshape(3, 3)
        v = floats[9:12]
        r = floats[12:15]
        dt_total = float(floats[15])
        n_q = 15 * 16 // 2
        q_pq = _from_tril(floats[16 : 16 + n_q], 15)
        b_pq = floats[16 + n_q : 16 + n_q + 54].reshape(9, 6)
        return ImuRmi(se23_element(c, v, r, tau=dt_total), q_pq, b_pq, (p, q), dt_total)
    raise ValueError(f"unknown increment tag {kind!r}")


def raw_input_nbytes(n_steps: int, input_dim: int) -> int:
    """Bytes needed to ship the raw input window instead of an increment."""
    return _HEADER.size + 8 * n_steps * input_dim
