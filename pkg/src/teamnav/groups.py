"""Lie-group layer: vector spaces, SO(3), SE(2), SE2(3), and composites.

Tangent orderings are rotation-first: SE(2) uses (heading, x, y) and
SE2(3) uses (attitude, velocity, position) with three coordinates each.
SE2(3) elements are stored as 5x5 extended-pose matrices and tolerate a
nonzero clock entry in the fourth row, so that partially-propagated
(non-physical) states remain valid group elements; Exp produces elements
with a zero clock entry and Log requires one.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import Callable, Sequence

import numpy as np

# Rotation blocks are re-orthonormalized after this many compositions, or
# earlier if orthonormality drift exceeds _DRIFT_TOL.
_PROJECT_EVERY = 1000
_DRIFT_TOL = 5e-10
_ROT_VALID_TOL = 1e-6
# Log rejects rotations within this margin of pi, where it is ill-defined.
_LOG_ANGLE_MARGIN = 1e-6
# Closed forms switch to series below this rotation angle.
_SMALL_ANGLE = 1e-4


class Side(enum.Enum):
    """Perturbation convention used by oplus/ominus and Jacobians."""

    LEFT = "left"
    RIGHT = "right"


class DescriptorMismatch(ValueError):
    """Two elements from different groups were combined."""


class LogDomainError(ValueError):
    """Log was evaluated outside its injectivity domain."""


# ---------------------------------------------------------------------------
# Group descriptors
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class GroupDescriptor:
    @property
    def dof(self) -> int:
        raise NotImplementedError


@dataclasses.dataclass(frozen=True)
class VectorSpace(GroupDescriptor):
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("vector space dimension must be >= 1")

    @property
    def dof(self) -> int:
        return self.n


@dataclasses.dataclass(frozen=True)
class RotationGroup(GroupDescriptor):
    """SO(3), stored as a 3x3 orthonormal matrix."""

    @property
    def dof(self) -> int:
        return 3


@dataclasses.dataclass(frozen=True)
class PlanarPoseGroup(GroupDescriptor):
    """SE(2), stored as a 3x3 homogeneous matrix."""

    @property
    def dof(self) -> int:
        return 3


@dataclasses.dataclass(frozen=True)
class ExtendedPoseGroup(GroupDescriptor):
    """SE2(3), stored as a 5x5 matrix holding attitude, velocity, position."""

    @property
    def dof(self) -> int:
        return 9


@dataclasses.dataclass(frozen=True)
class Composite(GroupDescriptor):
    members: tuple[GroupDescriptor, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("composite needs at least one member")

    @property
    def dof(self) -> int:
        return sum(m.dof for m in self.members)

    def member_slices(self) -> list[slice]:
        out, start = [], 0
        for m in self.members:
            out.append(slice(start, start + m.dof))
            start += m.dof
        return out


SO3 = RotationGroup()
SE2 = PlanarPoseGroup()
SE23 = ExtendedPoseGroup()


def composite(*members: GroupDescriptor) -> Composite:
    return Composite(tuple(members))


# ---------------------------------------------------------------------------
# Elements and tangents
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ManifoldElement:
    """A point on a declared group, carrying its descriptor.

    ``value`` is a vector for vector spaces, the group matrix for SO(3),
    SE(2) and SE2(3), and a tuple of member elements for composites.
    Instances are immutable; arrays are defensively copied and locked.
    """

    descriptor: GroupDescriptor
    value: np.ndarray | tuple["ManifoldElement", ...]
    gen: int = dataclasses.field(default=0, compare=False)

    def __post_init__(self):
        d = self.descriptor
        if isinstance(d, Composite):
            parts = tuple(self.value)
            if len(parts) != len(d.members):
                raise ValueError("composite member count mismatch")
            for p, md in zip(parts, d.members):
                if p.descriptor != md:
                    raise DescriptorMismatch("composite member descriptor mismatch")
            object.__setattr__(self, "value", parts)
            return
        arr = np.array(self.value, dtype=float)
        if isinstance(d, VectorSpace):
            if arr.shape != (d.n,):
                raise ValueError(f"expected vector of length {d.n}, got {arr.shape}")
        elif isinstance(d, RotationGroup):
            _check_rotation(arr, (3, 3))
        elif isinstance(d, PlanarPoseGroup):
            if arr.shape != (3, 3):
                raise ValueError("SE(2) element must be 3x3")
            _check_rotation(arr[:2, :2], (2, 2))
            if (
                abs(arr[2, 0]) > 1e-9
                or abs(arr[2, 1]) > 1e-9
                or abs(arr[2, 2] - 1.0) > 1e-9
            ):
                raise ValueError("SE(2) bottom row must be [0 0 1]")
        elif isinstance(d, ExtendedPoseGroup):
            if arr.shape != (5, 5):
                raise ValueError("SE2(3) element must be 5x5")
            _check_rotation(arr[:3, :3], (3, 3))
            if (
                float(np.abs(arr[3:, :3]).max()) > 1e-9
                or abs(arr[3, 3] - 1.0) > 1e-9
                or abs(arr[4, 3]) > 1e-9
                or abs(arr[4, 4] - 1.0) > 1e-9
            ):
                raise ValueError("SE2(3) bottom rows malformed")
        else:
            raise TypeError(f"unknown descriptor {d!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "value", arr)

    @property
    def parts(self) -> tuple["ManifoldElement", ...]:
        if not isinstance(self.descriptor, Composite):
            raise TypeError("parts is only defined for composite elements")
        return self.value  # type: ignore[return-value]


@dataclasses.dataclass(frozen=True)
class TangentVector:
    """A tangent vector bundled with its group descriptor."""

    descriptor: GroupDescriptor
    coords: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coords, dtype=float)
        if arr.shape != (self.descriptor.dof,):
            raise ValueError(
                f"tangent length {arr.shape} != dof {self.descriptor.dof}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    def __array__(self, dtype=None):
        return np.asarray(self.coords, dtype=dtype)


def _det_small(c: np.ndarray) -> float:
    if c.shape[0] == 2:
        return c[0, 0] * c[1, 1] - c[0, 1] * c[1, 0]
    return (
        c[0, 0] * (c[1, 1] * c[2, 2] - c[1, 2] * c[2, 1])
        - c[0, 1] * (c[1, 0] * c[2, 2] - c[1, 2] * c[2, 0])
        + c[0, 2] * (c[1, 0] * c[2, 1] - c[1, 1] * c[2, 0])
    )


def _check_rotation(c: np.ndarray, shape: tuple[int, int]) -> None:
    if c.shape != shape:
        raise ValueError(f"rotation block must be {shape}")
    err = float(np.abs(c.T @ c - np.eye(shape[0])).max())
    if err > _ROT_VALID_TOL or _det_small(c) < 0.0:
        raise ValueError(f"rotation block not orthonormal (drift {err:.2e})")


def _coords(xi) -> np.ndarray:
    return np.asarray(xi, dtype=float)


def _wrap(desc: GroupDescriptor, value, gen: int = 0) -> ManifoldElement:
    # Fast path for results of internal operations, which are valid by
    # construction; the public constructor always validates.
    el = object.__new__(ManifoldElement)
    object.__setattr__(el, "descriptor", desc)
    object.__setattr__(el, "value", value)
    object.__setattr__(el, "gen", gen)
    return el


# ---------------------------------------------------------------------------
# SO(3) closed forms
# ---------------------------------------------------------------------------


_I3 = np.eye(3)
_I3.setflags(write=False)


def skew(v: Sequence[float]) -> np.ndarray:
    out = np.zeros((3, 3))
    out[0, 1] = -v[2]
    out[0, 2] = v[1]
    out[1, 0] = v[2]
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    return out


def unskew(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _exp_coeffs(theta: float) -> tuple[float, float]:
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    return math.sin(theta) / theta, (1.0 - math.cos(theta)) / (theta * theta)


def _left_jac_coeffs(theta: float) -> tuple[float, float]:
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    return (
        (1.0 - math.cos(theta)) / (theta * theta),
        (theta - math.sin(theta)) / (theta**3),
    )


def so3_exp(phi: np.ndarray) -> np.ndarray:
    phi = _coords(phi)
    theta = math.sqrt(float(phi @ phi))
    s = skew(phi)
    a, b = _exp_coeffs(theta)
    return _I3 + a * s + b * (s @ s)


def so3_log(c: np.ndarray) -> np.ndarray:
    # theta from both the symmetric and antisymmetric parts: well conditioned
    # away from pi, where we refuse to evaluate.
    w = unskew(c - c.T) / 2.0
    sin_theta = float(np.linalg.norm(w))
    cos_theta = (float(np.trace(c)) - 1.0) / 2.0
    theta = math.atan2(sin_theta, cos_theta)
    if theta >= math.pi - _LOG_ANGLE_MARGIN:
        raise LogDomainError(f"rotation angle {theta:.6f} too close to pi")
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        scale = 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
    else:
        scale = theta / sin_theta
    return scale * w


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = _coords(phi)
    theta = math.sqrt(float(phi @ phi))
    s = skew(phi)
    a, b = _left_jac_coeffs(theta)
    return _I3 + a * s + b * (s @ s)


def phi1(a: np.ndarray) -> np.ndarray:
    """Evaluate sum_{n>=0} a^n / (n+1)!, i.e. (exp(a) - 1) a^{-1}.

    Uses a Taylor series after halving a until its norm is small, then
    doubles back with phi1(2a) = phi1(a) (exp(a) + 1) / 2.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    norm = float(np.linalg.norm(a, ord=np.inf))
    squarings = max(0, int(math.ceil(math.log2(norm / 0.25))) if norm > 0.25 else 0)
    a_small = a / (2.0 ** squarings)
    term = np.eye(n)
    out = np.eye(n)
    k = 1
    while True:
        term = term @ a_small / (k + 1)
        out = out + term
        k += 1
        if float(np.abs(term).max()) < 1e-18 or k > 40:
            break
    e = np.eye(n) + a_small @ out  # exp(a_small)
    for _ in range(squarings):
        out = out @ (e + np.eye(n)) / 2.0
        e = e @ e
    return out


# ---------------------------------------------------------------------------
# Per-group internals
# ---------------------------------------------------------------------------

_S2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _se2_exp(xi: np.ndarray) -> np.ndarray:
    phi, rho = float(xi[0]), xi[1:3]
    if abs(phi) < _SMALL_ANGLE:
        p2 = phi * phi
        a = 1.0 - p2 / 6.0 + p2 * p2 / 120.0
        b = phi / 2.0 - phi * p2 / 24.0
    else:
        a = math.sin(phi) / phi
        b = (1.0 - math.cos(phi)) / phi
    v = a * np.eye(2) + b * _S2
    out = np.eye(3)
    out[:2, :2] = np.array(
        [[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]]
    )
    out[:2, 2] = v @ rho
    return out


def _se2_log(t: np.ndarray) -> np.ndarray:
    phi = math.atan2(t[1, 0], t[0, 0])
    if abs(phi) >= math.pi - _LOG_ANGLE_MARGIN:
        raise LogDomainError(f"heading {phi:.6f} too close to pi")
    if abs(phi) < _SMALL_ANGLE:
        p2 = phi * phi
        a = 1.0 - p2 / 6.0 + p2 * p2 / 120.0
        b = phi / 2.0 - phi * p2 / 24.0
    else:
        a = math.sin(phi) / phi
        b = (1.0 - math.cos(phi)) / phi
    v = a * np.eye(2) + b * _S2
    rho = np.linalg.solve(v, t[:2, 2])
    return np.array([phi, rho[0], rho[1]])


def _se2_inverse(t: np.ndarray) -> np.ndarray:
    out = np.eye(3)
    c = t[:2, :2]
    out[:2, :2] = c.T
    out[:2, 2] = -c.T @ t[:2, 2]
    return out


def _se2_adjoint(t: np.ndarray) -> np.ndarray:
    out = np.eye(3)
    out[1:3, 1:3] = t[:2, :2]
    out[1:3, 0] = -_S2 @ t[:2, 2]
    return out


def _se2_ad(xi: np.ndarray) -> np.ndarray:
    phi, rho = float(xi[0]), xi[1:3]
    out = np.zeros((3, 3))
    out[1:3, 0] = -_S2 @ rho
    out[1:3, 1:3] = phi * _S2
    return out


def _se23_from_parts(c, v, r, tau=0.0) -> np.ndarray:
    out = np.eye(5)
    out[:3, :3] = c
    out[:3, 3] = v
    out[:3, 4] = r
    out[3, 4] = tau
    return out


def _se23_exp(xi: np.ndarray) -> np.ndarray:
    phi, nu, rho = xi[0:3], xi[3:6], xi[6:9]
    jl = so3_left_jacobian(phi)
    return _se23_from_parts(so3_exp(phi), jl @ nu, jl @ rho)


def _se23_log(t: np.ndarray) -> np.ndarray:
    if abs(t[3, 4]) > 1e-9:
        raise LogDomainError("Log undefined for a nonzero clock entry")
    phi = so3_log(t[:3, :3])
    jl = so3_left_jacobian(phi)
    nu = np.linalg.solve(jl, t[:3, 3])
    rho = np.linalg.solve(jl, t[:3, 4])
    return np.concatenate([phi, nu, rho])


def _se23_inverse(t: np.ndarray) -> np.ndarray:
    c = t[:3, :3]
    v = t[:3, 3]
    r = t[:3, 4]
    tau = t[3, 4]
    return _se23_from_parts(c.T, -c.T @ v, c.T @ (v * tau - r), -tau)


def _se23_adjoint(t: np.ndarray) -> np.ndarray:
    c = t[:3, :3]
    v = t[:3, 3]
    r = t[:3, 4]
    tau = t[3, 4]
    out = np.zeros((9, 9))
    out[0:3, 0:3] = c
    out[3:6, 0:3] = skew(v) @ c
    out[3:6, 3:6] = c
    out[6:9, 0:3] = skew(r - v * tau) @ c
    out[6:9, 3:6] = -tau * c
    out[6:9, 6:9] = c
    return out


def _se23_ad(xi: np.ndarray) -> np.ndarray:
    phi, nu, rho = xi[0:3], xi[3:6], xi[6:9]
    out = np.zeros((9, 9))
    out[0:3, 0:3] = skew(phi)
    out[3:6, 0:3] = skew(nu)
    out[3:6, 3:6] = skew(phi)
    out[6:9, 0:3] = skew(rho)
    out[6:9, 6:9] = skew(phi)
    return out


def _project_rotation(c: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(c)
    out = u @ vt
    if np.linalg.det(out) < 0.0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


def _maybe_project(raw: np.ndarray, gen: int, rot: slice) -> tuple[np.ndarray, int]:
    block = raw[rot, rot]
    drift = float(np.abs(block.T @ block - np.eye(block.shape[0])).max())
    if gen >= _PROJECT_EVERY or drift > _DRIFT_TOL:
        raw = raw.copy()
        raw[rot, rot] = _project_rotation(block)
        gen = 0
    return raw, gen


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _require_same(a: GroupDescriptor, b: GroupDescriptor) -> None:
    if a != b:
        raise DescriptorMismatch(f"{a!r} vs {b!r}")


def identity(desc: GroupDescriptor) -> ManifoldElement:
    if isinstance(desc, VectorSpace):
        return ManifoldElement(desc, np.zeros(desc.n))
    if isinstance(desc, RotationGroup):
        return ManifoldElement(desc, np.eye(3))
    if isinstance(desc, PlanarPoseGroup):
        return ManifoldElement(desc, np.eye(3))
    if isinstance(desc, ExtendedPoseGroup):
        return ManifoldElement(desc, np.eye(5))
    if isinstance(desc, Composite):
        return ManifoldElement(desc, tuple(identity(m) for m in desc.members))
    raise TypeError(f"unknown descriptor {desc!r}")


def compose(a: ManifoldElement, b: ManifoldElement) -> ManifoldElement:
    _require_same(a.descriptor, b.descriptor)
    d = a.descriptor
    if isinstance(d, VectorSpace):
        return _wrap(d, a.value + b.value)
    if isinstance(d, Composite):
        return _wrap(d, tuple(compose(x, y) for x, y in zip(a.parts, b.parts)))
    raw = np.asarray(a.value) @ np.asarray(b.value)
    gen = a.gen + b.gen + 1
    rot = slice(0, 3) if not isinstance(d, PlanarPoseGroup) else slice(0, 2)
    raw, gen = _maybe_project(raw, gen, rot)
    return _wrap(d, raw, gen=gen)


def inverse(a: ManifoldElement) -> ManifoldElement:
    d = a.descriptor
    if isinstance(d, VectorSpace):
        return _wrap(d, -np.asarray(a.value))
    if isinstance(d, RotationGroup):
        return _wrap(d, np.asarray(a.value).T.copy(), gen=a.gen)
    if isinstance(d, PlanarPoseGroup):
        return _wrap(d, _se2_inverse(np.asarray(a.value)), gen=a.gen)
    if isinstance(d, ExtendedPoseGroup):
        return _wrap(d, _se23_inverse(np.asarray(a.value)), gen=a.gen)
    return _wrap(d, tuple(inverse(p) for p in a.parts))


def exp_map(desc: GroupDescriptor, xi) -> ManifoldElement:
    xi = _coords(xi)
    if xi.shape != (desc.dof,):
        raise ValueError(f"tangent length {xi.shape} != dof {desc.dof}")
    if isinstance(desc, VectorSpace):
        return _wrap(desc, xi.copy())
    if isinstance(desc, RotationGroup):
        return _wrap(desc, so3_exp(xi))
    if isinstance(desc, PlanarPoseGroup):
        return _wrap(desc, _se2_exp(xi))
    if isinstance(desc, ExtendedPoseGroup):
        return _wrap(desc, _se23_exp(xi))
    if isinstance(desc, Composite):
        parts = tuple(
            exp_map(m, xi[s]) for m, s in zip(desc.members, desc.member_slices())
        )
        return _wrap(desc, parts)
    raise TypeError(f"unknown descriptor {desc!r}")


def log_map(a: ManifoldElement) -> np.ndarray:
    d = a.descriptor
    if isinstance(d, VectorSpace):
        return np.array(a.value)
    if isinstance(d, RotationGroup):
        return so3_log(np.asarray(a.value))
    if isinstance(d, PlanarPoseGroup):
        return _se2_log(np.asarray(a.value))
    if isinstance(d, ExtendedPoseGroup):
        return _se23_log(np.asarray(a.value))
    return np.concatenate([log_map(p) for p in a.parts])


def adjoint(a: ManifoldElement) -> np.ndarray:
    d = a.descriptor
    if isinstance(d, VectorSpace):
        return np.eye(d.n)
    if isinstance(d, RotationGroup):
        return np.array(a.value)
    if isinstance(d, PlanarPoseGroup):
        return _se2_adjoint(np.asarray(a.value))
    if isinstance(d, ExtendedPoseGroup):
        return _se23_adjoint(np.asarray(a.value))
    out = np.zeros((d.dof, d.dof))
    for p, s in zip(a.parts, d.member_slices()):
        out[s, s] = adjoint(p)
    return out


def group_jacobian(desc: GroupDescriptor, xi, side: Side = Side.RIGHT) -> np.ndarray:
    """Derivative of Exp at xi under the declared perturbation side."""
    xi = _coords(xi)
    if isinstance(desc, VectorSpace):
        return np.eye(desc.n)
    if isinstance(desc, Composite):
        out = np.zeros((desc.dof, desc.dof))
        for m, s in zip(desc.members, desc.member_slices()):
            out[s, s] = group_jacobian(m, xi[s], side)
        return out
    if side is Side.RIGHT:
        xi = -xi
    if isinstance(desc, RotationGroup):
        return so3_left_jacobian(xi)
    if isinstance(desc, PlanarPoseGroup):
        return phi1(_se2_ad(xi))
    if isinstance(desc, ExtendedPoseGroup):
        return phi1(_se23_ad(xi))
    raise TypeError(f"unknown descriptor {desc!r}")


def oplus(a: ManifoldElement, dx, side: Side = Side.RIGHT) -> ManifoldElement:
    step = exp_map(a.descriptor, _coords(dx))
    if side is Side.RIGHT:
        return compose(a, step)
    return compose(step, a)


def ominus(a: ManifoldElement, b: ManifoldElement, side: Side = Side.RIGHT) -> np.ndarray:
    _require_same(a.descriptor, b.descriptor)
    if side is Side.RIGHT:
        return log_map(compose(inverse(b), a))
    return log_map(compose(a, inverse(b)))


def numerical_jacobian(
    fn: Callable[[ManifoldElement], ManifoldElement],
    at: ManifoldElement,
    side: Side = Side.RIGHT,
    step: float = 1e-6,
) -> np.ndarray:
    """Central finite differences of fn through oplus/ominus perturbations.

    The universal oracle that every analytic Jacobian is tested against.
    """
    base = fn(at)
    n_in = at.descriptor.dof
    n_out = base.descriptor.dof
    out = np.zeros((n_out, n_in))
    for j in range(n_in):
        delta = np.zeros(n_in)
        delta[j] = step
        plus = ominus(fn(oplus(at, delta, side)), base, side)
        minus = ominus(fn(oplus(at, -delta, side)), base, side)
        out[:, j] = (plus - minus) / (2.0 * step)
    return out


# ---------------------------------------------------------------------------
# Convenience constructors and accessors
# ---------------------------------------------------------------------------


def vector_element(x) -> ManifoldElement:
    arr = _coords(x)
    return ManifoldElement(VectorSpace(arr.shape[0]), arr)


def se2_element(c: np.ndarray, r) -> ManifoldElement:
    out = np.eye(3)
    out[:2, :2] = c
    out[:2, 2] = _coords(r)
    return ManifoldElement(SE2, out)


def se2_parts(a: ManifoldElement) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(a.value)
    return m[:2, :2], m[:2, 2]


def se23_element(c: np.ndarray, v, r, tau: float = 0.0) -> ManifoldElement:
    return ManifoldElement(SE23, _se23_from_parts(c, _coords(v), _coords(r), tau))


def se23_parts(a: ManifoldElement) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    m = np.asarray(a.value)
    return m[:3, :3], m[:3, 3], m[:3, 4], float(m[3, 4])
