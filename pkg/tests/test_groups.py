import math

import numpy as np
import pytest
from scipy.linalg import expm

from teamnav import groups
from teamnav.groups import (
    SE2,
    SE23,
    SO3,
    Composite,
    DescriptorMismatch,
    LogDomainError,
    ManifoldElement,
    Side,
    VectorSpace,
    adjoint,
    compose,
    exp_map,
    group_jacobian,
    identity,
    inverse,
    log_map,
    numerical_jacobian,
    ominus,
    oplus,
)

R3 = VectorSpace(3)
COMP = Composite((SE2, VectorSpace(2), SO3))
ALL_DESCS = [R3, SO3, SE2, SE23, COMP]


# Oracle hats, independent of the implementation under test.
def hat(desc, xi):
    xi = np.asarray(xi, dtype=float)
    if desc == SO3:
        x, y, z = xi
        return np.array([[0, -z, y], [z, 0, -x], [-y, x, 0.0]])
    if desc == SE2:
        return np.array([[0, -xi[0], xi[1]], [xi[0], 0, xi[2]], [0, 0, 0.0]])
    if desc == SE23:
        out = np.zeros((5, 5))
        out[:3, :3] = hat(SO3, xi[0:3])
        out[:3, 3] = xi[3:6]
        out[:3, 4] = xi[6:9]
        return out
    raise ValueError(desc)


def vee(desc, m):
    if desc == SO3:
        return np.array([m[2, 1], m[0, 2], m[1, 0]])
    if desc == SE2:
        return np.array([m[1, 0], m[0, 2], m[1, 2]])
    if desc == SE23:
        return np.concatenate([vee(SO3, m[:3, :3]), m[:3, 3], m[:3, 4]])
    raise ValueError(desc)


def random_element(desc, rng, scale=1.0):
    return exp_map(desc, scale * rng.standard_normal(desc.dof))


def test_compose_identity_axiom():
    rng = np.random.default_rng(0)
    for desc in ALL_DESCS:
        x = random_element(desc, rng)
        assert_elements_close(compose(x, identity(desc)), x)
        assert_elements_close(compose(identity(desc), x), x)


def assert_elements_close(a, b, tol=1e-9):
    if isinstance(a.descriptor, Composite):
        for pa, pb in zip(a.parts, b.parts):
            assert_elements_close(pa, pb, tol)
    else:
        np.testing.assert_allclose(np.asarray(a.value), np.asarray(b.value), atol=tol)


def test_compose_so3_quarter_turns():
    # Rodrigues oracle via the matrix exponential.
    rz90 = ManifoldElement(SO3, expm(hat(SO3, [0, 0, math.pi / 2])))
    rz180 = expm(hat(SO3, [0, 0, math.pi]))
    np.testing.assert_allclose(compose(rz90, rz90).value, rz180, atol=1e-12)


def test_compose_composite_memberwise():
    rng = np.random.default_rng(1)
    a = random_element(COMP, rng)
    b = random_element(COMP, rng)
    ab = compose(a, b)
    for pa, pb, pab in zip(a.parts, b.parts, ab.parts):
        assert_elements_close(compose(pa, pb), pab)


def test_compose_descriptor_mismatch():
    with pytest.raises(DescriptorMismatch):
        compose(identity(SO3), identity(SE2))


def test_inverse_identities():
    rng = np.random.default_rng(2)
    for desc in ALL_DESCS:
        assert_elements_close(inverse(identity(desc)), identity(desc))
        x = random_element(desc, rng)
        assert_elements_close(compose(x, inverse(x)), identity(desc))


def test_inverse_se2_closed_form():
    rng = np.random.default_rng(3)
    x = random_element(SE2, rng)
    np.testing.assert_allclose(
        np.asarray(inverse(x).value), np.linalg.inv(np.asarray(x.value)), atol=1e-12
    )


def test_inverse_vector_space_negation():
    x = groups.vector_element([1.0, -2.0, 3.0])
    np.testing.assert_allclose(inverse(x).value, [-1.0, 2.0, -3.0])


def test_exp_zero_is_identity():
    for desc in ALL_DESCS:
        assert_elements_close(exp_map(desc, np.zeros(desc.dof)), identity(desc))


def test_exp_matches_matrix_exponential():
    rng = np.random.default_rng(4)
    for desc in [SO3, SE2, SE23]:
        for _ in range(20):
            xi = rng.standard_normal(desc.dof)
            np.testing.assert_allclose(
                np.asarray(exp_map(desc, xi).value), expm(hat(desc, xi)), atol=1e-10
            )


def test_so3_exp_quarter_turn_action():
    c = np.asarray(exp_map(SO3, [0, 0, math.pi / 2]).value)
    np.testing.assert_allclose(c @ np.array([1.0, 0, 0]), [0, 1.0, 0], atol=1e-12)


def test_se2_pure_translation():
    el = exp_map(SE2, [0.0, 0.5, 0.0])
    _, r = groups.se2_parts(el)
    np.testing.assert_allclose(r, [0.5, 0.0], atol=1e-15)


def test_exp_log_round_trip():
    rng = np.random.default_rng(5)
    for desc in ALL_DESCS:
        for _ in range(200):
            xi = rng.uniform(-1, 1, desc.dof)
            # keep rotation parts inside the injectivity radius
            xi = xi * (math.pi - 0.01) / max(1.0, np.linalg.norm(xi))
            np.testing.assert_allclose(log_map(exp_map(desc, xi)), xi, atol=1e-8)


def test_log_rejects_angle_near_pi():
    with pytest.raises(LogDomainError):
        log_map(exp_map(SO3, [math.pi - 1e-9, 0, 0]))
    with pytest.raises(LogDomainError):
        log_map(exp_map(SE2, [math.pi - 1e-9, 0.1, 0.2]))


def test_se23_log_rejects_clock_entry():
    m = np.eye(5)
    m[3, 4] = 0.25
    el = ManifoldElement(SE23, m)
    with pytest.raises(LogDomainError):
        log_map(el)


def test_adjoint_identity_is_unit():
    for desc in ALL_DESCS:
        np.testing.assert_allclose(adjoint(identity(desc)), np.eye(desc.dof))


def test_adjoint_so3_is_rotation_matrix():
    rng = np.random.default_rng(6)
    x = random_element(SO3, rng)
    np.testing.assert_allclose(adjoint(x), np.asarray(x.value), atol=1e-12)


@pytest.mark.parametrize("desc", [SO3, SE2, SE23])
def test_adjoint_matches_definition(desc):
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = random_element(desc, rng)
        xm = np.asarray(x.value)
        ad = adjoint(x)
        for j in range(desc.dof):
            e = np.zeros(desc.dof)
            e[j] = 1.0
            direct = vee(desc, xm @ hat(desc, e) @ np.linalg.inv(xm))
            np.testing.assert_allclose(ad[:, j], direct, atol=1e-10)


def test_adjoint_se23_with_clock_entry():
    # conjugation by a clock-carrying element must match the closed form
    rng = np.random.default_rng(8)
    xm = np.asarray(random_element(SE23, rng).value).copy()
    xm[3, 4] = 0.37
    x = ManifoldElement(SE23, xm)
    ad = adjoint(x)
    for j in range(9):
        e = np.zeros(9)
        e[j] = 1.0
        direct = vee(SE23, xm @ hat(SE23, e) @ np.linalg.inv(xm))
        np.testing.assert_allclose(ad[:, j], direct, atol=1e-10)


def test_adjoint_homomorphism():
    rng = np.random.default_rng(9)
    for desc in ALL_DESCS:
        for _ in range(50):
            a = random_element(desc, rng)
            b = random_element(desc, rng)
            np.testing.assert_allclose(
                adjoint(compose(a, b)), adjoint(a) @ adjoint(b), atol=1e-9
            )


def test_associativity_randomized():
    rng = np.random.default_rng(10)
    for desc in ALL_DESCS:
        for _ in range(1000):
            a = random_element(desc, rng)
            b = random_element(desc, rng)
            c = random_element(desc, rng)
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert_elements_close(left, right, tol=1e-10)


def test_group_jacobian_at_zero_is_unit():
    for desc in ALL_DESCS:
        for side in Side:
            np.testing.assert_allclose(
                group_jacobian(desc, np.zeros(desc.dof), side), np.eye(desc.dof)
            )


def test_group_jacobian_vector_space_always_unit():
    rng = np.random.default_rng(11)
    np.testing.assert_allclose(
        group_jacobian(R3, rng.standard_normal(3)), np.eye(3)
    )


@pytest.mark.parametrize("desc", ALL_DESCS)
@pytest.mark.parametrize("side", list(Side))
def test_group_jacobian_matches_finite_difference(desc, side):
    rng = np.random.default_rng(12)
    for _ in range(10):
        xi = rng.uniform(-1.2, 1.2, desc.dof)
        analytic = group_jacobian(desc, xi, side)
        numeric = numerical_jacobian(
            lambda d: exp_map(desc, xi + log_map(d)),
            identity(desc),
            side,
        )
        # FD of Exp through the derivative definition, sharing the base point
        base = exp_map(desc, xi)
        h = 1e-6
        num = np.zeros((desc.dof, desc.dof))
        for j in range(desc.dof):
            dxi = np.zeros(desc.dof)
            dxi[j] = h
            num[:, j] = (
                ominus(exp_map(desc, xi + dxi), base, side)
                - ominus(exp_map(desc, xi - dxi), base, side)
            ) / (2 * h)
        np.testing.assert_allclose(analytic, num, atol=2e-5)
        del numeric


def test_so3_right_jacobian_closed_form_value():
    theta = 0.8
    analytic = group_jacobian(SO3, [0, 0, theta], Side.RIGHT)
    # series oracle: J_r(xi) = sum_{n} (-ad)^n/(n+1)!
    ad = -hat(SO3, [0, 0, theta])
    total = np.zeros((3, 3))
    term = np.eye(3)
    for n in range(30):
        total += term / math.factorial(n + 1)
        term = term @ ad
    np.testing.assert_allclose(analytic, total, atol=1e-12)


def test_oplus_zero_and_ominus_self():
    rng = np.random.default_rng(13)
    for desc in ALL_DESCS:
        x = random_element(desc, rng)
        for side in Side:
            assert_elements_close(oplus(x, np.zeros(desc.dof), side), x)
            np.testing.assert_allclose(
                ominus(x, x, side), np.zeros(desc.dof), atol=1e-12
            )


def test_oplus_vector_space_is_addition():
    x = groups.vector_element([1.0, 2.0, 3.0])
    d = np.array([0.5, -0.5, 0.25])
    np.testing.assert_allclose(oplus(x, d).value, [1.5, 1.5, 3.25])
    y = groups.vector_element([0.0, 0.0, 1.0])
    np.testing.assert_allclose(ominus(x, y), [1.0, 2.0, 2.0])


def test_oplus_ominus_inverse_pair():
    rng = np.random.default_rng(14)
    for desc in ALL_DESCS:
        for side in Side:
            for _ in range(200):
                x = random_element(desc, rng)
                d = rng.uniform(-1, 1, desc.dof)
                d = 0.5 * d / max(1.0, np.linalg.norm(d))
                np.testing.assert_allclose(
                    ominus(oplus(x, d, side), x, side), d, atol=1e-9
                )


def test_numerical_jacobian_identity_map():
    rng = np.random.default_rng(15)
    for desc in ALL_DESCS:
        x = random_element(desc, rng)
        np.testing.assert_allclose(
            numerical_jacobian(lambda e: e, x), np.eye(desc.dof), atol=1e-9
        )


def test_numerical_jacobian_left_composition_right_perturbation():
    rng = np.random.default_rng(16)
    y = random_element(SE2, rng)
    x = random_element(SE2, rng)
    jac = numerical_jacobian(lambda e: compose(y, e), x, Side.RIGHT)
    np.testing.assert_allclose(jac, np.eye(3), atol=1e-8)


def test_numerical_jacobian_of_exp_matches_group_jacobian():
    rng = np.random.default_rng(17)
    for desc in [SO3, SE2, SE23]:
        xi = rng.uniform(-1, 1, desc.dof)
        for side in Side:
            fd = numerical_jacobian(
                lambda e: exp_map(desc, xi + ominus(e, identity(desc), side)),
                identity(desc),
                side,
            )
            np.testing.assert_allclose(
                fd, group_jacobian(desc, xi, side), atol=2e-5
            )


def test_reorthonormalization_long_chains():
    rng = np.random.default_rng(18)
    x = random_element(SO3, rng)
    step = exp_map(SO3, [1e-3, 2e-3, -1e-3])
    for _ in range(5000):
        x = compose(x, step)
    c = np.asarray(x.value)
    assert np.abs(c.T @ c - np.eye(3)).max() < 1e-9


def test_composite_tangent_ordering():
    rng = np.random.default_rng(19)
    xi = rng.uniform(-0.5, 0.5, COMP.dof)
    el = exp_map(COMP, xi)
    slices = COMP.member_slices()
    for part, desc, s in zip(el.parts, COMP.members, slices):
        assert_elements_close(part, exp_map(desc, xi[s]))


def test_tangent_vector_validation():
    with pytest.raises(ValueError):
        groups.TangentVector(SO3, np.zeros(4))
    tv = groups.TangentVector(SE2, [0.1, 0.2, 0.3])
    np.testing.assert_allclose(np.asarray(tv), [0.1, 0.2, 0.3])
