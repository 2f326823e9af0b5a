import numpy as np
import pytest
from scipy.stats import chi2

from teamnav.belief import Belief, CiWeight, ci_inflate, nees, sample, symmetrize
from teamnav.groups import (
    SO3,
    Side,
    VectorSpace,
    exp_map,
    identity,
    ominus,
    oplus,
    vector_element,
)


def random_spd(rng, n, scale=1.0):
    a = rng.standard_normal((n, n))
    return scale * (a @ a.T + n * np.eye(n))


def random_joint(rng, n):
    # correlated joint covariance over a 2n-dimensional stacked error
    a = rng.standard_normal((2 * n, 2 * n))
    return a @ a.T + 0.5 * np.eye(2 * n)


def min_eig(m):
    return float(np.linalg.eigvalsh(symmetrize(m)).min())


def test_ci_weight_validation():
    with pytest.raises(ValueError):
        CiWeight(0.0)
    with pytest.raises(ValueError):
        CiWeight(1.0)
    assert float(CiWeight(0.25)) == 0.25


def test_ci_inflate_even_split():
    b = Belief(vector_element([0.0]), np.array([[1.0]]))
    a2, b2 = ci_inflate(b, b, 0.5)
    np.testing.assert_allclose(a2.cov, [[2.0]])
    np.testing.assert_allclose(b2.cov, [[2.0]])


def test_ci_inflate_default_weight():
    rng = np.random.default_rng(0)
    p = random_spd(rng, 3)
    b = Belief(vector_element(np.zeros(3)), p)
    a2, _ = ci_inflate(b, b, 0.99)
    np.testing.assert_allclose(a2.cov, p / 0.99)


def test_ci_inflate_preserves_means():
    rng = np.random.default_rng(1)
    a = Belief(exp_map(SO3, [0.1, 0.2, -0.1]), random_spd(rng, 3))
    b = Belief(exp_map(SO3, [-0.3, 0.0, 0.2]), random_spd(rng, 3))
    a2, b2 = ci_inflate(a, b)
    assert a2.mean == a.mean
    assert b2.mean == b.mean
    assert min_eig(a2.cov - a.cov) >= -1e-10
    assert min_eig(b2.cov - b.cov) >= -1e-10


@pytest.mark.parametrize("w", [0.1, 0.5, 0.9, 0.99])
def test_ci_consistency_inequality(w):
    # inflated block-diagonal dominates the true correlated joint (PSD sense)
    rng = np.random.default_rng(2)
    n = 3
    for _ in range(1000):
        joint = random_joint(rng, n)
        inflated = np.zeros_like(joint)
        inflated[:n, :n] = joint[:n, :n] / w
        inflated[n:, n:] = joint[n:, n:] / (1.0 - w)
        assert min_eig(inflated - joint) >= -1e-10


def test_sample_zero_cov_returns_mean():
    mean = exp_map(SO3, [0.4, -0.2, 0.1])
    b = Belief(mean, np.zeros((3, 3)))
    assert sample(b, np.random.default_rng(0)) == mean


def test_sample_vector_law_of_large_numbers():
    rng = np.random.default_rng(3)
    sigma = 0.7
    n_draws = 100_000
    b = Belief(vector_element([2.0]), np.array([[sigma**2]]))
    draws = np.array([np.asarray(sample(b, rng).value)[0] for _ in range(n_draws)])
    assert abs(draws.mean() - 2.0) < 4 * sigma / np.sqrt(n_draws)


def test_sample_so3_statistics():
    rng = np.random.default_rng(4)
    cov = np.diag([0.02, 0.01, 0.03]) ** 1
    mean = exp_map(SO3, [0.3, -0.1, 0.2])
    b = Belief(mean, cov)
    errs = np.array(
        [ominus(sample(b, rng), mean, Side.RIGHT) for _ in range(100_000)]
    )
    emp = errs.T @ errs / len(errs)
    np.testing.assert_allclose(emp, cov, rtol=0.1, atol=1e-4)


def test_sample_invalid_covariance():
    b = Belief(vector_element([0.0, 0.0]), np.array([[1.0, 0.0], [0.0, -0.5]]))
    with pytest.raises(ValueError):
        sample(b, np.random.default_rng(0))


def test_nees_zero_at_truth():
    mean = exp_map(SO3, [0.1, 0.0, 0.0])
    b = Belief(mean, np.eye(3))
    assert nees(b, mean) == 0.0


def test_nees_scalar_case():
    b = Belief(vector_element([0.0]), np.array([[4.0]]))
    assert nees(b, vector_element([2.0])) == pytest.approx(1.0)


def test_nees_singular_covariance():
    b = Belief(vector_element([0.0, 0.0]), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        nees(b, vector_element([1.0, 0.0]))


def test_nees_invariant_under_linear_reparameterization():
    rng = np.random.default_rng(5)
    n = 4
    cov = random_spd(rng, n)
    err = rng.standard_normal(n)
    b = Belief(vector_element(np.zeros(n)), cov)
    direct = nees(b, vector_element(err))
    t = rng.standard_normal((n, n)) + 3 * np.eye(n)
    b2 = Belief(vector_element(np.zeros(n)), t @ cov @ t.T)
    transformed = nees(b2, vector_element(t @ err))
    assert direct == pytest.approx(transformed, rel=1e-9)


def test_nees_chi_square_monte_carlo():
    # a correctly-specified linear filter produces trial-averaged values
    # inside the 95% interval of the chi-square statistic
    rng = np.random.default_rng(6)
    n, trials, steps = 2, 200, 40
    q = 0.05 * np.eye(n)
    r = 0.1 * np.eye(n)
    total = 0.0
    count = 0
    for _ in range(trials):
        truth = rng.standard_normal(n)
        mean = truth + rng.multivariate_normal(np.zeros(n), np.eye(n))
        cov = np.eye(n)
        for _ in range(steps):
            truth = truth + rng.multivariate_normal(np.zeros(n), q)
            cov = cov + q
            y = truth + rng.multivariate_normal(np.zeros(n), r)
            k = cov @ np.linalg.inv(cov + r)
            mean = mean + k @ (y - mean)
            cov = (np.eye(n) - k) @ cov
        total += nees(Belief(vector_element(mean), cov), vector_element(truth))
        count += 1
    avg = total / count
    lo = chi2.ppf(0.025, count * n) / count
    hi = chi2.ppf(0.975, count * n) / count
    assert lo < avg < hi


def test_belief_symmetrizes_covariance():
    cov = np.array([[1.0, 0.3], [0.1, 2.0]])
    b = Belief(vector_element([0.0, 0.0]), cov)
    np.testing.assert_allclose(b.cov, b.cov.T)


def test_belief_shape_validation():
    with pytest.raises(ValueError):
        Belief(identity(SO3), np.eye(4))


def test_nees_composite_full_stack():
    from teamnav.groups import Composite

    rng = np.random.default_rng(7)
    desc = Composite((SO3, VectorSpace(2)))
    mean = exp_map(desc, rng.uniform(-0.5, 0.5, desc.dof))
    cov = random_spd(rng, desc.dof)
    truth = oplus(mean, rng.uniform(-0.1, 0.1, desc.dof))
    b = Belief(mean, cov)
    err = ominus(truth, mean)
    expected = float(err @ np.linalg.solve(cov, err))
    assert nees(b, truth) == pytest.approx(expected)
