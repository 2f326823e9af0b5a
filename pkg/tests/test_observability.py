import numpy as np
import pytest

from teamnav.observability import (
    ObservabilityReport,
    TrajectoryLinearization,
    _batch_jacobian,
    build_observability_matrix,
    is_observable,
)


def toy_linearization(with_pseudo: bool, k_steps: int = 3) -> TrajectoryLinearization:
    # two robots, both carrying both positions: columns (r1,r2 | r1,r2)
    n = 4
    g1 = np.array([[1.0, 0.0, 0.0, 0.0]])
    g2 = np.array([[0.0, 0.0, -1.0, 1.0]])
    g = np.vstack([g1, g2])
    phi = (
        np.array([[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]])
        if with_pseudo
        else np.zeros((0, n))
    )
    return TrajectoryLinearization(
        f_blocks=tuple(np.eye(n) for _ in range(k_steps)),
        g_blocks=tuple(g for _ in range(k_steps + 1)),
        phi_blocks=tuple(phi for _ in range(k_steps + 1)),
        n_total=n,
    )


def test_single_robot_identity_measurement():
    lin = TrajectoryLinearization(
        f_blocks=(),
        g_blocks=(np.eye(1),),
        phi_blocks=(np.zeros((0, 1)),),
        n_total=1,
    )
    o = build_observability_matrix(lin)
    np.testing.assert_allclose(o, np.eye(1))
    assert is_observable(o).observable


def test_toy_without_pseudo_rank_two_of_four():
    o = build_observability_matrix(toy_linearization(with_pseudo=False))
    assert np.linalg.matrix_rank(o) == 2
    report = is_observable(o)
    assert report.rank == 2
    assert report.required == 4
    assert not report.observable
    assert report.null_directions.shape == (4, 2)


def test_toy_with_pseudo_full_rank():
    o = build_observability_matrix(toy_linearization(with_pseudo=True))
    assert np.linalg.matrix_rank(o) == 4
    report = is_observable(o)
    assert report.observable
    assert report.null_directions.shape == (4, 0)


def test_observability_matrix_accumulates_transitions():
    # hand-built: F scales the state by 2 each step, G = [1]
    lin = TrajectoryLinearization(
        f_blocks=(2 * np.eye(1), 2 * np.eye(1)),
        g_blocks=(np.eye(1), np.eye(1), np.eye(1)),
        phi_blocks=tuple(np.zeros((0, 1)) for _ in range(3)),
        n_total=1,
    )
    o = build_observability_matrix(lin)
    np.testing.assert_allclose(o, [[1.0], [2.0], [4.0]])


def test_is_observable_identity_and_zero():
    report = is_observable(np.eye(5))
    assert report.observable and report.rank == 5
    zero = is_observable(np.zeros((3, 3)))
    assert zero.rank == 0
    assert zero.null_directions.shape == (3, 3)
    # null directions span the whole space
    assert np.linalg.matrix_rank(zero.null_directions) == 3


def test_report_to_dict_round_trips_through_json():
    import json

    report = is_observable(np.eye(2))
    parsed = json.loads(json.dumps(report.to_dict()))
    assert parsed["rank"] == 2
    assert parsed["observable"] is True


def test_rank_invariant_under_positive_weighting():
    rng = np.random.default_rng(0)
    for _ in range(20):
        rows, n = rng.integers(2, 8), 5
        o = rng.standard_normal((rows, n))
        if rng.random() < 0.5:
            o[:, -1] = 0.0  # force deficiency sometimes
        d = np.diag(rng.uniform(0.1, 10.0, rows))
        weighted = o.T @ d @ o
        assert np.linalg.matrix_rank(o) == np.linalg.matrix_rank(weighted)
        assert is_observable(o).rank == np.linalg.matrix_rank(o)


def test_adding_pseudo_rows_never_decreases_rank():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = 6
        k_steps = 2
        g = rng.standard_normal((2, n))
        phi = rng.standard_normal((rng.integers(1, 3), n))
        without = TrajectoryLinearization(
            f_blocks=tuple(np.eye(n) for _ in range(k_steps)),
            g_blocks=tuple(g for _ in range(k_steps + 1)),
            phi_blocks=tuple(np.zeros((0, n)) for _ in range(k_steps + 1)),
            n_total=n,
        )
        with_rows = TrajectoryLinearization(
            f_blocks=without.f_blocks,
            g_blocks=without.g_blocks,
            phi_blocks=tuple(phi for _ in range(k_steps + 1)),
            n_total=n,
        )
        r0 = is_observable(build_observability_matrix(without)).rank
        r1 = is_observable(build_observability_matrix(with_rows)).rank
        assert r1 >= r0


@pytest.mark.parametrize("with_pseudo", [False, True])
def test_reduction_matches_full_batch_jacobian(with_pseudo):
    lin = toy_linearization(with_pseudo)
    o = build_observability_matrix(lin)
    h = _batch_jacobian(lin)
    n, k_steps = lin.n_total, lin.steps
    # the trajectory-stacked Jacobian spends k*n rank tying steps together;
    # what remains is exactly the reduced matrix's rank
    assert np.linalg.matrix_rank(h) - k_steps * n == np.linalg.matrix_rank(o)
    assert (np.linalg.matrix_rank(h) == (k_steps + 1) * n) == is_observable(o).observable


def test_linearization_shape_validation():
    with pytest.raises(ValueError):
        TrajectoryLinearization(
            f_blocks=(np.eye(2),),
            g_blocks=(np.eye(2),),
            phi_blocks=(np.zeros((0, 2)),),
            n_total=2,
        )
    with pytest.raises(ValueError):
        TrajectoryLinearization(
            f_blocks=(),
            g_blocks=(np.eye(3),),
            phi_blocks=(np.zeros((0, 2)),),
            n_total=2,
        )


def test_report_type():
    assert isinstance(is_observable(np.eye(2)), ObservabilityReport)
