"""Linear full-overlap scenario: every robot estimates every robot's
scalar position; positions follow a random walk. Robot 1 measures its own
position, robot k measures its offset from robot k-1, and chain neighbors
exchange subtraction residuals."""

from __future__ import annotations

import numpy as np

from ..belief import Belief
from ..config import ScenarioConfig
from ..filtering import ProcessModel, predict, update_local
from ..groups import ManifoldElement, VectorSpace, vector_element
from ..models import LinearStateMeasurement, StateLayout, SubtractionPseudo, flat_vector
from ..simworld import CommGraph, SensorSpec, TruthView
from .base import Attachment, BaseScenario


class ToyTruth:
    def __init__(self, positions: np.ndarray):
        self.positions = positions  # (n_steps+1, n_robots)


class _ToyProcess(ProcessModel):
    """Random walk over the stacked position instances; no inputs."""

    def __init__(self, scenario: "ToyScenario", q_step: np.ndarray, dt: float):
        self.scenario = scenario
        self.noise_cov = q_step
        self.dt = dt
        self._eye = np.eye(q_step.shape[0])

    def evaluate(self, x, u, w):
        return self.scenario.stacked_element(flat_vector(x) + np.asarray(w))

    def jac_state(self, x, u):
        return self._eye

    def jac_noise(self, x, u):
        return self._eye


class _CentralizedToy:
    """Joint filter over the physical positions, fed every measurement."""

    def __init__(self, scenario: "ToyScenario", truth: ToyTruth, rng):
        self.scenario = scenario
        n = scenario.n
        self.layout = scenario.central_layout
        self.belief = Belief(
            scenario.stacked_element(np.zeros(n)),
            scenario.params.p0_std**2 * np.eye(n),
        )
        self.process = scenario.process
        self.models = scenario.central_models

    def on_input(self, robot: int, u) -> None:
        # one physical step per tick: act on the first robot's event only
        if robot == self.scenario.robot_ids[0]:
            self.belief = predict(self.belief, self.process, np.zeros(0))

    def on_measurement(self, key, idx, value) -> None:
        self.belief = update_local(self.belief, self.models[key], value).belief

    def true_state(self, truth: ToyTruth, k: int) -> ManifoldElement:
        return self.scenario.stacked_element(truth.positions[k])


class ToyScenario(BaseScenario):
    rmi_kind = None

    def __init__(self, config: ScenarioConfig):
        super().__init__(config)
        self.params = config.toy
        n = self.params.n_robots
        self.n = n
        self.robot_ids = list(range(1, n + 1))
        edges = tuple((k, k + 1) for k in range(1, n))
        self.graph = CommGraph(tuple(self.robot_ids), edges)
        members = [(f"r:{j}", VectorSpace(1)) for j in self.robot_ids]
        layout = StateLayout.build(members)
        self.layouts = {r: layout for r in self.robot_ids}
        self.central_layout = layout

        dt = 1.0 / config.input_hz
        q = self.params.process_std**2 * np.eye(n)
        self.process = _ToyProcess(self, q, dt)

        r_var = np.array([[self.params.meas_std**2]])
        self.sensor_attachments = {}
        self.central_models = {}
        for r in self.robot_ids:
            g_row = np.zeros(n)
            if r == 1:
                g_row[0] = 1.0
                spec = SensorSpec(
                    "own_position", self.params.meas_hz, (self.params.meas_std,), (1,)
                )
            else:
                g_row[r - 2] = -1.0
                g_row[r - 1] = 1.0
                spec = SensorSpec(
                    "relative_position_robot",
                    self.params.meas_hz,
                    (self.params.meas_std,),
                    (r - 1, r),
                )
            model = LinearStateMeasurement(g_row, r_var)
            key = ("meas", r)
            self.sensor_attachments[key] = Attachment([(spec, {r: model})], (r,))
            self.central_models[key] = model

        psi = config.psi * np.eye(n)
        self._pseudo = SubtractionPseudo(n, psi)

    # -- truth ---------------------------------------------------------------

    def stacked_element(self, values) -> ManifoldElement:
        parts = tuple(vector_element([v]) for v in values)
        return ManifoldElement(self.central_layout.descriptor, parts)

    def simulate_truth(self, rng, n_steps: int) -> ToyTruth:
        scale = self.config.noise_scale
        n = self.n
        positions = np.zeros((n_steps + 1, n))
        positions[0] = scale * self.params.p0_std * rng.standard_normal(n)
        steps = scale * self.params.process_std * rng.standard_normal((n_steps, n))
        positions[1:] = positions[0] + np.cumsum(steps, axis=0)
        return ToyTruth(positions)

    def measured_inputs(self, truth, robot, n_steps, rng) -> np.ndarray:
        return np.zeros((n_steps, 0))

    def initial_belief(self, robot, truth, rng) -> Belief:
        # the true initial positions are drawn from this shared prior
        p0 = self.params.p0_std**2 * np.eye(self.n)
        return Belief(self.stacked_element(np.zeros(self.n)), p0)

    def true_state(self, truth: ToyTruth, robot, k) -> ManifoldElement:
        return self.stacked_element(truth.positions[k])

    def truth_view(self, truth: ToyTruth, k) -> TruthView:
        positions = {
            r: np.array([truth.positions[k][r - 1]]) for r in self.robot_ids
        }
        return TruthView(positions=positions)

    # -- estimator plumbing ---------------------------------------------------

    def predict_own(self, robot, belief, u) -> Belief:
        return predict(belief, self.process, u)

    def pseudo_model(self, receiver, sender):
        return self._pseudo

    def centralized_filter(self, truth, rng):
        return _CentralizedToy(self, truth, rng)

    def full_process_jacobian(self, truth, robot, k) -> np.ndarray:
        return np.eye(self.n)
