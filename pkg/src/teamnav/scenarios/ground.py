"""Planar ground-robot scenario: each robot estimates its own pose and its
neighbors' poses in the world frame, drives with noisy wheel odometry,
ranges its neighbors, and (for two robots only) sees known landmarks.
Neighbor blocks advance via shared wheel-odometry increments."""

from __future__ import annotations

import math

import numpy as np

from ..belief import Belief, sample
from ..config import ScenarioConfig
from ..filtering import ProcessModel, predict, update_local
from ..groups import (
    SE2,
    ManifoldElement,
    Side,
    adjoint,
    compose,
    exp_map,
    group_jacobian,
    inverse,
    se2_element,
    se2_parts,
)
from ..models import (
    Factor,
    InstanceRange2d,
    LandmarkRelPosition2d,
    ProductPseudo,
    StateLayout,
)
from ..preint import WheelRmi, increment_wheel, wheel_step_terms
from ..simworld import CommGraph, SensorSpec, TruthView
from .base import Attachment, BaseScenario


class GroundTruth:
    def __init__(self, poses, inputs, landmarks):
        self.poses = poses  # robot -> (n_steps+1, 3, 3)
        self.inputs = inputs  # robot -> (n_steps, 3) true body twist
        self.landmarks = landmarks  # (L, 2)


class PartialOdometryProcess(ProcessModel):
    """Composite transition advancing one pose member by body twist; the
    remaining members are neighbor instances awaiting shared increments."""

    def __init__(self, layout: StateLayout, member: str, dt: float, q3: np.ndarray):
        self.layout = layout
        self.member = member
        self.dt = dt
        self.noise_cov = np.asarray(q3, dtype=float)
        self._idx = layout.index(member)
        self._slice = layout.slices[self._idx]

    def evaluate(self, x, u, w):
        step = exp_map(SE2, self.dt * (np.asarray(u) + np.asarray(w)))
        parts = list(x.parts)
        parts[self._idx] = compose(parts[self._idx], step)
        return ManifoldElement(x.descriptor, tuple(parts))

    def jac_state(self, x, u):
        out = np.eye(self.layout.dof)
        step = exp_map(SE2, self.dt * np.asarray(u))
        out[self._slice, self._slice] = adjoint(inverse(step))
        return out

    def jac_noise(self, x, u):
        out = np.zeros((self.layout.dof, 3))
        out[self._slice, :] = self.dt * group_jacobian(
            SE2, self.dt * np.asarray(u), Side.RIGHT
        )
        return out


class _CentralizedGround:
    """Joint filter over the four physical poses with every measurement."""

    def __init__(self, scenario: "GroundScenario", truth: GroundTruth, rng):
        self.scenario = scenario
        self.layout = scenario.central_layout
        mean = self.true_state(truth, 0)
        p0 = scenario.params.p0_std**2 * np.eye(self.layout.dof)
        noisy = sample(
            Belief(mean, scenario.config.noise_scale**2 * p0), rng
        )
        self.belief = Belief(noisy, p0)
        self.processes = scenario.central_processes
        self.models = scenario.central_models

    def on_input(self, robot, u):
        self.belief = predict(self.belief, self.processes[robot], u)

    def on_measurement(self, key, idx, value):
        self.belief = update_local(self.belief, self.models[key][idx], value).belief

    def true_state(self, truth, k):
        parts = tuple(
            ManifoldElement(SE2, truth.poses[r][k]) for r in self.scenario.robot_ids
        )
        return ManifoldElement(self.layout.descriptor, parts)


class GroundScenario(BaseScenario):
    rmi_kind = "wheel"

    def __init__(self, config: ScenarioConfig):
        super().__init__(config)
        self.params = config.ground
        p = self.params
        self.robot_ids = list(range(1, p.n_robots + 1))
        self.graph = CommGraph(
            tuple(self.robot_ids), tuple((a, b) for a, b in p.edges)
        )
        self.dt = 1.0 / config.input_hz
        self.q_odom = np.diag(np.asarray(p.odom_std, dtype=float) ** 2)
        self.rmi_every_ticks = int(round(config.base_hz / p.range_hz))

        self.instances = {
            r: [r] + self.graph.neighbors(r) for r in self.robot_ids
        }
        self.layouts = {
            r: StateLayout.build([(f"pose:{j}", SE2) for j in self.instances[r]])
            for r in self.robot_ids
        }
        self.processes = {
            r: PartialOdometryProcess(self.layouts[r], f"pose:{r}", self.dt, self.q_odom)
            for r in self.robot_ids
        }
        self.central_layout = StateLayout.build(
            [(f"pose:{r}", SE2) for r in self.robot_ids]
        )
        self.central_processes = {
            r: PartialOdometryProcess(
                self.central_layout, f"pose:{r}", self.dt, self.q_odom
            )
            for r in self.robot_ids
        }

        self.sensor_attachments = {}
        self.central_models = {}
        for a, b in self.graph.edges:
            spec = SensorSpec("range", p.range_hz, (p.range_std,), (a, b))
            models = {
                a: InstanceRange2d(self.layouts[a], f"pose:{a}", f"pose:{b}", p.range_std),
                b: InstanceRange2d(self.layouts[b], f"pose:{b}", f"pose:{a}", p.range_std),
            }
            key = ("range", a, b)
            self.sensor_attachments[key] = Attachment([(spec, models)], (a, b))
            self.central_models[key] = [
                InstanceRange2d(self.central_layout, f"pose:{a}", f"pose:{b}", p.range_std)
            ]
        self._landmarks = None  # placed by simulate_truth
        self._pseudo_cache: dict[tuple[int, int], ProductPseudo] = {}
        self._increment_cache = None

    def _attach_landmark_sensors(self, landmarks: np.ndarray) -> None:
        p = self.params
        for r in p.landmark_robots:
            spec = SensorSpec(
                "landmark_body", p.range_hz, (p.landmark_std,), (r,)
            )
            model = LandmarkRelPosition2d(
                self.layouts[r], f"pose:{r}", landmarks, p.landmark_std
            )
            key = ("landmark", r)
            self.sensor_attachments[key] = Attachment([(spec, {r: model})], (r,))
            self.central_models[key] = [
                LandmarkRelPosition2d(
                    self.central_layout, f"pose:{r}", landmarks, p.landmark_std
                )
            ]

    # -- truth ----------------------------------------------------------------

    def simulate_truth(self, rng, n_steps: int) -> GroundTruth:
        p = self.params
        landmarks = rng.uniform(-p.area_m / 2, p.area_m / 2, size=(p.n_landmarks, 2))
        poses = {}
        inputs = {}
        for idx, r in enumerate(self.robot_ids):
            angle = 2 * math.pi * idx / len(self.robot_ids)
            start = se2_element(
                np.array(
                    [
                        [math.cos(angle), -math.sin(angle)],
                        [math.sin(angle), math.cos(angle)],
                    ]
                ),
                0.35 * p.area_m * np.array([math.cos(angle), math.sin(angle)]),
            )
            f_turn = rng.uniform(0.04, 0.12)
            f_speed = rng.uniform(0.04, 0.12)
            ph_turn = rng.uniform(0, 2 * math.pi)
            ph_speed = rng.uniform(0, 2 * math.pi)
            series = np.zeros((n_steps + 1, 3, 3))
            series[0] = np.asarray(start.value)
            u = np.zeros((n_steps, 3))
            pose = start
            for k in range(n_steps):
                t = k * self.dt
                u[k] = [
                    p.turn_amp * math.sin(2 * math.pi * f_turn * t + ph_turn),
                    p.speed_mean + p.speed_amp * math.sin(2 * math.pi * f_speed * t + ph_speed),
                    0.0,
                ]
                pose = compose(pose, exp_map(SE2, self.dt * u[k]))
                series[k + 1] = np.asarray(pose.value)
            poses[r] = series
            inputs[r] = u
        self._attach_landmark_sensors(landmarks)
        return GroundTruth(poses, inputs, landmarks)

    def measured_inputs(self, truth: GroundTruth, robot, n_steps, rng) -> np.ndarray:
        noise = rng.standard_normal((n_steps, 3)) * np.asarray(self.params.odom_std)
        return truth.inputs[robot] + self.config.noise_scale * noise

    def initial_belief(self, robot, truth: GroundTruth, rng) -> Belief:
        mean = self.true_state(truth, robot, 0)
        p0 = self.params.p0_std**2 * np.eye(self.layouts[robot].dof)
        noisy = sample(Belief(mean, self.config.noise_scale**2 * p0), rng)
        return Belief(noisy, p0)

    def true_state(self, truth: GroundTruth, robot, k) -> ManifoldElement:
        parts = tuple(
            ManifoldElement(SE2, truth.poses[j][k]) for j in self.instances[robot]
        )
        return ManifoldElement(self.layouts[robot].descriptor, parts)

    def truth_view(self, truth: GroundTruth, k) -> TruthView:
        positions = {}
        rotations = {}
        for r in self.robot_ids:
            c, t = truth.poses[r][k][:2, :2], truth.poses[r][k][:2, 2]
            positions[r] = t
            rotations[r] = c
        return TruthView(
            positions=positions, rotations=rotations, landmarks=truth.landmarks
        )

    # -- estimator plumbing -----------------------------------------------------

    def predict_own(self, robot, belief, u) -> Belief:
        return predict(belief, self.processes[robot], u)

    def own_rmi_identity(self, robot, at_step) -> WheelRmi:
        return WheelRmi.identity(at_step)

    def own_rmi_increment(self, robot, rmi: WheelRmi, u) -> WheelRmi:
        cached = self._increment_cache
        if cached is None or not np.array_equal(cached[0], u):
            terms = wheel_step_terms(u, self.dt)
            self._increment_cache = (np.array(u), terms)
        else:
            terms = cached[1]
        return increment_wheel(rmi, u, self.q_odom, self.dt, terms)

    def apply_neighbor_rmi(self, robot, belief: Belief, sender, rmi: WheelRmi) -> Belief:
        layout = self.layouts[robot]
        idx = layout.index(f"pose:{sender}")
        parts = list(belief.mean.parts)
        parts[idx] = compose(parts[idx], rmi.dt_pq)
        mean = ManifoldElement(layout.descriptor, tuple(parts))
        s = layout.slices[idx]
        f = np.eye(layout.dof)
        f[s, s] = adjoint(inverse(rmi.dt_pq))
        cov = f @ belief.cov @ f.T
        cov[s, s] += rmi.q_pq
        return Belief(mean, cov, belief.side)

    def pseudo_model(self, receiver, sender) -> ProductPseudo:
        key = (receiver, sender)
        if key not in self._pseudo_cache:
            li = self.layouts[receiver]
            lj = self.layouts[sender]
            common = sorted(
                set(self.graph.neighbors(receiver)) & set(self.graph.neighbors(sender))
            )
            shared = [receiver, sender] + common
            pose_rows = [
                [
                    Factor(("i", li.index(f"pose:{m}")), inverted=True),
                    Factor(("j", lj.index(f"pose:{m}"))),
                ]
                for m in shared
            ]
            psi = self.config.psi * np.eye(3 * len(pose_rows))
            self._pseudo_cache[key] = ProductPseudo(
                li, lj, pose_rows, [], psi, pose_dof=3
            )
        return self._pseudo_cache[key]

    def centralized_filter(self, truth, rng):
        return _CentralizedGround(self, truth, rng)

    def full_process_jacobian(self, truth, robot, k) -> np.ndarray:
        layout = self.layouts[robot]
        out = np.eye(layout.dof)
        for j, s in zip(self.instances[robot], layout.slices):
            step = exp_map(SE2, self.dt * truth.inputs[j][k])
            out[s, s] = adjoint(inverse(step))
        return out
