"""Aerial scenario: each robot estimates its own extended pose and IMU
bias plus every neighbor's relative pose and bias. Own IMU input partially
predicts the relative poses (neighbor input treated as zero) until the
neighbor's preintegrated increment arrives, which is first corrected with
the local estimate of that neighbor's bias. Only two robots receive
absolute position and heading information; the third is anchored purely
through shared estimates."""

from __future__ import annotations

import math

import numpy as np

from ..belief import Belief, sample
from ..config import ScenarioConfig
from ..filtering import ProcessModel, predict, update_local
from ..groups import (
    SE23,
    ManifoldElement,
    Side,
    VectorSpace,
    adjoint,
    compose,
    group_jacobian,
    inverse,
    se23_element,
    se23_parts,
    vector_element,
)
from ..models import (
    AbsolutePosition3d,
    AbsoluteTagRange,
    Factor,
    Height,
    Magnetometer,
    ProductPseudo,
    RelativePoseTagRange,
    StateLayout,
)
from ..preint import (
    ImuInput,
    ImuRmi,
    correct_bias,
    gravity_step,
    imu_input_jacobian,
    imu_step_matrix,
    imu_step_terms,
    increment_imu,
)
from ..simworld import CommGraph, SensorSpec, TruthView
from .base import Attachment, BaseScenario


class QuadTruth:
    def __init__(self, poses, biases, inputs):
        self.poses = poses  # robot -> (n_steps+1, 5, 5)
        self.biases = biases  # robot -> (n_steps+1, 6)
        self.inputs = inputs  # robot -> (n_steps, 6) true (gyro, specific force)


class InertialTeamProcess(ProcessModel):
    """Own-input transition for one robot's composite state.

    The own pose advances through the gravity-and-input factors using the
    bias-corrected input; relative poses are partially predicted by
    premultiplying the inverse input factor; all bias estimates random-walk.
    Noise ordering: own IMU (6), own bias walk (6), then one 6-block per
    neighbor bias walk.
    """

    def __init__(self, layout: StateLayout, robot: int, neighbors, dt, q_imu6, q_bias6, gravity):
        self.layout = layout
        self.robot = robot
        self.neighbors = list(neighbors)
        self.dt = dt
        self.g_step = gravity_step(gravity, dt)
        n_noise = 6 + 6 + 6 * len(self.neighbors)
        q = np.zeros((n_noise, n_noise))
        q[0:6, 0:6] = q_imu6
        q[6:12, 6:12] = q_bias6
        for m in range(len(self.neighbors)):
            s = 12 + 6 * m
            q[s : s + 6, s : s + 6] = q_bias6
        self.noise_cov = q
        self._pose_idx = layout.index(f"pose:{robot}")
        self._bias_idx = layout.index(f"bias:{robot}")
        self._rel_idx = {j: layout.index(f"rel:{j}") for j in self.neighbors}
        self._nbias_idx = {j: layout.index(f"bias:{j}") for j in self.neighbors}
        self._cache = None
        self._zero_w = np.zeros(n_noise)

    def _corrected(self, x, u, w):
        bias = np.asarray(x.parts[self._bias_idx].value)
        return np.asarray(u) + np.asarray(w)[0:6] - bias

    def evaluate(self, x, u, w):
        w = np.asarray(w)
        noiseless = not np.any(w)
        if noiseless:
            _, _, _, step, step_inv = self._linearization(x, u)
        else:
            ub = self._corrected(x, u, w)
            step = imu_step_matrix(ub[:3], ub[3:], self.dt)
            step_inv = inverse(step)
        parts = list(x.parts)
        parts[self._pose_idx] = compose(
            compose(self.g_step, parts[self._pose_idx]), step
        )
        for m, j in enumerate(self.neighbors):
            parts[self._rel_idx[j]] = compose(step_inv, parts[self._rel_idx[j]])
            if not noiseless:
                s = 12 + 6 * m
                parts[self._nbias_idx[j]] = vector_element(
                    np.asarray(parts[self._nbias_idx[j]].value) + w[s : s + 6]
                )
        if not noiseless:
            parts[self._bias_idx] = vector_element(
                np.asarray(parts[self._bias_idx].value) + w[6:12]
            )
        return ManifoldElement(x.descriptor, tuple(parts))

    def _linearization(self, x, u):
        # one-slot cache: predict evaluates the model and both Jacobians
        # at the same point back to back
        cached = self._cache
        if cached is not None and cached[0] is x and np.array_equal(cached[1], u):
            return cached[2]
        ub = self._corrected(x, u, self._zero_w)
        step = imu_step_matrix(ub[:3], ub[3:], self.dt)
        step_inv = inverse(step)
        l_in = imu_input_jacobian(ub[:3], ub[3:], self.dt)
        ad_step_inv = adjoint(step_inv)
        rel_maps = {}
        for j in self.neighbors:
            new_rel = compose(step_inv, x.parts[self._rel_idx[j]])
            rel_maps[j] = adjoint(inverse(new_rel)) @ l_in
        result = (l_in, ad_step_inv, rel_maps, step, step_inv)
        self._cache = (x, np.array(u), result)
        return result

    def jac_state(self, x, u):
        l_in, ad_step_inv, rel_maps, _, _ = self._linearization(x, u)
        out = np.eye(self.layout.dof)
        sp = self.layout.slices[self._pose_idx]
        sb = self.layout.slices[self._bias_idx]
        out[sp, sp] = ad_step_inv
        out[sp, sb] = -l_in
        for j in self.neighbors:
            sr = self.layout.slices[self._rel_idx[j]]
            out[sr, sb] = rel_maps[j]
        return out

    def jac_noise(self, x, u):
        l_in, _, rel_maps, _, _ = self._linearization(x, u)
        out = np.zeros((self.layout.dof, self.noise_cov.shape[0]))
        sp = self.layout.slices[self._pose_idx]
        out[sp, 0:6] = l_in
        out[self.layout.slices[self._bias_idx], 6:12] = np.eye(6)
        for m, j in enumerate(self.neighbors):
            sr = self.layout.slices[self._rel_idx[j]]
            out[sr, 0:6] = -rel_maps[j]
            s = 12 + 6 * m
            out[self.layout.slices[self._nbias_idx[j]], s : s + 6] = np.eye(6)
        return out


class _CentralizedQuad:
    """Joint filter over every robot's absolute pose and bias."""

    def __init__(self, scenario: "QuadScenario", truth: QuadTruth, rng):
        self.scenario = scenario
        self.layout = scenario.central_layout
        mean = self.true_state(truth, 0)
        p0 = scenario.central_p0
        noisy = sample(Belief(mean, scenario.config.noise_scale**2 * p0), rng)
        self.belief = Belief(noisy, p0)
        self.processes = scenario.central_processes
        self.models = scenario.central_models

    def on_input(self, robot, u):
        self.belief = predict(self.belief, self.processes[robot], u)

    def on_measurement(self, key, idx, value):
        self.belief = update_local(self.belief, self.models[key][idx], value).belief

    def true_state(self, truth, k):
        parts = []
        for r in self.scenario.robot_ids:
            parts.append(ManifoldElement(SE23, truth.poses[r][k]))
            parts.append(vector_element(truth.biases[r][k]))
        return ManifoldElement(self.layout.descriptor, tuple(parts))


class _CentralQuadBlockProcess(ProcessModel):
    """One robot's (pose, bias) block of the joint reference filter."""

    def __init__(self, layout: StateLayout, robot: int, dt, q_imu6, q_bias6, gravity):
        self.layout = layout
        self.dt = dt
        self.g_step = gravity_step(gravity, dt)
        q = np.zeros((12, 12))
        q[0:6, 0:6] = q_imu6
        q[6:12, 6:12] = q_bias6
        self.noise_cov = q
        self._pose_idx = layout.index(f"pose:{robot}")
        self._bias_idx = layout.index(f"bias:{robot}")
        self._cache = None

    def evaluate(self, x, u, w):
        w = np.asarray(w)
        bias = np.asarray(x.parts[self._bias_idx].value)
        if np.any(w):
            ub = np.asarray(u) + w[0:6] - bias
            step = imu_step_matrix(ub[:3], ub[3:], self.dt)
        else:
            step = self._lin(x, u)[2]
        parts = list(x.parts)
        parts[self._pose_idx] = compose(
            compose(self.g_step, parts[self._pose_idx]), step
        )
        if np.any(w):
            parts[self._bias_idx] = vector_element(bias + w[6:12])
        return ManifoldElement(x.descriptor, tuple(parts))

    def _lin(self, x, u):
        cached = self._cache
        if cached is not None and cached[0] is x and np.array_equal(cached[1], u):
            return cached[2]
        bias = np.asarray(x.parts[self._bias_idx].value)
        ub = np.asarray(u) - bias
        step = imu_step_matrix(ub[:3], ub[3:], self.dt)
        result = (
            adjoint(inverse(step)),
            imu_input_jacobian(ub[:3], ub[3:], self.dt),
            step,
        )
        self._cache = (x, np.array(u), result)
        return result

    def jac_state(self, x, u):
        ad_inv, l_in, _ = self._lin(x, u)
        out = np.eye(self.layout.dof)
        sp = self.layout.slices[self._pose_idx]
        out[sp, sp] = ad_inv
        out[sp, self.layout.slices[self._bias_idx]] = -l_in
        return out

    def jac_noise(self, x, u):
        _, l_in, _ = self._lin(x, u)
        out = np.zeros((self.layout.dof, 12))
        out[self.layout.slices[self._pose_idx], 0:6] = l_in
        out[self.layout.slices[self._bias_idx], 6:12] = np.eye(6)
        return out


class QuadScenario(BaseScenario):
    rmi_kind = "imu"

    def __init__(self, config: ScenarioConfig):
        super().__init__(config)
        self.params = config.quad
        p = self.params
        self.robot_ids = list(range(1, p.n_robots + 1))
        edges = tuple(
            (a, b)
            for i, a in enumerate(self.robot_ids)
            for b in self.robot_ids[i + 1 :]
        )
        self.graph = CommGraph(tuple(self.robot_ids), edges)
        self.dt = 1.0 / config.input_hz
        self.gravity = np.asarray(p.gravity, dtype=float)
        self.world_field = np.asarray(p.world_field, dtype=float)
        self.q_imu = np.diag([p.gyro_std**2] * 3 + [p.accel_std**2] * 3)
        self.q_bias = np.diag(
            [p.gyro_bias_rw_std**2] * 3 + [p.accel_bias_rw_std**2] * 3
        )
        self.rmi_every_ticks = int(round(config.base_hz / p.range_hz))

        self.neighbors = {r: self.graph.neighbors(r) for r in self.robot_ids}
        self.layouts = {}
        self.processes = {}
        for r in self.robot_ids:
            members = [(f"pose:{r}", SE23), (f"bias:{r}", VectorSpace(6))]
            for j in self.neighbors[r]:
                members += [(f"rel:{j}", SE23), (f"bias:{j}", VectorSpace(6))]
            layout = StateLayout.build(members)
            self.layouts[r] = layout
            self.processes[r] = InertialTeamProcess(
                layout, r, self.neighbors[r], self.dt, self.q_imu, self.q_bias, self.gravity
            )

        central_members = []
        for r in self.robot_ids:
            central_members += [(f"pose:{r}", SE23), (f"bias:{r}", VectorSpace(6))]
        self.central_layout = StateLayout.build(central_members)
        self.central_processes = {
            r: _CentralQuadBlockProcess(
                self.central_layout, r, self.dt, self.q_imu, self.q_bias, self.gravity
            )
            for r in self.robot_ids
        }
        self.central_p0 = self._block_p0(self.central_layout)

        self.sensor_attachments = {}
        self.central_models = {}
        for r in p.pos_robots:
            spec = SensorSpec("own_position", p.pos_hz, (p.pos_std,), (r,))
            model = AbsolutePosition3d(self.layouts[r], f"pose:{r}", p.pos_std)
            self.sensor_attachments[("pos", r)] = Attachment([(spec, {r: model})], (r,))
            self.central_models[("pos", r)] = [
                AbsolutePosition3d(self.central_layout, f"pose:{r}", p.pos_std)
            ]
        for r in self.robot_ids:
            spec = SensorSpec("height", p.height_hz, (p.height_std,), (r,))
            model = Height(self.layouts[r], f"pose:{r}", p.height_std)
            self.sensor_attachments[("height", r)] = Attachment([(spec, {r: model})], (r,))
            self.central_models[("height", r)] = [
                Height(self.central_layout, f"pose:{r}", p.height_std)
            ]
        for r in p.mag_robots:
            spec = SensorSpec("magnetometer", p.mag_hz, (p.mag_std,), (r,))
            model = Magnetometer(
                self.layouts[r], f"pose:{r}", self.world_field, p.mag_std
            )
            self.sensor_attachments[("mag", r)] = Attachment([(spec, {r: model})], (r,))
            self.central_models[("mag", r)] = [
                Magnetometer(self.central_layout, f"pose:{r}", self.world_field, p.mag_std)
            ]
        tags = [np.asarray(t, dtype=float) for t in p.tag_offsets]
        for a, b in edges:
            variants = []
            central_variants = []
            for ta in tags:
                for tb in tags:
                    spec = SensorSpec(
                        "range",
                        p.range_hz,
                        (p.range_std,),
                        (a, b),
                        {"tag_a": tuple(ta), "tag_b": tuple(tb)},
                    )
                    models = {
                        a: RelativePoseTagRange(
                            self.layouts[a], f"rel:{b}", ta, tb, p.range_std
                        ),
                        b: RelativePoseTagRange(
                            self.layouts[b], f"rel:{a}", tb, ta, p.range_std
                        ),
                    }
                    variants.append((spec, models))
                    central_variants.append(
                        AbsoluteTagRange(
                            self.central_layout, f"pose:{a}", f"pose:{b}", ta, tb, p.range_std
                        )
                    )
            key = ("range", a, b)
            self.sensor_attachments[key] = Attachment(variants, (a, b))
            self.central_models[key] = central_variants
        self._pseudo_cache: dict[tuple[int, int], ProductPseudo] = {}
        self._increment_cache = None

    def _block_p0(self, layout: StateLayout) -> np.ndarray:
        p = self.params
        pose_diag = (
            [p.p0_att_std**2] * 3 + [p.p0_vel_std**2] * 3 + [p.p0_pos_std**2] * 3
        )
        bias_diag = [p.gyro_bias_prior_std**2] * 3 + [p.accel_bias_prior_std**2] * 3
        diag = []
        for name in layout.names:
            diag += pose_diag if name.startswith(("pose", "rel")) else bias_diag
        return np.diag(diag)

    # -- truth ------------------------------------------------------------------

    def simulate_truth(self, rng, n_steps: int) -> QuadTruth:
        p = self.params
        scale = self.config.noise_scale
        poses, biases, inputs = {}, {}, {}
        for idx, r in enumerate(self.robot_ids):
            angle = 2 * math.pi * idx / len(self.robot_ids)
            c0 = np.array(
                [
                    [math.cos(angle), -math.sin(angle), 0],
                    [math.sin(angle), math.cos(angle), 0],
                    [0, 0, 1.0],
                ]
            )
            r0 = np.array([2.0 * math.cos(angle), 2.0 * math.sin(angle), 1.0 + 0.2 * idx])
            pose = se23_element(c0, np.zeros(3), r0)
            series = np.zeros((n_steps + 1, 5, 5))
            series[0] = np.asarray(pose.value)
            b = np.zeros((n_steps + 1, 6))
            b[0] = scale * rng.standard_normal(6) * np.array(
                [p.gyro_bias_prior_std] * 3 + [p.accel_bias_prior_std] * 3
            )
            u = np.zeros((n_steps, 6))
            freqs = rng.uniform(0.05, 0.2, size=6)
            phases = rng.uniform(0, 2 * math.pi, size=6)
            amps_w = p.turn_amp * np.array([0.3, 0.3, 1.0])
            amps_s = p.accel_wiggle * np.ones(3)
            rw = np.array([p.gyro_bias_rw_std] * 3 + [p.accel_bias_rw_std] * 3)
            for k in range(n_steps):
                t = k * self.dt
                omega = amps_w * np.sin(2 * math.pi * freqs[:3] * t + phases[:3])
                wiggle = amps_s * np.sin(2 * math.pi * freqs[3:] * t + phases[3:])
                c, v, _, _ = se23_parts(pose)
                accel = c.T @ (-self.gravity - p.vel_damping * v + wiggle)
                u[k] = np.concatenate([omega, accel])
                pose = compose(
                    compose(self.g_step_cached(), pose),
                    imu_step_matrix(omega, accel, self.dt),
                )
                series[k + 1] = np.asarray(pose.value)
                b[k + 1] = b[k] + scale * rw * rng.standard_normal(6)
            poses[r] = series
            biases[r] = b
            inputs[r] = u
        return QuadTruth(poses, biases, inputs)

    def g_step_cached(self):
        if not hasattr(self, "_g_step"):
            self._g_step = gravity_step(self.gravity, self.dt)
        return self._g_step

    def measured_inputs(self, truth: QuadTruth, robot, n_steps, rng) -> np.ndarray:
        std = np.array([self.params.gyro_std] * 3 + [self.params.accel_std] * 3)
        noise = rng.standard_normal((n_steps, 6)) * std
        return (
            truth.inputs[robot]
            + truth.biases[robot][:n_steps]
            + self.config.noise_scale * noise
        )

    def initial_belief(self, robot, truth: QuadTruth, rng) -> Belief:
        mean = self.true_state(truth, robot, 0)
        p0 = self._block_p0(self.layouts[robot])
        noisy = sample(Belief(mean, self.config.noise_scale**2 * p0), rng)
        return Belief(noisy, p0)

    def true_state(self, truth: QuadTruth, robot, k) -> ManifoldElement:
        own = ManifoldElement(SE23, truth.poses[robot][k])
        parts = [own, vector_element(truth.biases[robot][k])]
        for j in self.neighbors[robot]:
            rel = compose(inverse(own), ManifoldElement(SE23, truth.poses[j][k]))
            parts += [rel, vector_element(truth.biases[j][k])]
        return ManifoldElement(self.layouts[robot].descriptor, tuple(parts))

    def truth_view(self, truth: QuadTruth, k) -> TruthView:
        positions = {}
        rotations = {}
        for r in self.robot_ids:
            m = truth.poses[r][k]
            positions[r] = m[:3, 4]
            rotations[r] = m[:3, :3]
        return TruthView(
            positions=positions, rotations=rotations, world_field=self.world_field
        )

    # -- estimator plumbing -------------------------------------------------------

    def predict_own(self, robot, belief, u) -> Belief:
        return predict(belief, self.processes[robot], u)

    def own_rmi_identity(self, robot, at_step) -> ImuRmi:
        return ImuRmi.identity(at_step)

    def own_rmi_increment(self, robot, rmi: ImuRmi, u) -> ImuRmi:
        # neighbors' accumulators share one input's step terms
        cached = self._increment_cache
        if cached is None or not np.array_equal(cached[0], u):
            terms = imu_step_terms(u[:3], u[3:], self.dt)
            self._increment_cache = (np.array(u), terms)
        else:
            terms = cached[1]
        return increment_imu(rmi, ImuInput(u[:3], u[3:], self.dt), self.q_imu, terms)

    def apply_neighbor_rmi(self, robot, belief: Belief, sender, rmi: ImuRmi) -> Belief:
        layout = self.layouts[robot]
        rel_idx = layout.index(f"rel:{sender}")
        bias_idx = layout.index(f"bias:{sender}")
        bias_hat = np.asarray(belief.mean.parts[bias_idx].value)
        corrected = correct_bias(rmi, bias_hat)
        parts = list(belief.mean.parts)
        parts[rel_idx] = compose(parts[rel_idx], corrected.du_pq)
        mean = ManifoldElement(layout.descriptor, tuple(parts))
        sr = layout.slices[rel_idx]
        sb = layout.slices[bias_idx]
        f = np.eye(layout.dof)
        f[sr, sr] = adjoint(inverse(corrected.du_pq))
        f[sr, sb] = (
            group_jacobian(SE23, rmi.b_pq @ bias_hat, Side.RIGHT) @ rmi.b_pq
        )
        cov = f @ belief.cov @ f.T
        cov[sr, sr] += corrected.q_pq[:9, :9]
        return Belief(mean, cov, belief.side)

    def pseudo_model(self, receiver, sender) -> ProductPseudo:
        key = (receiver, sender)
        if key not in self._pseudo_cache:
            li = self.layouts[receiver]
            lj = self.layouts[sender]
            i, j = receiver, sender
            pose_rows = [
                # shared absolute pose through the relative pose
                [
                    Factor(("i", li.index(f"pose:{i}"))),
                    Factor(("i", li.index(f"rel:{j}"))),
                    Factor(("j", lj.index(f"pose:{j}")), inverted=True),
                ],
                # the two relative poses are mutually inverse
                [
                    Factor(("i", li.index(f"rel:{j}"))),
                    Factor(("j", lj.index(f"rel:{i}"))),
                ],
            ]
            common = sorted(
                set(self.neighbors[receiver]) & set(self.neighbors[sender])
            )
            for ell in common:
                pose_rows.append(
                    [
                        Factor(("i", li.index(f"rel:{j}"))),
                        Factor(("j", lj.index(f"rel:{ell}"))),
                        Factor(("i", li.index(f"rel:{ell}")), inverted=True),
                    ]
                )
            diff_rows = [(f"bias:{i}", f"bias:{i}"), (f"bias:{j}", f"bias:{j}")]
            n_rows = 9 * len(pose_rows) + 12
            psi = self.config.psi * np.eye(n_rows)
            self._pseudo_cache[key] = ProductPseudo(
                li, lj, pose_rows, diff_rows, psi, pose_dof=9
            )
        return self._pseudo_cache[key]

    def centralized_filter(self, truth, rng):
        return _CentralizedQuad(self, truth, rng)

    def full_process_jacobian(self, truth, robot, k) -> np.ndarray:
        layout = self.layouts[robot]
        out = np.eye(layout.dof)
        ub_i = truth.inputs[robot][k]
        step_i = imu_step_matrix(ub_i[:3], ub_i[3:], self.dt)
        l_i = imu_input_jacobian(ub_i[:3], ub_i[3:], self.dt)
        sp = layout.slice_of(f"pose:{robot}")
        sb = layout.slice_of(f"bias:{robot}")
        out[sp, sp] = adjoint(inverse(step_i))
        out[sp, sb] = -l_i
        for j in self.neighbors[robot]:
            ub_j = truth.inputs[j][k]
            step_j = imu_step_matrix(ub_j[:3], ub_j[3:], self.dt)
            l_j = imu_input_jacobian(ub_j[:3], ub_j[3:], self.dt)
            rel_now = compose(
                inverse(ManifoldElement(SE23, truth.poses[robot][k])),
                ManifoldElement(SE23, truth.poses[j][k]),
            )
            rel_next = compose(compose(inverse(step_i), rel_now), step_j)
            sr = layout.slice_of(f"rel:{j}")
            sjb = layout.slice_of(f"bias:{j}")
            out[sr, sr] = adjoint(inverse(step_j))
            out[sr, sb] = adjoint(inverse(rel_next)) @ l_i
            out[sr, sjb] = -l_j
        return out
