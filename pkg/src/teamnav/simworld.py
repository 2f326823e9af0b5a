"""Deterministic event-driven multi-robot world.

Ground truth, sensor synthesis, message routing over the communication
graph, and per-robot estimator callbacks all advance on one integer tick
clock. Ordering within a tick is fixed (inputs, increment deliveries,
measurements, state-share deliveries, metric records) so identical
(config, seed) pairs replay identically, byte for byte.

A robot callback sees only that robot's node and the payload of the
delivered message; peer state is reachable exclusively through messages.
"""

from __future__ import annotations

import dataclasses
import enum
import heapq
from typing import Iterable

import numpy as np

from .belief import Belief, nees as nees_of
from .config import ScenarioConfig, config_hash
from .filtering import FusionSettings, fuse_pseudo, update_local
from .groups import ManifoldElement, ominus
from .preint import Rmi, serialize_rmi

STATE_SHARE_HEADER_BYTES = 16


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class CommGraph:
    nodes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for a, b in self.edges:
            if a == b:
                raise ValueError("self loops are not allowed")
            if a not in self.nodes or b not in self.nodes:
                raise ValueError(f"edge ({a},{b}) references unknown robots")

    def neighbors(self, robot: int) -> list[int]:
        out = set()
        for a, b in self.edges:
            if a == robot:
                out.add(b)
            elif b == robot:
                out.add(a)
        return sorted(out)

    def has_edge(self, a: int, b: int) -> bool:
        return (a, b) in self.edges or (b, a) in self.edges


@dataclasses.dataclass(frozen=True)
class SensorSpec:
    kind: str  # own_position | relative_position_robot | landmark_body |
    #            range | height | magnetometer
    rate_hz: float
    noise_std: tuple[float, ...]
    targets: tuple = ()
    params: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise ValueError("sensor rate must be positive")
        if any(s < 0 for s in self.noise_std):
            raise ValueError("noise std must be nonnegative")


class MessageKind(enum.Enum):
    STATE_SHARE = "state"
    RMI_SHARE = "rmi"


@dataclasses.dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: int
    receiver: int
    send_step: int
    deliver_step: int
    payload: object  # Belief for state shares, Rmi for increment shares

    def __post_init__(self):
        if self.deliver_step < self.send_step:
            raise ValueError("messages cannot be delivered before they are sent")


class Phase(enum.IntEnum):
    INPUT = 0
    RMI_SEND = 1
    RMI_DELIVER = 2
    MEASUREMENT = 3
    SHARE_SEND = 4
    SHARE_DELIVER = 5
    RECORD = 6


@dataclasses.dataclass(order=True)
class _Event:
    tick: int
    phase: int
    key: tuple
    seq: int
    handler: object = dataclasses.field(compare=False)
    payload: object = dataclasses.field(compare=False, default=None)


class EventQueue:
    """Heap ordered by (tick, phase, key, insertion sequence)."""

    def __init__(self):
        self._heap: list[_Event] = []
        self._seq = 0

    def push(self, tick: int, phase: Phase, key, handler, payload=None) -> None:
        self._seq += 1
        key = tuple(key) if isinstance(key, (tuple, list)) else (key,)
        heapq.heappush(
            self._heap, _Event(tick, int(phase), key, self._seq, handler, payload)
        )

    def pop(self) -> _Event:
        return heapq.heappop(self._heap)

    def __len__(self) -> int:
        return len(self._heap)

    def peek_tick(self) -> int | None:
        return self._heap[0].tick if self._heap else None


class RobotNode:
    """Mutable estimator state owned by one robot."""

    def __init__(self, robot_id: int, layout, belief: Belief, neighbors: list[int]):
        self.id = robot_id
        self.layout = layout
        self.belief = belief
        self.step = 0
        self.neighbors = list(neighbors)
        self.own_rmi: dict[int, Rmi] = {}
        self.last_rmi_step: dict[int, int] = {j: 0 for j in neighbors}
        self.intermediate: dict[int, bool] = {j: False for j in neighbors}


@dataclasses.dataclass(frozen=True)
class TraceRow:
    trial: int
    step: int
    time: float
    robot: str
    substate: str
    error_norm: float
    nees: float
    cov_trace: float


@dataclasses.dataclass
class ScenarioTrace:
    config_hash: str
    seed: int
    trial: int
    rows: list[TraceRow] = dataclasses.field(default_factory=list)
    # (robot label, substate) -> list of (step, error vector, cov diagonal)
    detail: dict = dataclasses.field(default_factory=dict)
    message_bytes: dict = dataclasses.field(default_factory=dict)
    message_counts: dict = dataclasses.field(default_factory=dict)

    def add_detail(self, robot: str, substate: str, step: int, err, cov_diag):
        self.detail.setdefault((robot, substate), []).append(
            (step, np.asarray(err), np.asarray(cov_diag))
        )


# ---------------------------------------------------------------------------
# Sensor synthesis
# ---------------------------------------------------------------------------


class TruthView:
    """True quantities at one instant, as sensors see them."""

    def __init__(self, positions=None, rotations=None, landmarks=None, world_field=None):
        self.positions = positions or {}
        self.rotations = rotations or {}
        self.landmarks = landmarks
        self.world_field = world_field

    def position(self, robot: int) -> np.ndarray:
        return self.positions[robot]

    def rotation(self, robot: int) -> np.ndarray:
        return self.rotations[robot]


def generate_measurement(spec: SensorSpec, view: TruthView, rng: np.random.Generator):
    """Evaluate the sensor's true value and add its Gaussian noise."""
    if spec.kind == "own_position":
        value = view.position(spec.targets[0])
    elif spec.kind == "relative_position_robot":
        a, b = spec.targets
        value = view.position(b) - view.position(a)
    elif spec.kind == "landmark_body":
        robot = spec.targets[0]
        c = view.rotation(robot)
        r = view.position(robot)
        value = np.concatenate([c.T @ (lm - r) for lm in view.landmarks])
    elif spec.kind == "range":
        a, b = spec.targets
        tag_a = np.asarray(spec.params.get("tag_a", np.zeros(view.position(a).shape)))
        tag_b = np.asarray(spec.params.get("tag_b", np.zeros(view.position(b).shape)))
        pa = view.position(a) + view.rotation(a) @ tag_a
        pb = view.position(b) + view.rotation(b) @ tag_b
        value = np.array([np.linalg.norm(pb - pa)])
    elif spec.kind == "height":
        value = np.array([view.position(spec.targets[0])[2]])
    elif spec.kind == "magnetometer":
        value = view.rotation(spec.targets[0]).T @ view.world_field
    else:
        raise ValueError(f"unknown sensor kind {spec.kind!r}")
    std = np.asarray(spec.noise_std, dtype=float)
    if std.size == 1:
        std = np.full(value.shape, float(std))
    return value + std * rng.standard_normal(value.shape)


# ---------------------------------------------------------------------------
# Robot callbacks (pure with respect to peers: node + payload only)
# ---------------------------------------------------------------------------


def robot_on_input(defn, node: RobotNode, u: np.ndarray) -> None:
    """Partial propagation with zero neighbor inputs plus own-increment
    accumulation."""
    node.step += 1
    node.belief = defn.predict_own(node.id, node.belief, u)
    if defn.rmi_kind is not None:
        for j in node.neighbors:
            node.own_rmi[j] = defn.own_rmi_increment(node.id, node.own_rmi[j], u)
            node.intermediate[j] = True


def robot_on_rmi(defn, node: RobotNode, msg: Message) -> None:
    """Restore the sender's block to a physical state using the shared
    increment (bias-corrected where the scenario estimates input biases)."""
    rmi: Rmi = msg.payload
    sender = msg.sender
    expected = node.last_rmi_step[sender]
    if rmi.span[0] != expected:
        raise SimulationError(
            f"robot {node.id}: increment from {sender} spans {rmi.span}, "
            f"expected start {expected} (dropped message)"
        )
    node.belief = defn.apply_neighbor_rmi(node.id, node.belief, sender, rmi)
    node.last_rmi_step[sender] = rmi.span[1]
    node.intermediate[sender] = False


def robot_on_state_share(
    defn, node: RobotNode, msg: Message, settings: FusionSettings, two_sided: bool
) -> Belief | None:
    """Fuse the inter-robot residual against the received marginal.

    Returns the updated sender belief in the diagnostic two-sided mode,
    otherwise None; only the receiver's own belief is stored.
    """
    if msg.sender not in node.neighbors:
        raise SimulationError(
            f"robot {node.id} received a state share from non-neighbor {msg.sender}"
        )
    pm = defn.pseudo_model(node.id, msg.sender)
    updated, sender_updated = fuse_pseudo(node.belief, msg.payload, pm, settings)
    node.belief = updated
    return sender_updated if two_sided else None


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------


def _ticks_of(rate_hz: float, base_hz: int) -> int:
    return int(round(base_hz / rate_hz))


def _state_share_nbytes(belief: Belief) -> int:
    def mean_params(desc):
        from .groups import (
            Composite,
            ExtendedPoseGroup,
            PlanarPoseGroup,
            RotationGroup,
            VectorSpace,
        )

        if isinstance(desc, VectorSpace):
            return desc.n
        if isinstance(desc, RotationGroup):
            return 9
        if isinstance(desc, PlanarPoseGroup):
            return 9
        if isinstance(desc, ExtendedPoseGroup):
            return 25
        if isinstance(desc, Composite):
            return sum(mean_params(m) for m in desc.members)
        raise TypeError(desc)

    n = belief.dof
    return STATE_SHARE_HEADER_BYTES + 8 * (mean_params(belief.descriptor) + n * (n + 1) // 2)


class World:
    """One trial of one scenario; drives robots, messages, and baselines."""

    def __init__(
        self,
        definition,
        seed: int,
        trial: int = 0,
        naive: bool = False,
        centralized: bool = False,
        two_sided: bool = False,
    ):
        self.defn = definition
        self.config: ScenarioConfig = definition.config
        self.seed = seed
        self.trial = trial
        self.naive = naive
        self.two_sided = two_sided
        cfg = self.config

        root = np.random.SeedSequence(entropy=seed)
        streams = root.spawn(4 + 2 * len(definition.robot_ids))
        self.rng_truth = np.random.default_rng(streams[0])
        self.rng_sensors = np.random.default_rng(streams[1])
        rng_init = np.random.default_rng(streams[2])
        rng_inputs = np.random.default_rng(streams[3])

        self.input_every = _ticks_of(cfg.input_hz, cfg.base_hz)
        self.share_every = _ticks_of(cfg.share_hz, cfg.base_hz)
        self.metrics_every = _ticks_of(cfg.metrics_hz, cfg.base_hz)
        self.n_ticks = int(round(cfg.duration_s * cfg.base_hz))
        self.n_steps = self.n_ticks // self.input_every

        self.truth = definition.simulate_truth(self.rng_truth, self.n_steps)
        self.inputs = {
            r: definition.measured_inputs(self.truth, r, self.n_steps, rng_inputs)
            for r in definition.robot_ids
        }

        fus = cfg.fusion
        self.settings = FusionSettings(
            max_iters=fus.max_iters,
            step_tol=fus.step_tol,
            perform_ci=fus.perform_ci and not naive,
            ci_weight=fus.ci_weight,
        )

        self.nodes: dict[int, RobotNode] = {}
        for r in definition.robot_ids:
            layout = definition.layouts[r]
            belief = definition.initial_belief(r, self.truth, rng_init)
            node = RobotNode(r, layout, belief, definition.graph.neighbors(r))
            if definition.rmi_kind is not None:
                node.own_rmi = {
                    j: definition.own_rmi_identity(r, 0) for j in node.neighbors
                }
            self.nodes[r] = node

        self.central = definition.centralized_filter(self.truth, rng_init) if centralized else None

        self.trace = ScenarioTrace(
            config_hash=config_hash(cfg), seed=seed, trial=trial
        )
        for r in definition.robot_ids:
            label = str(r)
            self.trace.message_bytes[label] = {"state_share": 0, "rmi": 0}
            self.trace.message_counts[label] = {"state_share": 0, "rmi": 0}
        self._rmi_nbytes_cache: dict[int, int] = {}

        self.queue = EventQueue()
        self._schedule_all()

    # -- scheduling ---------------------------------------------------------

    def _schedule_all(self) -> None:
        cfg = self.config
        for tick in range(self.input_every, self.n_ticks + 1, self.input_every):
            for r in self.defn.robot_ids:
                self.queue.push(tick, Phase.INPUT, (r,), self._on_input)
        if self.defn.rmi_kind is not None:
            rmi_every = self.defn.rmi_every_ticks
            for tick in range(rmi_every, self.n_ticks + 1, rmi_every):
                for a, b in self.defn.graph.edges:
                    self.queue.push(tick, Phase.RMI_SEND, (a, b), self._on_rmi_send)
                    self.queue.push(tick, Phase.RMI_SEND, (b, a), self._on_rmi_send)
        for key, attachment in sorted(self.defn.sensor_attachments.items()):
            every = _ticks_of(attachment.spec.rate_hz, cfg.base_hz)
            for tick in range(every, self.n_ticks + 1, every):
                self.queue.push(tick, Phase.MEASUREMENT, key, self._on_measurement)
        for tick in range(self.share_every, self.n_ticks + 1, self.share_every):
            for r in self.defn.robot_ids:
                self.queue.push(tick, Phase.SHARE_SEND, (r,), self._on_share_send)
        for tick in range(0, self.n_ticks + 1, self.metrics_every):
            self.queue.push(tick, Phase.RECORD, (), self._on_record)

    # -- handlers -----------------------------------------------------------

    def _on_input(self, ev: _Event) -> None:
        r = ev.key[0]
        node = self.nodes[r]
        u = self.inputs[r][node.step]
        robot_on_input(self.defn, node, u)
        if self.central is not None:
            self.central.on_input(r, u)

    def _on_rmi_send(self, ev: _Event) -> None:
        sender, receiver = ev.key
        node = self.nodes[sender]
        rmi = node.own_rmi[receiver]
        node.own_rmi[receiver] = self.defn.own_rmi_identity(sender, node.step)
        msg = Message(
            MessageKind.RMI_SHARE,
            sender,
            receiver,
            ev.tick,
            ev.tick + self.config.message_delay_ticks,
            rmi,
        )
        label = str(sender)
        if sender not in self._rmi_nbytes_cache:
            self._rmi_nbytes_cache[sender] = len(serialize_rmi(rmi))
        self.trace.message_bytes[label]["rmi"] += self._rmi_nbytes_cache[sender]
        self.trace.message_counts[label]["rmi"] += 1
        self.queue.push(
            msg.deliver_step, Phase.RMI_DELIVER, (receiver, sender), self._on_rmi_deliver, msg
        )

    def _on_rmi_deliver(self, ev: _Event) -> None:
        msg: Message = ev.payload
        robot_on_rmi(self.defn, self.nodes[msg.receiver], msg)

    def _on_measurement(self, ev: _Event) -> None:
        attachment = self.defn.sensor_attachments[ev.key]
        idx = attachment.next_variant()
        spec, models = attachment.variants[idx]
        k = self.nodes[self.defn.robot_ids[0]].step
        view = self.defn.truth_view(self.truth, k)
        value = generate_measurement(spec, view, self.rng_sensors)
        for r in attachment.robots:
            node = self.nodes[r]
            result = update_local(node.belief, models[r], value)
            node.belief = result.belief
        if self.central is not None:
            self.central.on_measurement(ev.key, idx, value)

    def _on_share_send(self, ev: _Event) -> None:
        sender = ev.key[0]
        node = self.nodes[sender]
        nbytes = _state_share_nbytes(node.belief)
        for receiver in node.neighbors:
            msg = Message(
                MessageKind.STATE_SHARE,
                sender,
                receiver,
                ev.tick,
                ev.tick + self.config.message_delay_ticks,
                node.belief,
            )
            label = str(sender)
            self.trace.message_bytes[label]["state_share"] += nbytes
            self.trace.message_counts[label]["state_share"] += 1
            self.queue.push(
                msg.deliver_step,
                Phase.SHARE_DELIVER,
                (receiver, sender),
                self._on_share_deliver,
                msg,
            )

    def _on_share_deliver(self, ev: _Event) -> None:
        msg: Message = ev.payload
        node = self.nodes[msg.receiver]
        sender_belief = robot_on_state_share(
            self.defn, node, msg, self.settings, self.two_sided
        )
        if sender_belief is not None:
            self.nodes[msg.sender].belief = sender_belief

    def _on_record(self, ev: _Event) -> None:
        cfg = self.config
        time = ev.tick / cfg.base_hz
        k = ev.tick // self.input_every
        for r in self.defn.robot_ids:
            node = self.nodes[r]
            true_state = self.defn.true_state(self.truth, r, k)
            self._record_state(str(r), ev.tick, time, node.layout, node.belief, true_state)
        if self.central is not None:
            layout, belief = self.central.layout, self.central.belief
            true_state = self.central.true_state(self.truth, k)
            self._record_state("cen", ev.tick, time, layout, belief, true_state)

    def _record_state(self, label, tick, time, layout, belief: Belief, true_state) -> None:
        full_nees = nees_of(belief, true_state)
        err_full = ominus(true_state, belief.mean, belief.side)
        self.trace.rows.append(
            TraceRow(
                self.trial,
                tick,
                time,
                label,
                "all",
                float(np.linalg.norm(err_full)),
                full_nees,
                float(np.trace(belief.cov)),
            )
        )
        for name, sl in zip(layout.names, layout.slices):
            err = err_full[sl]
            cov = belief.cov[sl, sl]
            sub_nees = float(err @ np.linalg.solve(cov, err))
            self.trace.rows.append(
                TraceRow(
                    self.trial,
                    tick,
                    time,
                    label,
                    name,
                    float(np.linalg.norm(err)),
                    sub_nees,
                    float(np.trace(cov)),
                )
            )
            self.trace.add_detail(label, name, tick, err, np.diag(cov))

    # -- loop ---------------------------------------------------------------

    def run_ticks(self, up_to_tick: int) -> None:
        while len(self.queue) and self.queue.peek_tick() <= up_to_tick:
            ev = self.queue.pop()
            ev.handler(ev)

    def run(self) -> ScenarioTrace:
        self.run_ticks(self.n_ticks)
        return self.trace


def build_world(
    config: ScenarioConfig,
    seed: int | None = None,
    trial: int = 0,
    naive: bool = False,
    centralized: bool = False,
    two_sided: bool = False,
) -> World:
    from .scenarios import build_definition

    definition = build_definition(config)
    return World(
        definition,
        seed=config.seed if seed is None else seed,
        trial=trial,
        naive=naive,
        centralized=centralized,
        two_sided=two_sided,
    )


def run_scenario(
    config: ScenarioConfig,
    seed: int | None = None,
    trial: int = 0,
    naive: bool = False,
    centralized: bool = False,
    two_sided: bool = False,
) -> ScenarioTrace:
    """Simulate one trial; identical (config, seed) pairs give identical
    traces."""
    from .config import validate

    validate(config)
    return build_world(config, seed, trial, naive, centralized, two_sided).run()
