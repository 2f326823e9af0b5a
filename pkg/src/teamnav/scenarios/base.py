"""Shared machinery for shipped scenario definitions."""

from __future__ import annotations

import dataclasses

import numpy as np

from ..config import ScenarioConfig
from ..filtering import MeasurementModel, PseudoModel
from ..groups import ManifoldElement
from ..models import StateLayout
from ..observability import TrajectoryLinearization
from ..simworld import CommGraph, SensorSpec


@dataclasses.dataclass
class Attachment:
    """A scheduled sensor: specs/models per firing variant (variants are
    cycled round-robin, e.g. antenna pairs) for the robots that process
    the value."""

    variants: list[tuple[SensorSpec, dict[int, MeasurementModel]]]
    robots: tuple[int, ...]
    _cursor: int = 0

    @property
    def spec(self) -> SensorSpec:
        return self.variants[0][0]

    def next_variant(self) -> int:
        idx = self._cursor % len(self.variants)
        self._cursor += 1
        return idx


class BaseScenario:
    """Common layout/bookkeeping; concrete scenarios fill in the models."""

    rmi_kind: str | None = None
    rmi_every_ticks: int = 0

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.robot_ids: list[int] = []
        self.graph: CommGraph | None = None
        self.layouts: dict[int, StateLayout] = {}
        self.sensor_attachments: dict[tuple, Attachment] = {}

    # hooks used by the generic linearization -------------------------------

    def full_process_jacobian(self, truth, robot: int, k: int) -> np.ndarray:
        """Jacobian of the robot's state transition with all inputs applied."""
        raise NotImplementedError

    def true_state(self, truth, robot: int, k: int) -> ManifoldElement:
        raise NotImplementedError

    def pseudo_model(self, receiver: int, sender: int) -> PseudoModel:
        raise NotImplementedError

    def simulate_truth(self, rng: np.random.Generator, n_steps: int):
        raise NotImplementedError

    def linearize(self, steps: int, seed: int) -> TrajectoryLinearization:
        """Stack per-step process/measurement/residual Jacobians along the
        true trajectory, every sensor firing at every step."""
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        truth = self.simulate_truth(rng, steps)
        offsets = {}
        start = 0
        for r in self.robot_ids:
            offsets[r] = start
            start += self.layouts[r].dof
        n_total = start

        f_blocks = []
        g_blocks = []
        phi_blocks = []
        for k in range(steps + 1):
            states = {r: self.true_state(truth, r, k) for r in self.robot_ids}
            g_rows = []
            for key in sorted(self.sensor_attachments):
                att = self.sensor_attachments[key]
                for _, models in att.variants:
                    for r in att.robots:
                        row = np.zeros((models[r].noise_cov.shape[0], n_total))
                        o = offsets[r]
                        row[:, o : o + self.layouts[r].dof] = models[r].jac(states[r])
                        g_rows.append(row)
            g_blocks.append(
                np.vstack(g_rows) if g_rows else np.zeros((0, n_total))
            )
            phi_rows = []
            for i, j in self.graph.edges:
                pm = self.pseudo_model(i, j)
                s_i = pm.jac_i(states[i], states[j])
                s_j = pm.jac_j(states[i], states[j])
                row = np.zeros((s_i.shape[0], n_total))
                row[:, offsets[i] : offsets[i] + self.layouts[i].dof] = s_i
                row[:, offsets[j] : offsets[j] + self.layouts[j].dof] = s_j
                phi_rows.append(row)
            phi_blocks.append(
                np.vstack(phi_rows) if phi_rows else np.zeros((0, n_total))
            )
            if k < steps:
                f_k = np.zeros((n_total, n_total))
                for r in self.robot_ids:
                    o = offsets[r]
                    dof = self.layouts[r].dof
                    f_k[o : o + dof, o : o + dof] = self.full_process_jacobian(
                        truth, r, k
                    )
                f_blocks.append(f_k)
        return TrajectoryLinearization(
            f_blocks=tuple(f_blocks),
            g_blocks=tuple(g_blocks),
            phi_blocks=tuple(phi_blocks),
            n_total=n_total,
        )
