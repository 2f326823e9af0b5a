"""Trial aggregation: trace export, error/consistency series, manifests."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import os

import numpy as np
from scipy.stats import chi2

from . import __version__
from .config import ScenarioConfig, config_hash
from .simworld import ScenarioTrace, run_scenario

TRACE_COLUMNS = (
    "trial",
    "step",
    "time",
    "robot",
    "substate",
    "error_norm",
    "nees",
    "cov_trace",
)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def trace_csv_text(traces: list[ScenarioTrace]) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for trace in traces:
        for row in trace.rows:
            lines.append(
                ",".join(
                    _fmt(v)
                    for v in (
                        row.trial,
                        row.step,
                        row.time,
                        row.robot,
                        row.substate,
                        row.error_norm,
                        row.nees,
                        row.cov_trace,
                    )
                )
            )
    return "\n".join(lines) + "\n"


@dataclasses.dataclass
class MetricSeries:
    """Per-step aggregates across trials for one (robot, substate) pair."""

    robot: str
    substate: str
    steps: np.ndarray
    times: np.ndarray
    rmse: np.ndarray
    nees_mean: np.ndarray  # trial-averaged, raw
    nees_normalized: np.ndarray  # divided by the substate dof
    dof: int
    envelope: tuple[float, float]  # 95% band for the trial-averaged value


def _group_rows(traces: list[ScenarioTrace]):
    grouped: dict[tuple[str, str], dict[int, list]] = {}
    for trace in traces:
        for row in trace.rows:
            grouped.setdefault((row.robot, row.substate), {}).setdefault(
                row.step, []
            ).append(row)
    return grouped


def _substate_dof(traces, robot, substate) -> int:
    trace = traces[0]
    if substate != "all":
        entries = trace.detail.get((robot, substate))
        if entries:
            return len(entries[0][1])
    # the stacked state: sum this robot's member dofs
    return sum(
        len(entries[0][1])
        for (r, _), entries in trace.detail.items()
        if r == robot
    )


def compute_metrics(traces: list[ScenarioTrace]) -> list[MetricSeries]:
    trials = len(traces)
    grouped = _group_rows(traces)
    out = []
    for (robot, substate), by_step in sorted(grouped.items()):
        steps = np.array(sorted(by_step))
        times = np.array([by_step[s][0].time for s in steps])
        rmse = np.array(
            [
                float(np.sqrt(np.mean([r.error_norm**2 for r in by_step[s]])))
                for s in steps
            ]
        )
        nees_mean = np.array(
            [float(np.mean([r.nees for r in by_step[s]])) for s in steps]
        )
        dof = _substate_dof(traces, robot, substate)
        lo = chi2.ppf(0.025, trials * dof) / trials
        hi = chi2.ppf(0.975, trials * dof) / trials
        out.append(
            MetricSeries(
                robot=robot,
                substate=substate,
                steps=steps,
                times=times,
                rmse=rmse,
                nees_mean=nees_mean,
                nees_normalized=nees_mean / dof,
                dof=dof,
                envelope=(float(lo), float(hi)),
            )
        )
    return out


def metrics_csv_text(series: list[MetricSeries]) -> str:
    lines = [
        "robot,substate,step,time,rmse,nees_mean,nees_normalized,envelope_lo,envelope_hi"
    ]
    for s in series:
        for i in range(len(s.steps)):
            lines.append(
                ",".join(
                    _fmt(v)
                    for v in (
                        s.robot,
                        s.substate,
                        int(s.steps[i]),
                        float(s.times[i]),
                        float(s.rmse[i]),
                        float(s.nees_mean[i]),
                        float(s.nees_normalized[i]),
                        s.envelope[0],
                        s.envelope[1],
                    )
                )
            )
    return "\n".join(lines) + "\n"


def post_transient(series: MetricSeries, fraction: float = 0.2) -> np.ndarray:
    start = int(len(series.steps) * fraction)
    return series.rmse[start:]


def summary_dict(
    config: ScenarioConfig, seeds: list[int], traces: list[ScenarioTrace]
) -> dict:
    series = compute_metrics(traces)
    final_rmse: dict = {}
    avg_nees: dict = {}
    for s in series:
        final_rmse.setdefault(s.robot, {})[s.substate] = float(s.rmse[-1])
        if s.substate == "all":
            start = int(len(s.steps) * 0.2)
            avg_nees[s.robot] = float(np.mean(s.nees_mean[start:]))
    message_bytes: dict = {}
    for trace in traces:
        for robot, kinds in trace.message_bytes.items():
            slot = message_bytes.setdefault(robot, {"state_share": 0, "rmi": 0})
            for kind, count in kinds.items():
                slot[kind] += count
    return {
        "config_hash": config_hash(config),
        "name": config.name,
        "trials": len(traces),
        "seeds": seeds,
        "final_rmse": final_rmse,
        "avg_nees_post_transient": avg_nees,
        "message_bytes": message_bytes,
        "version": __version__,
    }


def summary_json_text(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


@dataclasses.dataclass
class RunManifest:
    config: dict
    config_hash: str
    seeds: list[int]
    version: str
    outputs: list[str]

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "RunManifest":
        return RunManifest(**json.loads(text))


def trial_seeds(config: ScenarioConfig, trials: int) -> list[int]:
    return [config.seed + t for t in range(trials)]


def _run_one(args):
    config_dict, seed, trial, naive, centralized = args
    config = ScenarioConfig.from_dict(config_dict)
    return run_scenario(config, seed=seed, trial=trial, naive=naive, centralized=centralized)


def monte_carlo(
    config: ScenarioConfig,
    trials: int | None = None,
    jobs: int = 1,
    naive: bool = False,
    centralized: bool = False,
) -> tuple[list[ScenarioTrace], list[MetricSeries], dict]:
    """Run repeated trials with consecutive seeds and aggregate them."""
    n = config.trials if trials is None else trials
    if n < 1:
        raise ValueError("trial count must be >= 1")
    seeds = trial_seeds(config, n)
    tasks = [
        (config.to_dict(), seed, t, naive, centralized)
        for t, seed in enumerate(seeds)
    ]
    if jobs > 1 and n > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_run_one, tasks))
    else:
        traces = [_run_one(task) for task in tasks]
    series = compute_metrics(traces)
    summary = summary_dict(config, seeds, traces)
    return traces, series, summary


def write_outputs(
    out_dir: str,
    config: ScenarioConfig,
    seeds: list[int],
    traces: list[ScenarioTrace],
    series: list[MetricSeries],
    summary: dict,
) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    trace_path = os.path.join(out_dir, "trace.csv")
    with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(trace_csv_text(traces))
    paths.append(trace_path)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics_csv_text(series))
    paths.append(metrics_path)
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(summary_json_text(summary))
    paths.append(summary_path)
    manifest = RunManifest(
        config=config.to_dict(),
        config_hash=config_hash(config),
        seeds=seeds,
        version=__version__,
        outputs=[os.path.basename(p) for p in paths],
    )
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(manifest.to_json())
    paths.append(manifest_path)
    return paths
