"""Command-line surface: run scenarios, rank observability, sweep the
state-sharing rate, and tabulate message sizes."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config, validate
from .metrics import monte_carlo, write_outputs

USAGE_EXIT = 64
CONFIG_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _resolve_config(name_or_path: str) -> ScenarioConfig:
    from .scenarios import BUILTIN

    if name_or_path in BUILTIN:
        return BUILTIN[name_or_path]()
    if not os.path.exists(name_or_path):
        raise ConfigError(
            [f"no such config file or builtin scenario: {name_or_path!r}"]
        )
    return load_config(name_or_path)


def _build_parser() -> _Parser:
    parser = _Parser(prog="teamnav", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate trials and write trace/summary")
    run.add_argument("config", help="config JSON path or builtin name")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--naive", action="store_true", help="disable covariance intersection")
    run.add_argument("--centralized", action="store_true", help="also run the joint reference filter")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--out", default=None, help="output directory")

    obs = sub.add_parser("observability", help="rank test along the true trajectory")
    obs.add_argument("config")
    obs.add_argument("--steps", type=int, default=20)
    obs.add_argument("--seed", type=int, default=None)
    obs.add_argument("--no-pseudo", action="store_true", help="drop the inter-robot rows")

    sweep = sub.add_parser("sweep-share-rate", help="re-run with different sharing rates")
    sweep.add_argument("config")
    sweep.add_argument("--rates", type=float, nargs="+", required=True)
    sweep.add_argument("--trials", type=int, default=None)
    sweep.add_argument("--out", default=None)

    bench = sub.add_parser("bench-message-size", help="increment vs raw-input bytes")
    bench.add_argument("config")
    bench.add_argument("--steps", type=int, nargs="+", default=[1, 10, 100, 1000])
    return parser


def _cmd_run(args) -> int:
    config = _resolve_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    validate(config)
    traces, series, summary = monte_carlo(
        config,
        trials=args.trials,
        jobs=args.jobs,
        naive=args.naive,
        centralized=args.centralized,
    )
    out_dir = args.out or f"out-{config.name}"
    from .metrics import trial_seeds

    n = config.trials if args.trials is None else args.trials
    paths = write_outputs(out_dir, config, trial_seeds(config, n), traces, series, summary)
    for robot, rmse in sorted(summary["final_rmse"].items()):
        own = {k: v for k, v in rmse.items() if k != "all"}
        print(f"robot {robot}: final rmse " + json.dumps(own, sort_keys=True))
    print(f"wrote {', '.join(paths)}")
    return 0


def _cmd_observability(args) -> int:
    from .observability import build_observability_matrix, is_observable, linearize_scenario

    config = _resolve_config(args.config)
    lin = linearize_scenario(config, args.steps, seed=args.seed)
    if args.no_pseudo:
        import dataclasses

        lin = dataclasses.replace(
            lin,
            phi_blocks=tuple(
                np.zeros((0, lin.n_total)) for _ in lin.phi_blocks
            ),
        )
    report = is_observable(build_observability_matrix(lin))
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    config = _resolve_config(args.config)
    results = {}
    for rate in args.rates:
        swept = config.replace(share_hz=rate, name=f"{config.name}-share{rate:g}")
        validate(swept)
        _, series, _ = monte_carlo(swept, trials=args.trials)
        own_rmse = []
        for s in series:
            if s.substate.startswith("pose:") and s.robot == s.substate.split(":")[1]:
                start = int(len(s.rmse) * 0.2)
                own_rmse.append(float(np.mean(s.rmse[start:])))
            elif s.substate.startswith("r:") and s.robot == s.substate.split(":")[1]:
                start = int(len(s.rmse) * 0.2)
                own_rmse.append(float(np.mean(s.rmse[start:])))
        results[f"{rate:g}"] = float(np.mean(own_rmse))
        print(f"share {rate:g} Hz: mean post-transient own-state rmse {results[f'{rate:g}']:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "sweep.json"), "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return 0


def _cmd_bench(args) -> int:
    from .scenarios import build_definition
    from .preint import raw_input_nbytes, serialize_rmi

    config = _resolve_config(args.config)
    defn = build_definition(config)
    if defn.rmi_kind is None:
        print("scenario shares no odometry; nothing to measure")
        return 0
    rng = np.random.default_rng(0)
    input_dim = 3 if defn.rmi_kind == "wheel" else 6
    print("steps,increment_bytes,raw_input_bytes")
    for steps in args.steps:
        rmi = defn.own_rmi_identity(defn.robot_ids[0], 0)
        for _ in range(steps):
            u = 0.1 * rng.standard_normal(input_dim)
            rmi = defn.own_rmi_increment(defn.robot_ids[0], rmi, u)
        print(f"{steps},{len(serialize_rmi(rmi))},{raw_input_nbytes(steps, input_dim)}")
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "observability":
            return _cmd_observability(args)
        if args.command == "sweep-share-rate":
            return _cmd_sweep(args)
        if args.command == "bench-message-size":
            return _cmd_bench(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return CONFIG_EXIT
    return 0


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
