"""Command-line entry points for training and experiments.

Every experiment subcommand accepts a JSON config (--config) whose keys
mirror ExperimentSpec / TrainConfig fields; individual flags override the
config.  Outputs land in --out as records.csv, summary.csv and meta.json.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .bench import ExperimentSpec
from .problem import ProblemDistribution
from .train import TrainConfig, run_curriculum, write_training_log


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _distribution(name, config):
    if name:
        return ProblemDistribution(name)
    if "distribution" in config:
        d = config["distribution"]
        return ProblemDistribution(d["kind"], d.get("mean", 0.0), d.get("sigma", 1.0))
    return ProblemDistribution.lognormal()


def _experiment_spec(args, kind):
    raw = _load_config(args.config)
    spec_kwargs = {k: v for k, v in raw.items() if k != "distribution"}
    spec_kwargs.setdefault("kind", kind)
    if args.seed is not None:
        spec_kwargs["seed"] = args.seed
    if args.out:
        spec_kwargs["out_dir"] = args.out
    if getattr(args, "model", None):
        spec_kwargs["model_path"] = args.model
    if getattr(args, "grid", None):
        spec_kwargs["grid_sides"] = tuple(args.grid)
    if getattr(args, "instances", None):
        spec_kwargs["instance_count"] = args.instances
    if getattr(args, "cycle", None):
        spec_kwargs["cycle_kind"] = args.cycle
    if getattr(args, "builders", None):
        spec_kwargs["builders"] = tuple(args.builders)
    for key in ("grid_sides", "builders", "sigmas"):
        if key in spec_kwargs and not isinstance(spec_kwargs[key], tuple):
            spec_kwargs[key] = tuple(spec_kwargs[key])
    spec = ExperimentSpec(**spec_kwargs)
    spec.distribution = _distribution(getattr(args, "dist", None), raw)
    return spec


def _add_common(sub, with_model=True):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--grid", type=int, nargs="+", help="grid side(s) in cells")
    sub.add_argument("--instances", type=int, help="instances per grid")
    sub.add_argument("--cycle", choices=("v", "w", "two-grid"))
    sub.add_argument("--dist", choices=("lognormal", "uniform01"))
    sub.add_argument("--builders", nargs="+",
                     choices=("bilinear", "blackbox", "learned"))
    if with_model:
        sub.add_argument("--model", help="trained model JSON path")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="mglab",
                                     description="Multigrid prolongation laboratory")
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="run the three-stage curriculum")
    p_train.add_argument("--config", help="JSON config with TrainConfig fields")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--dist", choices=("lognormal", "uniform01"))

    for name, help_text in (
        ("spectral", "two-grid spectral radius table"),
        ("cycles", "V/W cycle convergence runs"),
        ("success", "paired success rate, learned vs Black-Box"),
        ("disk", "disk-domain convergence runs"),
        ("eps-sweep", "diagonal-shift sweep"),
    ):
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)

    p_fc = subs.add_parser("fourier-check", help="dense-vs-fast Fourier equivalence gate")
    p_fc.add_argument("--corrupt-phase", action="store_true",
                      help="inject a phase error (negative control; must fail)")

    args = parser.parse_args(argv)

    if args.command == "train":
        raw = _load_config(args.config)
        dist = _distribution(args.dist, raw)
        raw.pop("distribution", None)
        for key in ("stage_sizes", "stage_grids", "lr_exponent_range"):
            if key in raw:
                raw[key] = tuple(raw[key])
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = TrainConfig(distribution=dist, **raw)
        model, log = run_curriculum(cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "model.json")
        write_training_log(log, out / "training_log.csv")
        finite = [r["loss"] for r in log if r["loss"] == r["loss"]]
        print(f"trained {model.depth}-layer width-{model.width} model; "
              f"final loss {finite[-1]:.4f}; saved to {out / 'model.json'}")
        return 0

    if args.command == "fourier-check":
        report = bench.run_fourier_check(corrupt_phase=args.corrupt_phase)
        return 0 if report["passed"] else 1

    runners = {
        "spectral": bench.run_spectral,
        "cycles": bench.run_cycles,
        "success": bench.run_success,
        "disk": bench.run_disk,
        "eps-sweep": bench.run_eps_sweep,
    }
    spec = _experiment_spec(args, args.command.replace("-", "_"))
    result = runners[args.command](spec)
    if args.command == "eps-sweep":
        for sigma, res in result.items():
            for row in res["summary"]:
                print(f"sigma={sigma:g} {row['builder']} grid={row['grid']} "
                      f"{row['cycle']}: {row['mean']:.4f} +- {row['std']:.4f}")
    else:
        for row in result["summary"]:
            rate = row.get("successRate")
            rate_txt = "" if rate is None else f"  success {rate:.0%}"
            print(f"{row['builder']} grid={row['grid']} {row['cycle']}: "
                  f"{row['mean']:.4f} +- {row['std']:.4f}{rate_txt}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
