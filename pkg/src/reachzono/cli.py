"""Command-line entry point.

    reachzono <stage> --config <path> [--out <dir>] [--seed <int>]
                      [--c-variant a|b|c] [--feedback raw|inflated]

Stages: simulate, build-model, propagate, fit-context, tighten, gen-labels,
init-weights, calibrate, predict, evaluate, report, plus `run-all` to execute
the full chain, `init-config` to write the default experiment config,
and `forward` to run the inference core on raw token prompts (the
cross-component parity hook).

Exit codes: 0 success, 2 missing upstream artifact, 3 config validation
failure, 4 numerical failure inside a stage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import conformal, ddreach, linsolve, pipeline, surrogate
from .config import ConfigError, ExperimentConfig, default_config_dict

EXIT_OK = 0
EXIT_MISSING_ARTIFACT = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4

RUN_ALL = [
    "simulate", "build-model", "propagate", "fit-context", "tighten",
    "gen-labels", "init-weights", "calibrate", "predict", "evaluate", "report",
]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reachzono", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in RUN_ALL + ["run-all"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--c-variant", choices=["a", "b", "c"], default=None,
                       help="override the default system's sensor variant")
        p.add_argument("--feedback", choices=["raw", "inflated"], default=None,
                       help="override the autoregressive feedback mode")
    p = sub.add_parser("init-config", help="write the default experiment config")
    p.add_argument("--out", default="config.json")
    p.add_argument("--c-variant", choices=["a", "b", "c"], default="a")
    p = sub.add_parser("forward", help="run the inference core on token prompts")
    p.add_argument("--weights", required=True, help="weight bundle directory")
    p.add_argument("--prompts", required=True, help="JSON file with a 'prompts' array")
    p.add_argument("--out", required=True, help="output JSON path")
    return parser


def _load_config(args) -> ExperimentConfig:
    path = Path(args.config)
    if not path.exists():
        raise pipeline.MissingArtifactError(str(path))
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"invalid JSON: {exc}") from exc
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.c_variant is not None and raw.get("system", {}).get("name") == "default-5d":
        raw["system"]["c_variant"] = args.c_variant
    if args.feedback is not None:
        raw["feedback"] = args.feedback
    return ExperimentConfig.from_dict(raw)


def _cmd_forward(args) -> int:
    wb = surrogate.load_bundle(Path(args.weights))
    prompts_path = Path(args.prompts)
    if not prompts_path.exists():
        raise pipeline.MissingArtifactError(str(prompts_path))
    prompts = json.loads(prompts_path.read_text())["prompts"]
    arch = wb.arch
    block = 1 + arch["k_g"]
    outputs = []
    for tokens in prompts:
        tokens = np.asarray(tokens, dtype=float)
        seq = surrogate.TokenSequence(
            tokens=tokens,
            roles=np.tile(np.arange(block) > 0, arch["n_o"]).astype(int),
            steps=np.repeat(np.arange(arch["n_o"]), block),
        )
        outputs.append(surrogate.forward(wb, seq).tolist())
    Path(args.out).write_text(pipeline.dumps_canonical({"outputs": outputs}))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.stage == "init-config":
            Path(args.out).write_text(pipeline.dumps_canonical(default_config_dict(args.c_variant)))
            return EXIT_OK
        if args.stage == "forward":
            return _cmd_forward(args)
        cfg = _load_config(args)
        stages = RUN_ALL if args.stage == "run-all" else [args.stage]
        for stage in stages:
            written = pipeline.run_stage(stage, cfg, Path(args.out))
            for path in written:
                print(f"{stage}: wrote {path}")
        return EXIT_OK
    except pipeline.MissingArtifactError as exc:
        print(f"error: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.StageError, ddreach.RankDeficientError, ddreach.PropagationError,
            linsolve.SolverError, conformal.InsufficientCalibrationError, ValueError) as exc:
        # ValueError covers shape/step mismatches between artifacts produced
        # under different configs; ConfigError is handled above as exit 3
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
