"""``bars-lab <experiment-id> --config <path> --seed <u64> --out <dir>``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .config import E_VALUE, ConfigError, Key, ParsedConfig, dump, parse_file, _parse_u64
from .diffusion import InfeasibleMeshError
from .experiments import (
    EXPERIMENTS,
    PARAMS,
    RUNNERS,
    ExperimentResult,
    InfeasibleExperiment,
)
from .fixtures import DiffusionFixture, FixtureMissingError, MetricFixture, load_fixture
from .io import SCHEMA_VERSION, emit_csv, emit_json

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_FIXTURE_MISSING = 2
EXIT_INFEASIBLE = 3
EXIT_CONFIG = 4

log = logging.getLogger("bars_lab")


def experiment_schema(raw: dict) -> dict:
    exp = raw.get("experiment", {}).get("id")
    schema = {"experiment": {"id": Key("str", choices=EXPERIMENTS), "fixture": Key("path")}}
    if exp in PARAMS:
        schema["params"] = PARAMS[exp]
    return schema


@dataclass
class ExperimentConfig:
    experiment: str
    fixture_path: Path
    params: dict
    parsed: ParsedConfig
    seed: int | None = None
    out_dir: Path | None = None

    def normalized(self) -> str:
        return dump(self.parsed, experiment_schema(self.parsed.values))


def parse_config(path) -> ExperimentConfig:
    """Validated config; the fixture path is resolved relative to the config file."""
    parsed = parse_file(path, experiment_schema)
    exp = parsed["experiment"]
    fixture = Path(exp["fixture"])
    if not fixture.is_absolute():
        fixture = Path(path).parent / fixture
    return ExperimentConfig(exp["id"], fixture, dict(parsed.values.get("params", {})), parsed)


def _fixture_for(config: ExperimentConfig):
    fx = load_fixture(config.fixture_path)
    want = MetricFixture if config.experiment == "gamma2" else DiffusionFixture
    if not isinstance(fx, want):
        raise ConfigError(E_VALUE, f"experiment {config.experiment} needs a "
                          f"{'metric' if want is MetricFixture else 'diffusion'} fixture", "fixture",
                          config.parsed.lines.get(("experiment", "fixture")), config.parsed.path)
    return fx


def result_rows(result: ExperimentResult, seed: int) -> list[dict]:
    base = {"schema_version": SCHEMA_VERSION, "experiment": result.experiment, "fixture": result.fixture,
            "seed": seed, "status": result.status}
    return [{**base, **row} for row in result.rows]


def summary_dict(result: ExperimentResult, seed: int, config: ExperimentConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": result.experiment,
        "fixture": result.fixture,
        "seed": seed,
        "claim": result.claim,
        "verdict": result.verdict,
        "checks": result.checks,
        "failed_checks": result.failed,
        "metrics": result.metrics,
        "status": result.status,
        "params": config.params,
    }


def run_experiment(config: ExperimentConfig, seed: int, out_dir) -> tuple[int, ExperimentResult | None]:
    """Run, write rows.csv and summary.json, and return (exit status, result)."""
    out = Path(out_dir)
    try:
        fixture = _fixture_for(config)
        result = RUNNERS[config.experiment](fixture, config.params, seed)
    except (InfeasibleExperiment, InfeasibleMeshError) as exc:
        emit_json({"schema_version": SCHEMA_VERSION, "experiment": config.experiment, "seed": seed,
                   "claim": None, "verdict": False, "status": "infeasible", "error": str(exc)},
                  out / "summary.json")
        log.error("infeasible: %s", exc)
        return EXIT_INFEASIBLE, None
    emit_csv(result_rows(result, seed), out / "rows.csv")
    emit_json(summary_dict(result, seed, config), out / "summary.json")
    return (EXIT_OK if result.verdict else EXIT_ASSERTION), result


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bars-lab", description="Run a seeded BARS workbench experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", required=True, type=_parse_u64, help="64-bit unsigned master seed")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--dump-config", action="store_true", help="print the normalized config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = parse_config(args.config)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIXTURE_MISSING
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if config.experiment != args.experiment:
        print(f"error: config is for experiment {config.experiment!r}, not {args.experiment!r}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(config.normalized())
        return EXIT_OK
    try:
        status, result = run_experiment(config, args.seed, args.out)
    except FixtureMissingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIXTURE_MISSING
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if result is not None:
        line = "PASS" if result.verdict else "FAIL " + ", ".join(result.failed)
        print(f"{result.experiment} [{result.claim}] {line}")
    return status


if __name__ == "__main__":
    sys.exit(main())
