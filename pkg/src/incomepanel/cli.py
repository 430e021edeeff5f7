"""Command-line entry point.

Exit status: 0 on success, 1 for usage errors, 2 for data errors (bad or
missing input files, invalid configuration values), 3 when a solver does
not converge.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from importlib import resources
from pathlib import Path

from .config import ExperimentConfig
from .errors import ConvergenceError, DataError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        p.add_argument("--codebook", help="codebook CSV")
        p.add_argument("--data", help="wide panel CSV")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="root seed (overrides the config)")
    p.add_argument("--out", help="output directory (default: reports)")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override one configuration key; repeatable"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="incomepanel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "ingest": "validate and unroll a panel, write the cleaned long table",
        "explore": "write the Spearman correlation matrix and the kept features",
        "baseline": "majority-class benchmark",
        "compare": "evaluate every configured model on one split",
        "longitudinal": "latest-year task against an equal-size multi-year task",
        "ablate": "drop each kept feature in turn",
        "explain": "Shapley attributions and the variable ranking",
        "synth": "write a synthetic panel and its codebook",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text), data=name != "synth")
    return parser


def load_config(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key in ("codebook", "data", "seed", "out"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return ExperimentConfig.load(args.config, **overrides)


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def cmd_ingest(config: ExperimentConfig, out: Path) -> list[Path]:
    from .experiments import ingest_summary, load_clean

    long, removed, uncovered = load_clean(config)
    long.write_csv(out / "long.csv")
    return [out / "long.csv", _write(out / "ingest_summary.txt", ingest_summary(long, removed, uncovered))]


def cmd_explore(config: ExperimentConfig, out: Path) -> list[Path]:
    from .experiments import load_clean, select_features

    long, _, _ = load_clean(config)
    corr, kept = select_features(config, long)
    corr.write_csv(out / "correlation.csv")
    return [out / "correlation.csv", _write(out / "kept_features.txt", "".join(f"{k}\n" for k in kept))]


def cmd_synth(config: ExperimentConfig, out: Path) -> list[Path]:
    from .synth import SynthSpec, generate_synthetic

    spec = SynthSpec(
        individuals=config.integer("synth.individuals") or 2000,
        person_effect=config.real("synth.person_effect"),
        noise=config.real("synth.noise"),
        missing_rate=config.real("synth.missing_rate"),
        invalid_income_rate=config.real("synth.invalid_income_rate"),
    )
    generate_synthetic(spec, config.seed, out / "panel.csv")
    with resources.as_file(resources.files("incomepanel.data").joinpath("codebook_nlsy97.csv")) as src:
        shutil.copyfile(src, out / "codebook.csv")
    return [out / "panel.csv", out / "codebook.csv"]


def cmd_experiment(kind: str):
    def run(config: ExperimentConfig, out: Path) -> list[Path]:
        from .experiments import run_experiment

        return run_experiment(config, kind).write(out)

    return run


COMMANDS = {
    "ingest": cmd_ingest,
    "explore": cmd_explore,
    "synth": cmd_synth,
    **{k: cmd_experiment(k) for k in ("baseline", "compare", "longitudinal", "ablate", "explain")},
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = load_config(args)
        if config.integer("seed") is None:
            raise UsageError("a seed is required (--seed or 'seed' in the config file)")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        out = Path(config["out"])
        out.mkdir(parents=True, exist_ok=True)
        for path in COMMANDS[args.command](config, out):
            print(path)
    except ConvergenceError as exc:
        print(f"error: did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
