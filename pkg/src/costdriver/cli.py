"""Command-line interface for the cost driver pipeline.

Exit status: 0 on success, 1 on configuration errors, 2 on stage failures.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .pipeline import ConfigError, StageError, load_pipeline_config, run_pipeline, run_stage


def _options(command):
    command = click.option("--config", "config_path", required=True, type=click.Path(), help="Pipeline config (YAML).")(command)
    command = click.option("--seed", type=int, default=None, help="Override the config seed.")(command)
    command = click.option("--out", "out_dir", type=click.Path(), default=None, help="Override the output directory.")(command)
    return command


@click.group()
def cli() -> None:
    """Detect, decompose, and rank emerging cost drivers in claims data."""


def _run(stage: str | None, config_path: str, seed: int | None, out_dir: str | None) -> None:
    try:
        cfg = load_pipeline_config(Path(config_path), seed_override=seed, out_override=out_dir)
        if stage is None:
            run_pipeline(cfg)
        else:
            run_stage(stage, cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    except StageError as exc:
        click.echo(str(exc), err=True)
        sys.exit(2)


@cli.command(help="Run every stage in order.")
@_options
def run(config_path: str, seed: int | None, out_dir: str | None) -> None:
    _run(None, config_path, seed, out_dir)


@cli.command(help="Materialize the configured synthetic scenario.")
@_options
def generate(config_path: str, seed: int | None, out_dir: str | None) -> None:
    _run("generate", config_path, seed, out_dir)


@cli.command(help="Build drill-path KPI panels from claims and enrollment.")
@_options
def aggregate(config_path: str, seed: int | None, out_dir: str | None) -> None:
    _run("aggregate", config_path, seed, out_dir)


@cli.command(help="Learn thresholds and run change detection per path.")
@_options
def detect(config_path: str, seed: int | None, out_dir: str | None) -> None:
    _run("detect", config_path, seed, out_dir)


@cli.command(help="Decompose the impact of change per path.")
@_options
def impact(config_path: str, seed: int | None, out_dir: str | None) -> None:
    _run("impact", config_path, seed, out_dir)


@cli.command(help="Identify offsetting treatments and price migration flows.")
@_options
def offsets(config_path: str, seed: int | None, out_dir: str | None) -> None:
    _run("offsets", config_path, seed, out_dir)


@cli.command(help="Write the ranked driver report, plot data, and figures.")
@_options
def report(config_path: str, seed: int | None, out_dir: str | None) -> None:
    _run("report", config_path, seed, out_dir)


def main() -> None:
    cli(standalone_mode=True)


if __name__ == "__main__":
    main()
