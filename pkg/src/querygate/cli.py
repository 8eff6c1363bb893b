"""Command-line entry points.

Subcommands: ``synth`` (generate a labeled scene), ``features`` (build the
feature stack for a raster), ``run`` (execute an experiment config),
``report`` (print the summary table of a result directory), ``serve``
(start the interactive labeling service). The QUERYGATE_LOG environment
variable sets log verbosity; nothing else is read from the environment.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from .experiment import ConfigError, ExperimentConfig, run_experiment, summarize
from .features import MorphConfig, build_feature_stack, store_feature_stack
from .raster import (
    LabelMap,
    SceneSpec,
    generate_synthetic_scene,
    load_raster,
    store_label_map,
    store_raster,
)


def _setup_logging() -> None:
    level = os.environ.get("QUERYGATE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main() -> None:
    """Confidence-gated active learning for raster pixel classification."""
    _setup_logging()


@main.command()
@click.argument("spec_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_base", type=click.Path())
def synth(spec_path: str, out_base: str) -> None:
    """Generate a synthetic scene from a SceneSpec JSON file.

    Writes <out_base>.json/.bin (raster) and <out_base>_labels.json/.bin.
    """
    spec = SceneSpec.from_dict(json.loads(Path(spec_path).read_text()))
    raster, labels = generate_synthetic_scene(spec)
    store_raster(raster, out_base)
    store_label_map(labels, out_base + "_labels")
    click.echo(f"scene {spec.width}x{spec.height}x{spec.bands}, {spec.omega} classes -> {out_base}")


@main.command()
@click.argument("raster_path", type=click.Path(exists=True))
@click.argument("out_base", type=click.Path())
@click.option("--radii", default="1,3", show_default=True,
              help="Comma-separated disk radii for the morphological features.")
def features(raster_path: str, out_base: str, radii: str) -> None:
    """Build the standardized feature stack for a stored raster."""
    parsed = tuple(int(r) for r in radii.split(","))
    raster = load_raster(raster_path)
    stack = build_feature_stack(raster, MorphConfig(radii=parsed))
    store_feature_stack(stack, out_base)
    click.echo(f"{stack.dim} features ({', '.join(stack.names)}) -> {out_base}")


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("outdir", type=click.Path(file_okay=False))
def run(config_path: str, outdir: str) -> None:
    """Run an experiment config; writes curves, snapshots, and maps."""
    try:
        config = ExperimentConfig.from_path(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    curves = run_experiment(config, outdir)
    click.echo(f"{len(curves)} runs complete -> {outdir}")
    click.echo(summarize(outdir))


@main.command()
@click.argument("outdir", type=click.Path(exists=True, file_okay=False))
def report(outdir: str) -> None:
    """Print the per-method summary table of a finished experiment."""
    try:
        click.echo(summarize(outdir))
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--listen", default="127.0.0.1:8000", show_default=True,
              help="host:port to bind.")
def serve(config_path: str, listen: str) -> None:
    """Serve interactive labeling sessions over HTTP."""
    import uvicorn

    from .service import build_app, ServiceConfig

    host, _, port = listen.partition(":")
    app = build_app(ServiceConfig.from_path(config_path))
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))


if __name__ == "__main__":
    sys.exit(main())
