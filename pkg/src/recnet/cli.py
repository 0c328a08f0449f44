"""Command line entry point: ``recnet simulate | fit | evaluate | sweep | verify``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import datagen, harness, training
from .exceptions import FitFailure
from .network import RecurrentNetwork


def _echo_json(doc) -> None:
    click.echo(json.dumps(doc, indent=2))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Recurrent ReLU network regression for dependent data."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def simulate(spec_path, n, seed, out):
    """Simulate a trajectory and write dataset.csv plus dataset.json to OUT."""
    data = datagen.simulate(datagen.ModelSpec.load(spec_path), n, seed)
    data.save(out)
    click.echo(f"wrote {data.n} rows to {Path(out) / 'dataset.csv'}")


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def fit(data_dir, config_path, out):
    """Fit a network; writes the model JSON and a .report.json next to it."""
    data = datagen.Dataset.load(data_dir)
    cfg = training.EstimatorConfig.from_dict(json.loads(Path(config_path).read_text()))
    try:
        net, report = training.fit(data, cfg)
    except FitFailure as exc:
        raise click.ClickException(str(exc))
    training_block = {**cfg.to_dict(), "n_train": data.n}
    net.save(out, extra={"training": training_block})
    report.save(Path(out).with_suffix(".report.json"))
    _echo_json(report.to_dict())


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test-points", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def evaluate(model_path, spec_path, test_points, seed):
    """Monte Carlo excess and total risk of a fitted model against the known regression function."""
    doc = json.loads(Path(model_path).read_text())
    net = RecurrentNetwork.from_dict(doc)
    block = doc.get("training")
    if block is None:
        raise click.ClickException("model file has no 'training' block (n_train, c2)")
    spec = datagen.ModelSpec.load(spec_path)
    _echo_json(harness.evaluate_excess_risk(net, spec, int(block["n_train"]), float(block["c2"]),
                                            test_points, seed))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (defaults to output_dir from the config).")
def sweep(config_path, out):
    """Rate sweep over n_grid x replications; writes sweep.csv and summary.json."""
    cfg = harness.ExperimentConfig.load(config_path)
    out_dir = Path(out or cfg.output_dir)
    harness.rate_sweep(cfg, out_dir)
    summary = json.loads((out_dir / "summary.json").read_text())
    summary.pop("config_echo")
    _echo_json(summary)


@main.command()
@click.option("--suite", type=click.Choice(sorted(harness.SUITES)), required=True)
@click.option("--trials", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def verify(suite, trials, seed):
    """Randomized property suite; exits with status 1 if any trial fails."""
    result = harness.verify(suite, seed, trials)
    result["worst_case"] = float(result["worst_case"])
    _echo_json(result)
    if result["failed"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
