"""Command-line entry points: mmtlab <subcommand> --config <path>."""

from __future__ import annotations

import json
import sys

import click

from .config import ExperimentConfig
from .evaluation import load_rankings, rank_score
from .pipeline import StageError, Workspace, stage_bpe, stage_encode, \
    stage_evaluate, stage_mask, stage_probe, stage_report, stage_train, \
    stage_translate
from .reporting import format_rank_table


def _common(f):
    f = click.option("--config", "config_path", required=True,
                     type=click.Path(exists=True, dir_okay=False),
                     help="experiment config file (key = value lines)")(f)
    f = click.option("--seed", type=int, default=None,
                     help="override the config seed")(f)
    f = click.option("--out", "out_dir", type=click.Path(file_okay=False),
                     default=None, help="override the output directory")(f)
    f = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                     help="override any config key (repeatable)")(f)
    return f


def _workspace(config_path, seed, out_dir, overrides) -> Workspace:
    kv = {}
    for item in overrides:
        if "=" not in item:
            raise click.UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        kv[key.strip()] = value.strip()
    try:
        cfg = ExperimentConfig.from_file(config_path, seed=seed,
                                         out_dir=out_dir, overrides=kv)
        return Workspace.open(cfg)
    except (ValueError, OSError) as e:
        _fail("config", str(e))


def _fail(stage: str, message: str):
    click.echo(f"[{stage}] {message}", err=True)
    sys.exit(1)


def _run(stage_fn, ws: Workspace) -> None:
    try:
        stage_fn(ws)
    except StageError as e:
        _fail(e.stage, e.args[0] if e.args else str(e))
    except (ValueError, OSError) as e:
        _fail("pipeline", str(e))


@click.group()
def main():
    """Desk-scale multimodal translation experiments."""


@main.command()
@_common
def mask(config_path, seed, out_dir, overrides):
    """Write the masked source variants and masking statistics."""
    ws = _workspace(config_path, seed, out_dir, overrides)
    _run(stage_mask, ws)
    stats = ws.cfg.out_dir / "masked" / "stats.jsonl"
    if stats.exists():
        for line in stats.read_text(encoding="utf-8").splitlines():
            row = json.loads(line)
            click.echo(f"{row['variant']:<4} {row['split']:<6} "
                       f"masked {100 * row['masked_fraction']:.2f}%")


@main.command("learn-bpe")
@_common
def learn_bpe(config_path, seed, out_dir, overrides):
    """Learn the per-variant source and target subword models."""
    _run(stage_bpe, _workspace(config_path, seed, out_dir, overrides))


@main.command()
@_common
def encode(config_path, seed, out_dir, overrides):
    """Apply the subword models to every split."""
    _run(stage_encode, _workspace(config_path, seed, out_dir, overrides))


@main.command()
@_common
def train(config_path, seed, out_dir, overrides):
    """Train every configured (setup, variant) cell."""
    _run(stage_train, _workspace(config_path, seed, out_dir, overrides))


@main.command()
@_common
def translate(config_path, seed, out_dir, overrides):
    """Beam-decode the test split for every trained cell."""
    _run(stage_translate, _workspace(config_path, seed, out_dir, overrides))


@main.command()
@_common
@click.option("--rankings", "rankings_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="also aggregate a human-ranking TSV "
                   "(item, annotator, system, rank)")
def evaluate(config_path, seed, out_dir, overrides, rankings_path):
    """Score the decoded test sets with corpus BLEU."""
    ws = _workspace(config_path, seed, out_dir, overrides)
    try:
        rows = stage_evaluate(ws)
    except StageError as e:
        _fail(e.stage, e.args[0] if e.args else str(e))
    for row in rows:
        click.echo(f"{row['setup']:<14} {row['variant']:<4} "
                   f"BLEU {row['bleu']:.2f}")
    if rankings_path:
        try:
            items = load_rankings(rankings_path)
            systems = sorted({s for item in items for s in item.ranks})
            scores = rank_score(items, systems)
        except ValueError as e:
            _fail("evaluate", str(e))
        out = ws.rel("report", "ranking.txt")
        out.write_text(format_rank_table(scores), encoding="utf-8")
        click.echo(format_rank_table(scores), nl=False)


@main.command()
@_common
def probe(config_path, seed, out_dir, overrides):
    """Incongruent-decoding probe for every visual cell."""
    ws = _workspace(config_path, seed, out_dir, overrides)
    try:
        rows = stage_probe(ws)
    except StageError as e:
        _fail(e.stage, e.args[0] if e.args else str(e))
    for row in rows:
        click.echo(f"{row['setup']:<14} {row['variant']:<4} "
                   f"congruent {row['congruent_bleu']:.2f} "
                   f"incongruent {row['incongruent_bleu']:.2f} "
                   f"delta {row['delta']:+.2f}")


@main.command()
@_common
def report(config_path, seed, out_dir, overrides):
    """Assemble the result tables, JSONL records and figures."""
    _run(stage_report, _workspace(config_path, seed, out_dir, overrides))


@main.command("run-all")
@_common
def run_all(config_path, seed, out_dir, overrides):
    """Run the whole pipeline: mask, BPE, encode, train, translate,
    evaluate, probe and report."""
    ws = _workspace(config_path, seed, out_dir, overrides)
    _run(stage_report, ws)
    click.echo(f"done; report under {ws.cfg.out_dir / 'report'}")


if __name__ == "__main__":
    main()
