"""Command-line surface: train, eval, ablate, predict, synth."""

import sys
from pathlib import Path

import click

from . import data as data_mod
from .errors import LevelsegError
from .trainer import (RunConfig, ablate as run_ablate, evaluate, predict as
                      run_predict, train as run_train, train_size_study)


@click.group()
def cli():
    """Few-shot segmentation with level-set shape priors."""


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(e.exit_code)
    except click.Abort:
        sys.exit(1)
    except LevelsegError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(2)


def _load_config(path, seed, no_frozen_encoder, no_reg_head):
    config = RunConfig.from_json(path)
    if seed is not None:
        config.seed = seed
    if no_frozen_encoder:
        config.frozen_encoder = False
    if no_reg_head:
        config.reg_head = False
    return config


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--train-size", "train_sizes", type=int, multiple=True,
              help="Override train_size; repeat the flag to run a sample-size "
                   "study and emit a size-columned table.")
@click.option("--no-frozen-encoder", is_flag=True, default=False)
@click.option("--no-reg-head", is_flag=True, default=False)
@click.option("--resume", type=click.Path(exists=True), default=None,
              help="Continue from a saved last-state checkpoint.")
def train(config_path, seed, train_sizes, no_frozen_encoder, no_reg_head, resume):
    """Train a model from a JSON run config."""
    config = _load_config(config_path, seed, no_frozen_encoder, no_reg_head)
    if len(train_sizes) > 1:
        study = train_size_study(config, sorted(train_sizes))
        click.echo(study["table"])
        return
    if len(train_sizes) == 1:
        config.train_size = train_sizes[0]
    res = run_train(config, resume_from=resume)
    click.echo(f"best val DICE: {res['state'].best_val_dice:.2f}")
    click.echo(f"checkpoints in {res['out_dir']}")


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", type=click.Choice(["train", "val", "test"]))
@click.option("--out", "out_dir", required=True, type=click.Path())
def eval_cmd(checkpoint, split, out_dir):
    """Evaluate a checkpoint on a dataset split."""
    report = evaluate(checkpoint, split, out_dir=out_dir)
    click.echo(report.format_table(label=split))
    und = report.overall["asd_undefined_count"]
    if und:
        click.echo(f"(ASD undefined for {und} rows; excluded from aggregates)")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def ablate(config_path, seed):
    """Train and compare the full model and its two ablated variants."""
    config = _load_config(config_path, seed, False, False)
    res = run_ablate(config)
    click.echo(res["table"])


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--dump-levelset", is_flag=True, default=False,
              help="Also write the raw level-set regression maps as .npy.")
def predict(checkpoint, in_dir, out_dir, dump_levelset):
    """Segment every PNG in a directory."""
    paths = sorted(Path(in_dir).glob("*.png"))
    if not paths:
        raise click.ClickException(f"no .png files in {in_dir}")
    written, failures = run_predict(checkpoint, paths, out_dir,
                                    dump_levelset=dump_levelset)
    for p in written:
        click.echo(p)
    for path, err in failures:
        click.echo(f"error: {path}: {err}", err=True)
    if failures:
        sys.exit(1)


@cli.command()
@click.option("--seed", type=int, required=True)
@click.option("--n", type=int, required=True, help="Training samples to generate.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--size", type=int, default=64)
@click.option("--difficulty", default="easy",
              type=click.Choice(list(data_mod.DIFFICULTIES)))
@click.option("--n-val", type=int, default=20)
@click.option("--n-test", type=int, default=50)
def synth(seed, n, out_dir, size, difficulty, n_val, n_test):
    """Generate a synthetic dataset with train/val/test splits on disk."""
    splits = {
        "train": data_mod.synth_generate(seed, n, size, difficulty, stream=0),
        "val": data_mod.synth_generate(seed, n_val, size, difficulty, stream=1),
        "test": data_mod.synth_generate(seed, n_test, size, difficulty, stream=2),
    }
    manifest = data_mod.save_dataset(out_dir, splits, classes=2)
    click.echo(str(manifest))


if __name__ == "__main__":
    main()
