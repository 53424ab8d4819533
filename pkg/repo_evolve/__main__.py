from dotenv import load_dotenv

load_dotenv()

import functools
import logging
import os
from pathlib import Path

import click

from repo_evolve import main
from repo_evolve.errors import RepoEvolveError
from repo_evolve.models.config import load_config
from repo_evolve.util.print import format_history, format_report, format_scan
from repo_evolve.util.runtime import runtime

def handle_errors(command):
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except RepoEvolveError as error:
            click.echo(f"error: {error}", err=True)
            raise SystemExit(error.exit_code)

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="TOML config file (default: $REPO_EVOLVE_CONFIG)")
@click.option("--set", "overrides", multiple=True, help="Override a config value, e.g. --set model.epochs=20")
@click.option("--threads", type=int, default=None, help="Cap worker threads (default: $REPO_EVOLVE_THREADS)")
@click.option("--verbose", is_flag=True, help="Debug logging")
@click.pass_context
@handle_errors
def cli(ctx, config_path, overrides, threads, verbose):
    """Learn repository event chains and simulate how repositories evolve."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if config_path is None and os.environ.get("REPO_EVOLVE_CONFIG"):
        config_path = Path(os.environ["REPO_EVOLVE_CONFIG"])
    config = load_config(config_path, overrides)
    runtime.set_threads(threads or config.threads)
    ctx.obj = config


@cli.command()
@click.pass_obj
@handle_errors
def synth(config):
    """Write a synthetic event log and profile tables."""
    process = main.run_synth(config)
    click.echo(f"bayes accuracy {process['bayes_accuracy']:.4f}")


@cli.command()
@click.pass_obj
@handle_errors
def ingest(config):
    """Parse the event log into per-repo chains."""
    result = main.run_ingest(config)
    click.echo(f"{len(result.chains)} repos, {result.event_count} events, {result.rejected_count} rejected")


@cli.command("group-users")
@click.option("--scan-k", is_flag=True, help="Also write inertia and silhouette per k")
@click.pass_obj
@handle_errors
def group_users(config, scan_k):
    """Cluster users into groups and compute group activity."""
    model, rows = main.run_group_users(config, with_scan=scan_k)
    if rows:
        click.echo(format_scan(rows))
    click.echo(f"{model.n_groups} groups over {len(model.assignment)} users")


@cli.command("embed-repos")
@click.option("--apply-to", type=click.Path(path_type=Path), default=None,
              help="Embed the repos of another profile table with the stored aggregators")
@click.pass_obj
@handle_errors
def embed_repos(config, apply_to):
    """Learn repo embeddings from the co-creator graph."""
    embeddings = main.run_embed_repos(config, apply_to)
    click.echo(f"{len(embeddings.repo_ids)} repos embedded in {embeddings.dim} dimensions")


@cli.command()
@click.pass_obj
@handle_errors
def train(config):
    """Train the multi-task sequence model."""
    result = main.run_train(config)
    click.echo(format_history(result.history, result.best_epoch))


@cli.command()
@click.option("--out", type=click.Path(path_type=Path), required=True, help="TSV file for the encoded rows")
@click.option("--repo", "repo_ids", multiple=True, help="Repo to dump (repeatable; default: all trained repos)")
@click.pass_obj
@handle_errors
def encode(config, out, repo_ids):
    """Dump encoded input vectors as tab-separated text."""
    table = main.run_encode(config, out, repo_ids)
    click.echo(f"{len(table)} rows written to {out}")


@cli.command()
@click.option("--run", default="simulation", help="Run name for output files")
@click.pass_obj
@handle_errors
def simulate(config, run):
    """Roll every repo forward through the simulation window."""
    results = main.run_simulate(config, run)
    click.echo(f"{sum(len(r) for r in results.values())} events predicted for {len(results)} repos")


@cli.command()
@click.option("--run", default="prediction", help="Run name for output files")
@click.pass_obj
@handle_errors
def predict(config, run):
    """Predict each next event from the true history."""
    results = main.run_predict(config, run)
    click.echo(f"{sum(len(r) for r in results.values())} events predicted for {len(results)} repos")


@cli.command()
@click.argument("kind", type=click.Choice(main.BASELINES))
@click.option("--run", default=None, help="Run name (default: baseline_<kind>)")
@click.pass_obj
@handle_errors
def baseline(config, kind, run):
    """Random, previous-event or NoEvent baseline rollouts."""
    results = main.run_baseline(config, kind, run)
    click.echo(f"{sum(len(r) for r in results.values())} events for {len(results)} repos")


@cli.command()
@click.option("--run", default="simulation", help="Run whose table is scored")
@click.option("--predictions", type=click.Path(path_type=Path), default=None, help="Prediction table (overrides --run)")
@click.option("--truth", type=click.Path(path_type=Path), default=None, help="Truth table (default: truth.tsv)")
@click.option("--out", "prefix", default="report", help="Report file prefix")
@click.pass_obj
@handle_errors
def evaluate(config, run, predictions, truth, prefix):
    """Score predictions against the truth table."""
    workspace = main.Workspace(config.data.work_dir)
    report = main.run_evaluate(config, predictions or workspace.run_table(run), truth, prefix)
    click.echo(format_report(report.summary))


@cli.command()
@click.option("--seed", default=0, type=int)
@click.pass_obj
@handle_errors
def gradcheck(config, seed):
    """Compare autograd and finite-difference gradients on a tiny model."""
    errors = main.run_gradcheck(seed)
    for name, error in errors.items():
        click.echo(f"{name}: {error:.3g}")


if __name__ == "__main__":
    cli()
