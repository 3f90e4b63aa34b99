"""
Incremental-learning commands: full runs, lambda sweeps and repeated comparisons
"""
import logging
from pathlib import Path
from typing import List, Optional

import click

from app.api.options import METRIC_CHOICE, MODE_CHOICE, resolve_config, run_options, session_options
from app.services.data_service import DataService
from app.services.session_service import SessionService

logger = logging.getLogger(__name__)


def parse_floats(ctx, param, value: str) -> List[float]:
    try:
        values = [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}")
    if not values or any(v < 0 for v in values):
        raise click.BadParameter("need at least one non-negative value")
    return values


@click.command("run-incremental")
@run_options
@session_options
@click.option("--resume-from", type=click.IntRange(min=0), default=None,
              help="Continue a stopped run after session K, using the checkpoints under --out-dir")
def run_incremental_command(config_path: Path, out_dir: Optional[Path], seed: Optional[int], lam: Optional[float],
                            metric: Optional[str], mode: Optional[str], sessions: Optional[int],
                            resume_from: Optional[int]):
    """Initial training plus one explanation-weighted session per validation chunk"""
    cfg = resolve_config(config_path, out_dir, seed, lam, metric, mode, sessions)
    datasets, retention = DataService.build_datasets(cfg)
    run = SessionService.run_incremental(
        datasets, cfg.architecture, SessionService.plan_from_config(cfg, datasets), cfg.train,
        cfg.sessions.mode, cfg.lime, cfg.out_dir, retention, resume_from=resume_from,
    )
    final = run.records[-1]
    click.echo(f"sessions={len(run.records) - 1} final_test_accuracy={final.test_accuracy:.6f} log={run.session_csv}")


@click.command("sweep-lambda")
@run_options
@session_options
@click.option("--lambdas", default="0,1,100", show_default=True, callback=parse_floats,
              help="Comma-separated EWC strengths")
def sweep_lambda_command(config_path: Path, out_dir: Optional[Path], seed: Optional[int], lam: Optional[float],
                         metric: Optional[str], mode: Optional[str], sessions: Optional[int],
                         lambdas: List[float]):
    """One weighted_ewc run per lambda (lambda_sweep.csv)"""
    cfg = resolve_config(config_path, out_dir, seed, lam, metric, mode, sessions)
    datasets, retention = DataService.build_datasets(cfg)
    rows = SessionService.sweep_lambda(
        datasets, cfg.architecture, SessionService.plan_from_config(cfg, datasets), cfg.train, lambdas,
        cfg.lime, cfg.out_dir, retention,
    )
    click.echo(f"runs={len(lambdas)} rows={len(rows)} csv={cfg.out_dir / 'lambda_sweep.csv'}")


@click.command("compare-modes")
@run_options
@session_options
@click.option("--seeds", "n_seeds", type=click.IntRange(min=1), default=5, show_default=True,
              help="Number of seeds, counted up from the master seed")
@click.option("--modes", multiple=True, type=MODE_CHOICE, help="Modes to compare (default: all)")
def compare_modes_command(config_path: Path, out_dir: Optional[Path], seed: Optional[int], lam: Optional[float],
                          metric: Optional[str], mode: Optional[str], sessions: Optional[int],
                          n_seeds: int, modes):
    """Mean test accuracy +- standard error per mode and session (compare_modes.csv)"""
    cfg = resolve_config(config_path, out_dir, seed, lam, metric, mode, sessions)
    datasets, _ = DataService.build_datasets(cfg)
    seeds = [cfg.seed + i for i in range(n_seeds)]
    rows = SessionService.compare_modes(
        datasets, cfg.architecture, SessionService.plan_from_config(cfg, datasets), cfg.train, cfg.lime,
        modes or [m for m in MODE_CHOICE.choices], seeds, cfg.out_dir,
    )
    for mode_name, session, mean, stderr, runs in rows:
        click.echo(f"{mode_name} session={session} accuracy={mean:.4f}+-{stderr:.4f} (n={runs})")


@click.command("compare-metrics")
@run_options
@session_options
@click.option("--seeds", "n_seeds", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--metrics", multiple=True, type=METRIC_CHOICE, help="Distances to compare (default: all)")
def compare_metrics_command(config_path: Path, out_dir: Optional[Path], seed: Optional[int], lam: Optional[float],
                            metric: Optional[str], mode: Optional[str], sessions: Optional[int],
                            n_seeds: int, metrics):
    """Final-session accuracy of weighted runs per explanation distance (compare_metrics.csv)"""
    cfg = resolve_config(config_path, out_dir, seed, lam, metric, mode, sessions)
    datasets, _ = DataService.build_datasets(cfg)
    seeds = [cfg.seed + i for i in range(n_seeds)]
    rows = SessionService.compare_metrics(
        datasets, cfg.architecture, SessionService.plan_from_config(cfg, datasets), cfg.train, cfg.lime,
        metrics or [m for m in METRIC_CHOICE.choices], seeds, cfg.out_dir,
    )
    for metric_name, mean, stderr, runs in rows:
        click.echo(f"{metric_name} accuracy={mean:.4f}+-{stderr:.4f} (n={runs})")
