"""
Shared command options and config overrides
"""
from pathlib import Path
from typing import Optional

import click

from app.core.config import load_config
from app.models.config import RunConfig
from app.models.session import TrainingMode, WeightMetric

METRIC_CHOICE = click.Choice([m.value for m in WeightMetric])
MODE_CHOICE = click.Choice([m.value for m in TrainingMode])


def run_options(func):
    """--config, --out-dir and --seed, shared by every config-driven command"""
    func = click.option("--seed", type=int, default=None, help="Master seed (overrides seed)")(func)
    func = click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
                        help="Output directory (overrides out_dir)")(func)
    return click.option("--config", "config_path", required=True,
                        type=click.Path(dir_okay=False, path_type=Path), help="JSON run configuration")(func)


def session_options(func):
    """Flags that override the training/session sections"""
    func = click.option("--sessions", type=click.IntRange(min=0), default=None,
                        help="Number of incremental sessions")(func)
    func = click.option("--mode", type=MODE_CHOICE, default=None, help="Training mode")(func)
    func = click.option("--metric", type=METRIC_CHOICE, default=None, help="Explanation distance")(func)
    return click.option("--lambda", "lam", type=click.FloatRange(min=0.0), default=None, help="EWC strength")(func)


def resolve_config(
    config_path: Path,
    out_dir: Optional[Path] = None,
    seed: Optional[int] = None,
    lam: Optional[float] = None,
    metric: Optional[str] = None,
    mode: Optional[str] = None,
    sessions: Optional[int] = None,
) -> RunConfig:
    """
    Load a run config and apply command-line overrides; flags win

    Raises:
        ConfigError: Invalid file or override
    """
    cfg = load_config(config_path)
    if out_dir is not None:
        cfg = cfg.model_copy(update={"out_dir": out_dir})
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
    if lam is not None:
        cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"lam": lam})})

    session_updates = {}
    if metric is not None:
        session_updates["metric"] = WeightMetric(metric)
    if mode is not None:
        session_updates["mode"] = TrainingMode(mode)
    if sessions is not None:
        session_updates["n_sessions"] = sessions
    if session_updates:
        cfg = cfg.model_copy(update={"sessions": cfg.sessions.model_copy(update=session_updates)})
    return cfg
