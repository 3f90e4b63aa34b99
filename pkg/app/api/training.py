"""
Training commands: initial model and evaluation
"""
import logging
from pathlib import Path
from typing import Optional

import click

from app.api.options import resolve_config, run_options
from app.services.data_service import DataService
from app.services.nn_service import NNService
from app.services.session_service import SessionService
from app.services.trainer_service import TrainerService

logger = logging.getLogger(__name__)

SPLITS = click.Choice(["train", "validation", "test"])


def default_checkpoint(out_dir: Path) -> Path:
    return out_dir / "checkpoints" / "session_00.lewc"


@click.command("train-initial")
@run_options
def train_initial(config_path: Path, out_dir: Optional[Path], seed: Optional[int]):
    """Train the initial model on the train split and evaluate it on the test split"""
    cfg = resolve_config(config_path, out_dir=out_dir, seed=seed)
    datasets, _ = DataService.build_datasets(cfg)

    model = NNService.build_model(cfg.architecture, seed=cfg.seed)
    train_cfg = cfg.train.model_copy(update={"seed": cfg.seed})
    model, history = TrainerService.train(model, datasets.train, train_cfg, validation=datasets.validation)
    report = TrainerService.evaluate(model, datasets.test)

    TrainerService.write_history(cfg.out_dir / "history.csv", history)
    checkpoint = SessionService.save_session_checkpoint(default_checkpoint(cfg.out_dir), model, 0)
    click.echo(f"test_accuracy={report.accuracy:.6f} checkpoint={checkpoint}")


@click.command("eval")
@run_options
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Model to evaluate (default: the initial checkpoint under the output directory)")
@click.option("--split", "split_name", type=SPLITS, default="test", show_default=True)
def evaluate_command(config_path: Path, out_dir: Optional[Path], seed: Optional[int],
                     checkpoint: Optional[Path], split_name: str):
    """Accuracy and confusion matrix (confusion.csv) of a checkpoint"""
    cfg = resolve_config(config_path, out_dir=out_dir, seed=seed)
    datasets, _ = DataService.build_datasets(cfg)
    model, _ = SessionService.resume_from_checkpoint(checkpoint or default_checkpoint(cfg.out_dir))

    report = TrainerService.evaluate(model, getattr(datasets, split_name))
    path = TrainerService.write_confusion(cfg.out_dir / "confusion.csv", report, cfg.names())
    click.echo(f"accuracy={report.accuracy:.6f} mean_loss={report.mean_loss:.6f} confusion={path}")
