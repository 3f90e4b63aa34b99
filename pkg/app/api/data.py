"""
Data commands: manifest ingestion and synthetic corpora
"""
import logging
from pathlib import Path
from typing import Optional

import click

from app.api.options import resolve_config
from app.models.audio import StftConfig
from app.services.audio_service import AudioService
from app.services.data_service import DataService
from app.services.storage_service import StorageService
from app.utils.file_handler import FileHandler

logger = logging.getLogger(__name__)


@click.command("prepare-data")
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="CSV of path,label[,speaker_id]")
@click.option("--out", "cache", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Spectrogram cache to write")
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Optional run config supplying STFT settings and class names")
@click.option("--seed", type=int, default=None, help="Accepted for symmetry; ingestion draws no random numbers")
def prepare_data(manifest: Path, cache: Path, config_path: Optional[Path], seed: Optional[int]):
    """Convert a WAV manifest into a spectrogram cache (plus a labels.csv beside it)"""
    stft_cfg, class_names = StftConfig(), None
    if config_path is not None:
        cfg = resolve_config(config_path, seed=seed)
        stft_cfg, class_names = cfg.stft, cfg.class_names

    path, names = DataService.prepare_from_manifest(manifest, cache, stft_cfg, class_names)
    FileHandler.write_csv(path.with_name(f"{path.stem}.labels.csv"), ["index", "name"], list(enumerate(names)))
    click.echo(f"wrote {path}")


@click.command("gen-synthetic")
@click.option("--out", "cache", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Spectrogram cache to write")
@click.option("--classes", type=click.IntRange(min=2), default=4, show_default=True)
@click.option("--per-class", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--noise", "noise_level", type=click.FloatRange(min=0.0), default=0.1, show_default=True)
@click.option("--size", type=(int, int), default=(32, 32), show_default=True, help="F T")
@click.option("--speakers", type=click.IntRange(min=3), default=20, show_default=True)
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Take the synthetic section of a run config instead of the flags")
@click.option("--seed", type=int, default=0, show_default=True)
def gen_synthetic(cache: Path, classes: int, per_class: int, noise_level: float, size, speakers: int,
                  config_path: Optional[Path], seed: int):
    """Write a seeded synthetic keyword corpus to a spectrogram cache"""
    if config_path is not None:
        cfg = resolve_config(config_path, seed=seed)
        if cfg.synthetic is None:
            raise click.UsageError("--config must describe a synthetic data source")
        spec = cfg.synthetic
        classes, per_class, noise_level = spec.classes, spec.per_class, spec.noise_level
        size, speakers = spec.shape, spec.speakers

    items = AudioService.gen_synthetic(
        classes=classes,
        per_class=per_class,
        seed=seed,
        noise_level=noise_level,
        shape=tuple(size),
        speakers=speakers,
    )
    path = StorageService.cache_write(items, cache)
    click.echo(f"wrote {path} ({len(items)} spectrograms)")
