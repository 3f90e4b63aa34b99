"""
Explain command: LIME scores for one sample
"""
import logging
from pathlib import Path
from typing import Optional

import click

from app.api.options import resolve_config, run_options
from app.api.training import SPLITS, default_checkpoint
from app.services.data_service import DataService
from app.services.lime_service import LimeService
from app.services.nn_service import NNService
from app.services.segmentation_service import SegmentationService
from app.services.session_service import SessionService

logger = logging.getLogger(__name__)


@click.command("explain")
@run_options
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--split", "split_name", type=SPLITS, default="test", show_default=True)
@click.option("--index", type=click.IntRange(min=0), default=0, show_default=True, help="Sample index in the split")
@click.option("--class", "target_class", type=click.IntRange(min=0), default=None,
              help="Class to explain (default: the predicted class)")
@click.option("--top-k", type=click.IntRange(min=1), default=5, show_default=True)
def explain_command(config_path: Path, out_dir: Optional[Path], seed: Optional[int], checkpoint: Optional[Path],
                    split_name: str, index: int, target_class: Optional[int], top_k: int):
    """Segment one spectrogram, explain it and write CSV + PGM files under explanations/"""
    cfg = resolve_config(config_path, out_dir=out_dir, seed=seed)
    datasets, _ = DataService.build_datasets(cfg)
    items = getattr(datasets, split_name)
    if index >= len(items):
        raise click.BadParameter(f"{split_name} split has {len(items)} samples", param_hint="--index")

    model, _ = SessionService.resume_from_checkpoint(checkpoint or default_checkpoint(cfg.out_dir))
    sample = items[index]
    predicted = int(NNService.predict_classes(model, [sample])[0])
    target = predicted if target_class is None else target_class

    lime_cfg = cfg.lime
    segment_map = SegmentationService.slic(
        sample.values, k=lime_cfg.n_segments, compactness=lime_cfg.compactness, iters=lime_cfg.slic_iters,
        seed=lime_cfg.seed,
    )
    explanation = LimeService.explain(model, sample, segment_map, target, lime_cfg)

    stem = f"{split_name}_{index:04d}_class{target}"
    paths = LimeService.export_explanation(explanation, sample, segment_map, cfg.out_dir / "explanations", stem, top_k)
    click.echo(
        f"label={sample.label} predicted={predicted} class={target} "
        f"top_segments={explanation.top_segments(top_k)} csv={paths[0]}"
    )
