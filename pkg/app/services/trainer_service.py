"""
Trainer Service - weighted-loss training with an optional EWC term, evaluation
and misclassified-sample selection
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from app.core.exceptions import (
    EmptyDatasetError,
    LabelRangeError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from app.models.audio import Spectrogram
from app.models.training import (
    Anchor,
    EpochRecord,
    EvalReport,
    FisherDiagonal,
    TrainConfig,
    WeightedDataset,
)
from app.services.ewc_service import EWCService
from app.services.nn_service import ModelState, NNService
from app.utils.file_handler import FileHandler

logger = logging.getLogger(__name__)

EwcState = Tuple[Anchor, FisherDiagonal]
DatasetLike = Union[WeightedDataset, Sequence[Spectrogram]]


def _items_of(dataset: DatasetLike) -> List[Spectrogram]:
    return dataset.spectrograms() if isinstance(dataset, WeightedDataset) else list(dataset)


def _check_labels(model: ModelState, labels: np.ndarray) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= model.num_classes):
        raise LabelRangeError(f"labels span [{labels.min()}, {labels.max()}], model has {model.num_classes} classes")


class TrainerService:
    """Weighted training and evaluation"""

    @staticmethod
    def weighted_batch_loss(per_sample_losses, weights):
        """
        (1/N) * sum_i w_i * L_i with N the number of samples in the batch

        Works on torch tensors (keeps the graph) and on numpy arrays / sequences.

        Raises:
            EmptyDatasetError: Empty batch
            ShapeMismatchError: Lengths differ
        """
        if isinstance(per_sample_losses, torch.Tensor):
            w = torch.as_tensor(weights, dtype=per_sample_losses.dtype)
            losses = per_sample_losses
        else:
            losses = np.asarray(per_sample_losses, dtype=np.float64).reshape(-1)
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if losses.shape[0] == 0:
            raise EmptyDatasetError("weighted loss of an empty batch")
        if w.shape[0] != losses.shape[0]:
            raise ShapeMismatchError("batch weights", (losses.shape[0],), (w.shape[0],))
        if isinstance(losses, torch.Tensor):
            return (w * losses).sum() / losses.shape[0]
        return float(np.dot(w, losses) / losses.shape[0])

    @staticmethod
    def train(
        model: ModelState,
        data: DatasetLike,
        cfg: TrainConfig,
        ewc_state: Optional[EwcState] = None,
        validation: Optional[Sequence[Spectrogram]] = None,
    ) -> Tuple[ModelState, List[EpochRecord]]:
        """
        Mini-batch Adam on the weighted cross-entropy, plus the EWC penalty when
        an (anchor, fisher) pair is given and lambda > 0

        Each epoch visits the data in a permutation drawn from the stream
        (cfg.seed, epoch); the last short batch is kept. Weights below
        cfg.weight_floor are raised to it. With a non-empty validation set the
        parameters of the best-validation epoch are restored at the end (ties
        keep the earliest epoch).

        Args:
            model: Model to train in place
            data: Weighted training multiset (plain lists get weight 1)
            cfg: Optimizer and loop settings
            ewc_state: Optional (Anchor, FisherDiagonal)
            validation: Optional validation samples for model selection

        Returns:
            (model, per-epoch history)

        Raises:
            EmptyDatasetError: No training samples
            TrainingDivergedError: Non-finite loss, naming epoch and batch
        """
        dataset = data if isinstance(data, WeightedDataset) else WeightedDataset.from_originals(list(data))
        if len(dataset) == 0:
            raise EmptyDatasetError("cannot train on an empty dataset")

        items = dataset.spectrograms()
        labels = dataset.labels()
        weights = dataset.weights()
        _check_labels(model, labels)
        if cfg.weight_floor is not None:
            weights = np.maximum(weights, cfg.weight_floor)

        use_ewc = ewc_state is not None and cfg.lam > 0
        validation = list(validation or [])
        best_accuracy, best_params = -1.0, None
        history: List[EpochRecord] = []
        n = len(items)

        for epoch in range(cfg.epochs):
            order = np.random.default_rng((cfg.seed, epoch)).permutation(n) if cfg.shuffle else np.arange(n)
            epoch_loss = 0.0

            for batch, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                x = NNService.stack_inputs(model, [items[i] for i in idx])
                y = torch.from_numpy(labels[idx])

                model.optimizer.zero_grad(set_to_none=True)
                per_sample = F.cross_entropy(model.network(x), y, reduction="none")
                loss = TrainerService.weighted_batch_loss(per_sample, weights[idx])
                loss.backward()
                grad = NNService.collect_gradient(model)
                total = float(loss.detach())

                if use_ewc:
                    anchor, fisher = ewc_state
                    penalty, penalty_grad = EWCService.ewc_penalty(
                        NNService.params_snapshot(model), anchor.params_star, fisher.values, cfg.lam
                    )
                    grad = grad + penalty_grad
                    total += penalty

                if not np.isfinite(total):
                    logger.error(f"Non-finite loss at epoch {epoch}, batch {batch}")
                    raise TrainingDivergedError(epoch, batch, total)

                NNService.adam_step(model, grad, cfg.lr)
                epoch_loss += total * len(idx)
                logger.debug(f"epoch {epoch} batch {batch}: loss={total:.6f}")

            val_accuracy = TrainerService.evaluate(model, validation).accuracy if validation else None
            if val_accuracy is not None and val_accuracy > best_accuracy:
                best_accuracy, best_params = val_accuracy, NNService.params_snapshot(model)
            history.append(EpochRecord(epoch=epoch, train_loss=epoch_loss / n, val_accuracy=val_accuracy))
            logger.info(
                f"Epoch {epoch + 1}/{cfg.epochs}: train_loss={epoch_loss / n:.4f}"
                + (f", val_accuracy={val_accuracy:.4f}" if val_accuracy is not None else "")
            )

        if best_params is not None:
            NNService.params_load(model, best_params)
        return model, history

    @staticmethod
    def evaluate(model: ModelState, dataset: DatasetLike) -> EvalReport:
        """
        Argmax accuracy, confusion[true][pred] and mean cross-entropy

        Raises:
            EmptyDatasetError: No samples
        """
        items = _items_of(dataset)
        if not items:
            raise EmptyDatasetError("cannot evaluate on an empty dataset")

        labels = np.array([item.label for item in items], dtype=np.int64)
        _check_labels(model, labels)
        logits = NNService.logits_for(model, items)
        predictions = np.argmax(logits, axis=1)

        classes = model.num_classes
        confusion = np.zeros((classes, classes), dtype=np.int64)
        np.add.at(confusion, (labels, predictions), 1)

        losses = F.cross_entropy(torch.from_numpy(logits), torch.from_numpy(labels), reduction="none")
        return EvalReport(
            accuracy=float(np.trace(confusion) / len(items)),
            confusion=confusion,
            mean_loss=float(losses.mean()),
        )

    @staticmethod
    def select_misclassified(model: ModelState, dataset: DatasetLike) -> List[Spectrogram]:
        """Samples whose argmax prediction differs from the label, in dataset order"""
        items = _items_of(dataset)
        if not items:
            return []
        predictions = np.argmax(NNService.logits_for(model, items), axis=1)
        return [item for item, pred in zip(items, predictions) if int(pred) != item.label]

    @staticmethod
    def write_history(path: Union[str, Path], history: Sequence[EpochRecord]) -> Path:
        return FileHandler.write_csv(
            path,
            header=["epoch", "train_loss", "val_accuracy"],
            rows=[(r.epoch, r.train_loss, r.val_accuracy) for r in history],
        )

    @staticmethod
    def write_confusion(path: Union[str, Path], report: EvalReport, class_names: Sequence[str]) -> Path:
        """C x C grid, rows = true class, columns = predicted class, header = class names"""
        if len(class_names) != report.confusion.shape[0]:
            raise ShapeMismatchError("class names", (report.confusion.shape[0],), (len(class_names),))
        return FileHandler.write_csv(path, header=list(class_names), rows=report.confusion.tolist())
