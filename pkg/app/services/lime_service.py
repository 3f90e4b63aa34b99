"""
LIME Service - segment-level surrogate explanations for spectrogram classifiers

Perturb segments on/off, predict, weight each variation by its cosine distance
to the unperturbed instance, and fit a weighted ridge regression whose
coefficients are the per-segment scores.
"""
import logging
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy import linalg

from app.core.exceptions import (
    InsufficientSamplesError,
    InvalidParameterError,
    LabelRangeError,
    ShapeMismatchError,
    SingularSystemError,
    ZeroVectorError,
)
from app.models.audio import Spectrogram
from app.models.explanation import Explanation, LimeConfig, MaskSet
from app.models.segmentation import SegmentMap
from app.services.nn_service import ModelState, NNService
from app.utils.file_handler import FileHandler

logger = logging.getLogger(__name__)

# (N, F, T) stack of masked spectrograms -> (N, C) class probabilities
Classifier = Callable[[np.ndarray], np.ndarray]
ModelLike = Union[ModelState, Classifier]


def _check_mask_length(segment_map: SegmentMap, length: int) -> None:
    if length != segment_map.n_segments:
        raise ShapeMismatchError("mask", (segment_map.n_segments,), (length,))


def _masked_values(values: np.ndarray, labels: np.ndarray, masks: np.ndarray, baseline: float) -> np.ndarray:
    """(n, F, T) stack: on-segment pixels copied, off-segment pixels set to baseline"""
    on = masks[:, labels].astype(bool)
    return np.where(on, values[None], baseline)


def _as_classifier(model: ModelLike, batch_size: int) -> Classifier:
    if isinstance(model, ModelState):
        return lambda batch: NNService.predict_proba(model, batch, batch_size=batch_size)
    return model


def _baseline(spec: Spectrogram, cfg: LimeConfig) -> float:
    return float(np.mean(spec.values, dtype=np.float64)) if cfg.baseline == "mean" else float(cfg.baseline)


class LimeService:
    """Segment-level local surrogate explanations"""

    @staticmethod
    def perturb(n_segments: int, n_samples: int, seed: int = 0) -> MaskSet:
        """
        Random on/off segment masks

        Row 0 is all ones (the instance itself); every other entry is an
        independent fair coin from a PCG64 stream seeded by ``seed``.

        Raises:
            InsufficientSamplesError: n_samples < n_segments + 2
        """
        if n_segments < 1:
            raise InvalidParameterError(f"n_segments must be >= 1, got {n_segments}")
        if n_samples < n_segments + 2:
            raise InsufficientSamplesError(
                f"{n_samples} perturbations cannot fit {n_segments} segments plus intercept (need >= {n_segments + 2})"
            )
        rng = np.random.default_rng(seed)
        masks = np.empty((n_samples, n_segments), dtype=np.uint8)
        masks[0] = 1
        masks[1:] = rng.integers(0, 2, size=(n_samples - 1, n_segments), dtype=np.uint8)
        return MaskSet(masks=masks)

    @staticmethod
    def apply_mask(spec: Spectrogram, segment_map: SegmentMap, mask: Sequence[int], baseline: float) -> Spectrogram:
        """
        Spectrogram with off segments replaced by a constant

        Raises:
            ShapeMismatchError: Mask length differs from the segment count, or the
                map does not cover the spectrogram
        """
        mask = np.asarray(mask, dtype=np.uint8).reshape(-1)
        _check_mask_length(segment_map, mask.shape[0])
        if segment_map.shape != spec.shape:
            raise ShapeMismatchError("segment map", spec.shape, segment_map.shape)
        values = _masked_values(spec.values.astype(np.float64), segment_map.labels, mask[None], baseline)[0]
        return spec.with_values(values)

    @staticmethod
    def cosine_distance(a: Sequence[float], b: Sequence[float]) -> float:
        """
        1 - cos(a, b), clipped to [0, 2]

        Raises:
            ShapeMismatchError: Lengths differ
            ZeroVectorError: Either vector is all zeros
        """
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        if a.shape != b.shape:
            raise ShapeMismatchError("cosine operands", a.shape, b.shape)
        norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
        if norm_a == 0 or norm_b == 0:
            raise ZeroVectorError("cosine distance is undefined for a zero vector")
        similarity = float(np.dot(a, b) / (norm_a * norm_b))
        return min(2.0, max(0.0, 1.0 - similarity))

    @staticmethod
    def kernel_weight(dist, sigma: float = 0.25):
        """
        Exponential kernel sqrt(exp(-dist^2 / sigma^2)); accepts a scalar or an array

        Raises:
            InvalidParameterError: sigma <= 0 or a negative distance
        """
        if sigma <= 0:
            raise InvalidParameterError(f"kernel width must be > 0, got {sigma}")
        d = np.asarray(dist, dtype=np.float64)
        if np.any(d < 0):
            raise InvalidParameterError("distances must be non-negative")
        weight = np.sqrt(np.exp(-(d ** 2) / sigma ** 2))
        return float(weight) if weight.ndim == 0 else weight

    @staticmethod
    def weighted_ridge(X: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float = 1e-6):
        """
        Weighted least squares with an unregularized intercept

        Solves (X~' W X~ + ridge * I_S) beta = X~' W y where X~ = [X | 1] and the
        ridge term touches only the S coefficient entries.

        Args:
            X: n x S design
            y: Targets, length n
            w: Non-negative sample weights, length n
            ridge: Diagonal regularizer for the coefficients

        Returns:
            (coefficients of length S, intercept)

        Raises:
            ShapeMismatchError: Inconsistent lengths
            InvalidParameterError: Negative or all-zero weights, negative ridge
            SingularSystemError: Normal equations not positive definite
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        w = np.asarray(w, dtype=np.float64).reshape(-1)
        if X.ndim != 2:
            raise ShapeMismatchError("design matrix", ("n", "S"), X.shape)
        n, n_features = X.shape
        if y.shape[0] != n or w.shape[0] != n:
            raise ShapeMismatchError("targets/weights", (n,), (y.shape[0], w.shape[0]))
        if np.any(w < 0) or not np.any(w > 0):
            raise InvalidParameterError("weights must be non-negative and not all zero")
        if ridge < 0:
            raise InvalidParameterError(f"ridge must be >= 0, got {ridge}")

        design = np.hstack([X, np.ones((n, 1))])
        weighted = design * w[:, None]
        normal = design.T @ weighted
        normal[np.arange(n_features), np.arange(n_features)] += ridge
        rhs = weighted.T @ y

        try:
            factor = linalg.cho_factor(normal, lower=False, check_finite=True)
            beta = linalg.cho_solve(factor, rhs)
        except (linalg.LinAlgError, ValueError) as e:
            logger.error(f"Ridge solve failed ({n} x {n_features}, ridge={ridge}): {e}")
            raise SingularSystemError(f"normal equations are singular: {e}") from e

        return beta[:n_features], float(beta[n_features])

    @staticmethod
    def explain_classes(
        model: ModelLike,
        spec: Spectrogram,
        segment_map: SegmentMap,
        classes: Sequence[int],
        cfg: Optional[LimeConfig] = None,
    ) -> List[Explanation]:
        """
        Per-segment scores for several classes from one set of perturbations

        Every class is regressed on the same MaskSet, predictions and kernel
        weights; only the target column differs. An all-off variation sits at
        distance 1 from the instance.

        Args:
            model: ModelState, or a callable mapping an (N, F, T) stack to (N, C)
                class probabilities
            spec: The input to explain
            segment_map: Segmentation of ``spec``
            classes: Class indices to explain
            cfg: LIME settings (n_samples, sigma, baseline, ridge, seed)

        Returns:
            One Explanation per requested class, in request order
        """
        cfg = cfg or LimeConfig()
        if segment_map.shape != spec.shape:
            raise ShapeMismatchError("segment map", spec.shape, segment_map.shape)

        masks = LimeService.perturb(segment_map.n_segments, cfg.n_samples, cfg.seed).masks
        classifier = _as_classifier(model, cfg.batch_size)
        values = spec.values.astype(np.float64)
        baseline = _baseline(spec, cfg)

        chunks = []
        for start in range(0, masks.shape[0], cfg.batch_size):
            batch = _masked_values(values, segment_map.labels, masks[start:start + cfg.batch_size], baseline)
            chunks.append(np.asarray(classifier(batch), dtype=np.float64))
        probs = np.concatenate(chunks, axis=0)
        if probs.ndim != 2 or probs.shape[0] != masks.shape[0]:
            raise ShapeMismatchError("classifier output", (masks.shape[0], "C"), probs.shape)

        distances = np.array([
            LimeService.cosine_distance(masks[0], row) if row.any() else 1.0
            for row in masks
        ])
        weights = LimeService.kernel_weight(distances, cfg.sigma)

        explanations = []
        for target in classes:
            if not 0 <= target < probs.shape[1]:
                raise LabelRangeError(f"target class {target} outside [0, {probs.shape[1]})")
            scores, intercept = LimeService.weighted_ridge(masks, probs[:, target], weights, cfg.ridge)
            explanations.append(Explanation(scores=scores, target_class=int(target), intercept=intercept))

        logger.debug(
            f"Explained {spec.source_id or 'sample'} for classes {list(classes)} "
            f"({segment_map.n_segments} segments, {cfg.n_samples} variations)"
        )
        return explanations

    @staticmethod
    def explain(
        model: ModelLike,
        spec: Spectrogram,
        segment_map: SegmentMap,
        target_class: int,
        cfg: Optional[LimeConfig] = None,
    ) -> Explanation:
        """Single-class form of explain_classes"""
        return LimeService.explain_classes(model, spec, segment_map, [target_class], cfg)[0]

    @staticmethod
    def top_segment_mask(explanation: Explanation, segment_map: SegmentMap, k: int = 5) -> np.ndarray:
        """Boolean F x T mask covering the k highest-scoring segments"""
        _check_mask_length(segment_map, explanation.n_segments)
        return np.isin(segment_map.labels, explanation.top_segments(k))

    @staticmethod
    def export_explanation(
        explanation: Explanation,
        spec: Spectrogram,
        segment_map: SegmentMap,
        out_dir: Union[str, Path],
        stem: str = "explanation",
        top_k: int = 5,
    ) -> List[Path]:
        """
        Write ``<stem>.csv`` (segment_id,score with a target_class/intercept
        line first), ``<stem>_top<k>.pgm`` (spectrogram shown only inside the
        top-k segments) and ``<stem>_segments.pgm`` (the label map)
        """
        out_dir = Path(out_dir)
        csv_path = FileHandler.write_csv(
            out_dir / f"{stem}.csv",
            header=["segment_id", "score"],
            rows=[(i, float(s)) for i, s in enumerate(explanation.scores)],
            preamble=["target_class", explanation.target_class, "intercept", explanation.intercept],
        )

        values = spec.values.astype(np.float64)
        low, high = float(values.min()), float(values.max())
        gray = (values - low) / (high - low) * 255.0 if high > low else np.zeros_like(values)
        highlighted = np.where(LimeService.top_segment_mask(explanation, segment_map, top_k), gray, 0.0)

        top_path = FileHandler.write_pgm(out_dir / f"{stem}_top{top_k}.pgm", np.round(highlighted))
        map_path = FileHandler.write_pgm(
            out_dir / f"{stem}_segments.pgm",
            FileHandler.labels_to_gray(segment_map.labels, segment_map.n_segments),
        )
        return [csv_path, top_path, map_path]
