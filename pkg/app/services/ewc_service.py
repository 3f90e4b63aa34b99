"""
EWC Service - Fisher diagonal, parameter anchors and the quadratic penalty
"""
import logging
import math
from typing import List, Sequence, Tuple

import numpy as np

from app.core.exceptions import EmptyDatasetError, InvalidParameterError, ParameterLengthError
from app.models.audio import Spectrogram
from app.models.training import Anchor, FisherDiagonal
from app.services.nn_service import ModelState, NNService

logger = logging.getLogger(__name__)


class EWCService:
    """Fisher diagonal, anchors and the consolidation penalty"""

    @staticmethod
    def fisher_diagonal(model: ModelState, samples: Sequence[Spectrogram]) -> FisherDiagonal:
        """
        Empirical Fisher diagonal: mean over samples of (d log p(y|x) / d theta)^2

        Uses each sample's true label. Samples are accumulated in the order given.

        Raises:
            EmptyDatasetError: No samples
        """
        if len(samples) == 0:
            raise EmptyDatasetError("Fisher estimation needs at least one sample")

        total = np.zeros(model.n_params, dtype=np.float64)
        for sample in samples:
            _, grad_logits = NNService.softmax_cross_entropy(NNService.forward(model, sample), sample.label)
            # d(-log p)/d theta squared equals d(log p)/d theta squared
            grad = NNService.backward(model, sample, grad_logits)
            total += grad * grad

        values = total / len(samples)
        logger.debug(f"Fisher diagonal from {len(samples)} samples: mean={values.mean():.3e}, max={values.max():.3e}")
        return FisherDiagonal(values=values, sample_count=len(samples))

    @staticmethod
    def ewc_penalty(
        params: np.ndarray,
        anchor: np.ndarray,
        fisher: np.ndarray,
        lam: float,
    ) -> Tuple[float, np.ndarray]:
        """
        Quadratic consolidation term

        Returns:
            (sum_j lam/2 * F_j * (theta_j - theta*_j)^2, lam * F * (theta - theta*))

        Raises:
            ParameterLengthError: Vectors of different lengths
            InvalidParameterError: lam < 0
        """
        params = np.asarray(params, dtype=np.float64).reshape(-1)
        anchor = np.asarray(anchor, dtype=np.float64).reshape(-1)
        fisher = np.asarray(fisher, dtype=np.float64).reshape(-1)
        for other in (anchor, fisher):
            if other.shape[0] != params.shape[0]:
                raise ParameterLengthError(params.shape[0], other.shape[0])
        if lam < 0:
            raise InvalidParameterError(f"lambda must be >= 0, got {lam}")

        delta = params - anchor
        weighted = fisher * delta
        penalty = 0.5 * lam * float(np.dot(weighted, delta))
        return penalty, lam * weighted

    @staticmethod
    def make_anchor(model: ModelState, session_id: int) -> Anchor:
        """Copy of the current parameters; later training does not touch it"""
        return Anchor(params_star=NNService.params_snapshot(model), session_id=session_id)

    @staticmethod
    def sample_fisher_pool(
        model: ModelState,
        samples: Sequence[Spectrogram],
        fraction: float,
        seed,
    ) -> List[Spectrogram]:
        """
        Seeded draw, without replacement, of ``fraction`` of the correctly
        predicted samples (at least one when any is correct)

        Args:
            model: Model whose predictions define "correct"
            samples: Candidate pool (the current training multiset)
            fraction: Share of the correct samples to draw, in (0, 1]
            seed: Anything numpy.random.default_rng accepts

        Returns:
            Drawn samples in pool order; empty when nothing is predicted correctly
        """
        if not 0 < fraction <= 1:
            raise InvalidParameterError(f"Fisher fraction must be in (0, 1], got {fraction}")
        if len(samples) == 0:
            return []

        predictions = NNService.predict_classes(model, samples)
        labels = np.array([s.label for s in samples])
        correct = np.flatnonzero(predictions == labels)
        if correct.size == 0:
            return []

        count = max(1, math.floor(fraction * correct.size))
        chosen = np.sort(np.random.default_rng(seed).choice(correct, size=count, replace=False))
        logger.debug(f"Fisher pool: {count} of {correct.size} correctly predicted samples")
        return [samples[i] for i in chosen]
