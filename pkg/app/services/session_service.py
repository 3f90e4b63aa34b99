"""
Session Service - explanation-weighted incremental training across sessions

Initial training on the original split, then per validation chunk: pick the
samples the initial model gets wrong, weight them by how far apart the
explanations for the predicted and the true class are, append them to the
training multiset and retrain (optionally anchored with EWC).
"""
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from app.core.exceptions import ExplainILError, SessionError, ShapeMismatchError, SpeakerCountError
from app.models.architecture import ArchDescriptor
from app.models.audio import DatasetSplit, Spectrogram
from app.models.config import RunConfig
from app.models.explanation import Explanation, LimeConfig
from app.models.session import (
    Checkpoint,
    SessionPlan,
    SessionRecord,
    SessionRun,
    TrainingMode,
    WeightMetric,
)
from app.models.training import Anchor, FisherDiagonal, TrainConfig, WeightedDataset, session_cohort
from app.services.ewc_service import EWCService
from app.services.lime_service import LimeService, ModelLike
from app.services.nn_service import ModelState, NNService
from app.services.segmentation_service import SegmentationService
from app.services.storage_service import StorageService
from app.services.trainer_service import TrainerService
from app.utils.file_handler import FileHandler

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
EwcState = Tuple[Anchor, FisherDiagonal]
Weigher = Callable[[ModelState, List[Spectrogram]], Sequence[float]]

FISHER_STREAM = 1
SESSION_COLUMNS = [
    "session", "mode", "lambda", "seed", "train_size", "added",
    "mean_new_weight", "test_accuracy", "test_loss",
]


def _predicted_class(model: ModelLike, sample: Spectrogram) -> int:
    if isinstance(model, ModelState):
        return int(NNService.predict_classes(model, [sample])[0])
    return int(np.argmax(np.asarray(model(sample.values.astype(np.float64)[None]))[0]))


class _SessionLog:
    """Records of one run plus their CSV renderings"""

    def __init__(self, out_dir: Optional[Path]):
        self.out_dir = out_dir
        self.records: List[SessionRecord] = []

    def add(self, record: SessionRecord) -> None:
        self.records.append(record)
        logger.info(
            f"Session {record.session_id} ({record.mode}): train_size={record.train_size}, "
            f"added={record.added_count}, test_accuracy={record.test_accuracy:.4f}"
            + (f", retention_accuracy={record.retention_accuracy:.4f}" if record.retention_accuracy is not None else "")
        )

    def checkpoint_path(self, session_id: int) -> Optional[Path]:
        if self.out_dir is None:
            return None
        return self.out_dir / "checkpoints" / f"session_{session_id:02d}.lewc"

    def write(self) -> Optional[Path]:
        if self.out_dir is None:
            return None
        path = FileHandler.write_csv(self.out_dir / "sessions.csv", SESSION_COLUMNS, [
            (r.session_id, r.mode, r.lam, r.seed, r.train_size, r.added_count,
             r.mean_new_weight, r.test_accuracy, r.test_loss)
            for r in self.records
        ])
        if self.records and self.records[0].retention_accuracy is not None:
            initial = self.records[0].retention_accuracy
            FileHandler.write_csv(self.out_dir / "retention.csv", ["session", "retention_accuracy", "retention_drop"], [
                (r.session_id, r.retention_accuracy, initial - r.retention_accuracy) for r in self.records
            ])
        return path


def _mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    stderr = float(stats.sem(values)) if values.size > 1 else 0.0
    return float(values.mean()), stderr


class SessionService:
    """Incremental sessions and the experiment harnesses"""

    @staticmethod
    def sample_weight(
        e_pred: Explanation,
        e_true: Explanation,
        metric: WeightMetric = WeightMetric.EUCLIDEAN,
        sqrt: bool = False,
    ) -> float:
        """
        Distance between the predicted-class and true-class explanations

        euclidean is the squared distance sum (p - t)^2, or its root with
        ``sqrt``; manhattan is sum |p - t|; cosine is 1 - cos(p, t).

        Raises:
            ShapeMismatchError: Segment counts differ
            ZeroVectorError: cosine with an all-zero score vector
        """
        if e_pred.n_segments != e_true.n_segments:
            raise ShapeMismatchError("explanation scores", (e_pred.n_segments,), (e_true.n_segments,))
        metric = WeightMetric(metric)
        diff = e_pred.scores - e_true.scores

        if metric == WeightMetric.EUCLIDEAN:
            squared = float(np.dot(diff, diff))
            return float(np.sqrt(squared)) if sqrt else squared
        if metric == WeightMetric.MANHATTAN:
            return float(np.abs(diff).sum())
        return LimeService.cosine_distance(e_pred.scores, e_true.scores)

    @staticmethod
    def generate_lime_weights(
        model: ModelLike,
        misclassified: Sequence[Spectrogram],
        lime_cfg: Optional[LimeConfig] = None,
        metric: WeightMetric = WeightMetric.EUCLIDEAN,
        sqrt: bool = False,
    ) -> List[float]:
        """
        One weight per misclassified sample, aligned with the input order

        Each sample is segmented with SLIC and explained for its predicted and
        its true class over one shared set of perturbations.
        """
        cfg = lime_cfg or LimeConfig()
        weights = []
        for sample in misclassified:
            segment_map = SegmentationService.slic(
                sample.values, k=cfg.n_segments, compactness=cfg.compactness, iters=cfg.slic_iters, seed=cfg.seed
            )
            predicted = _predicted_class(model, sample)
            e_pred, e_true = LimeService.explain_classes(model, sample, segment_map, [predicted, sample.label], cfg)
            weights.append(SessionService.sample_weight(e_pred, e_true, metric, sqrt))
        if weights:
            logger.info(
                f"LIME weights for {len(weights)} samples: mean={np.mean(weights):.4g}, max={np.max(weights):.4g}"
            )
        return weights

    @staticmethod
    def plan_sessions(
        validation: Sequence[Spectrogram],
        n: int,
        seed: int = 0,
        test_set: Optional[Sequence[Spectrogram]] = None,
        **plan_fields,
    ) -> SessionPlan:
        """
        Speaker-disjoint validation chunks, one per session

        Speakers are sorted, shuffled by ``seed`` and dealt round-robin; each
        chunk keeps the validation order of its samples.

        Raises:
            SpeakerCountError: Fewer speakers than sessions
        """
        if n < 0:
            raise ValueError(f"session count must be >= 0, got {n}")
        speakers = sorted({item.speaker_id for item in validation})
        if n > len(speakers):
            raise SpeakerCountError(f"{n} sessions need at least {n} validation speakers, got {len(speakers)}")

        chunks: List[List[Spectrogram]] = [[] for _ in range(n)]
        if n > 0:
            order = np.random.default_rng(seed).permutation(len(speakers))
            slot = {speakers[s]: position % n for position, s in enumerate(order)}
            for item in validation:
                chunks[slot[item.speaker_id]].append(item)

        return SessionPlan(chunks=chunks, test_set=list(test_set or []), seed=seed, **plan_fields)

    @staticmethod
    def save_session_checkpoint(
        path: PathLike,
        model: ModelState,
        session_id: int,
        ewc_state: Optional[EwcState] = None,
    ) -> Path:
        anchor, fisher = ewc_state if ewc_state is not None else (None, None)
        return StorageService.checkpoint_save(path, Checkpoint(
            arch=model.arch.to_string(),
            params=NNService.params_snapshot(model),
            session_id=session_id,
            anchor=anchor.params_star if anchor is not None else None,
            fisher=fisher.values if fisher is not None else None,
        ))

    @staticmethod
    def resume_from_checkpoint(path: PathLike) -> Tuple[ModelState, Optional[EwcState]]:
        """Model (fresh Adam state) and, when stored, the EWC anchor/Fisher pair"""
        checkpoint = StorageService.checkpoint_load(path)
        model = NNService.restore_model(checkpoint.arch, checkpoint.params)
        ewc_state = None
        if checkpoint.has_ewc_state:
            ewc_state = (
                Anchor(params_star=checkpoint.anchor, session_id=max(0, checkpoint.session_id - 1)),
                FisherDiagonal(values=checkpoint.fisher, sample_count=0),
            )
        return model, ewc_state

    @staticmethod
    def run_incremental(
        datasets: DatasetSplit,
        arch: ArchDescriptor,
        plan: SessionPlan,
        train_cfg: TrainConfig,
        mode: TrainingMode = TrainingMode.WEIGHTED_EWC,
        lime_cfg: Optional[LimeConfig] = None,
        out_dir: Optional[PathLike] = None,
        retention: Optional[Sequence[Spectrogram]] = None,
        weigher: Optional[Weigher] = None,
        resume_from: Optional[int] = None,
    ) -> SessionRun:
        """
        Initial training followed by one incremental session per plan chunk

        Session 0 trains a model seeded with plan.seed on the train split (weights
        1). Session i selects the chunk's samples misclassified by that initial
        model, weights them (1 for traditional, explanation distance otherwise),
        admits them to the training multiset and retrains from the previous
        session's parameters with training seed plan.seed + i. In weighted_ewc
        mode a Fisher diagonal is estimated from a seeded draw of correctly
        predicted training samples and the previous parameters become the anchor;
        other modes train with lambda = 0. Every session is evaluated on the
        fixed test set.

        Args:
            datasets: Train/validation/test split
            arch: Network architecture
            plan: Chunks, test set, lambda, metric and master seed
            train_cfg: Optimizer settings (its seed and lambda are overridden per session)
            mode: traditional | weighted | weighted_ewc
            lime_cfg: LIME and SLIC settings for the weights
            out_dir: When set, checkpoints and sessions.csv (plus retention.csv
                with a retention set) are written here
            retention: Optional samples from the initial distribution to track forgetting
            weigher: Replaces the LIME weight computation (model, samples) -> weights
            resume_from: Continue a run stopped after this session. Sessions
                0..k are rebuilt from the checkpoints already in out_dir, their
                cohorts re-derived from the session 0 model, and training
                picks up at k + 1. The config must match the stopped run.

        Returns:
            SessionRun with n_sessions + 1 records

        Raises:
            SessionError: Any component failure, with session id and mode
            ValueError: resume_from outside 0..n_sessions or without out_dir
        """
        mode = TrainingMode(mode)
        lime_cfg = lime_cfg or LimeConfig()
        log = _SessionLog(Path(out_dir) if out_dir is not None else None)
        test_set = plan.test_set or datasets.test
        retention = list(retention or [])

        resumed = -1
        if resume_from is not None:
            if out_dir is None:
                raise ValueError("resuming needs the out_dir holding the stopped run's checkpoints")
            if not 0 <= resume_from <= plan.n_sessions:
                raise ValueError(f"resume_from must be in 0..{plan.n_sessions}, got {resume_from}")
            resumed = resume_from

        def restore(session_id: int) -> Tuple[ModelState, Optional[EwcState]]:
            model, ewc_state = SessionService.resume_from_checkpoint(log.checkpoint_path(session_id))
            if model.arch.to_string() != arch.to_string():
                raise ShapeMismatchError(
                    f"session {session_id} checkpoint architecture", arch.to_string(), model.arch.to_string()
                )
            return model, ewc_state

        def finish(session_id: int, model: ModelState, data: WeightedDataset, lam: float, seed: int,
                   added: int, mean_weight: float, ewc_state: Optional[EwcState]) -> None:
            report = TrainerService.evaluate(model, test_set)
            checkpoint = log.checkpoint_path(session_id)
            if checkpoint is not None and session_id > resumed:
                SessionService.save_session_checkpoint(checkpoint, model, session_id, ewc_state)
            log.add(SessionRecord(
                session_id=session_id,
                mode=mode,
                lam=lam,
                seed=seed,
                train_size=len(data),
                added_count=added,
                mean_new_weight=mean_weight,
                test_accuracy=report.accuracy,
                test_loss=report.mean_loss,
                checkpoint_path=str(checkpoint) if checkpoint is not None else None,
                retention_accuracy=TrainerService.evaluate(model, retention).accuracy if retention else None,
            ))

        logger.info(
            f"Incremental run: mode={mode.value}, sessions={plan.n_sessions}, lambda={plan.lam}, seed={plan.seed}"
        )
        session_id = 0
        try:
            data = WeightedDataset.from_originals(datasets.train)
            if resumed >= 0:
                logger.info(f"Resuming after session {resumed} from {log.checkpoint_path(resumed).parent}")
                model, _ = restore(0)
            else:
                model = NNService.build_model(arch, seed=plan.seed)
                initial_cfg = train_cfg.model_copy(update={"seed": plan.seed, "lam": 0.0})
                model, _ = TrainerService.train(model, data, initial_cfg, validation=datasets.validation)
            finish(0, model, data, 0.0, plan.seed, 0, 0.0, None)

            # cohorts and their weights come from the initial model throughout
            initial_model = NNService.restore_model(arch, NNService.params_snapshot(model))
            lam = plan.lam if mode == TrainingMode.WEIGHTED_EWC else 0.0

            for session_id, chunk in enumerate(plan.chunks, start=1):
                misclassified = TrainerService.select_misclassified(initial_model, chunk)
                if not misclassified:
                    logger.warning(f"Session {session_id}: no misclassified samples in a chunk of {len(chunk)}")

                if mode == TrainingMode.TRADITIONAL:
                    weights = [1.0] * len(misclassified)
                elif weigher is not None:
                    weights = [float(w) for w in weigher(initial_model, misclassified)]
                else:
                    weights = SessionService.generate_lime_weights(
                        initial_model, misclassified, lime_cfg, plan.metric, plan.sqrt_weights
                    )
                data = data.admit(misclassified, weights, session_cohort(session_id))
                seed = plan.seed + session_id

                if session_id <= resumed:
                    model, ewc_state = restore(session_id)
                else:
                    ewc_state = None
                    if lam > 0:
                        pool = EWCService.sample_fisher_pool(
                            model, data.spectrograms(), plan.fisher_fraction, (plan.seed, session_id, FISHER_STREAM)
                        )
                        if pool:
                            anchor = EWCService.make_anchor(model, session_id - 1)
                            ewc_state = (anchor, EWCService.fisher_diagonal(model, pool))
                        else:
                            logger.warning(f"Session {session_id}: no correct predictions, training without EWC")

                    session_cfg = train_cfg.model_copy(update={"seed": seed, "lam": lam})
                    model = NNService.restore_model(arch, NNService.params_snapshot(model))
                    model, _ = TrainerService.train(model, data, session_cfg, ewc_state, validation=chunk)

                mean_weight = float(np.mean(weights)) if weights else 0.0
                finish(session_id, model, data, lam, seed, len(misclassified), mean_weight, ewc_state)
        except ExplainILError as e:
            logger.error(f"Incremental run failed in session {session_id}: {e}")
            raise SessionError(session_id, e, mode.value) from e

        csv_path = log.write()
        return SessionRun(records=log.records, session_csv=str(csv_path) if csv_path is not None else None)

    @staticmethod
    def sweep_lambda(
        datasets: DatasetSplit,
        arch: ArchDescriptor,
        plan: SessionPlan,
        train_cfg: TrainConfig,
        lambdas: Sequence[float],
        lime_cfg: Optional[LimeConfig] = None,
        out_dir: Optional[PathLike] = None,
        retention: Optional[Sequence[Spectrogram]] = None,
    ) -> List[Tuple[float, int, float]]:
        """
        One weighted_ewc run per lambda with identical seeds and data

        Returns:
            (lambda, session, test_accuracy) rows, lambda-major; also written to
            ``lambda_sweep.csv`` under out_dir
        """
        if not lambdas:
            raise ValueError("lambda sweep needs at least one value")

        rows = []
        for lam in lambdas:
            run_dir = Path(out_dir) / f"lambda_{lam:g}" if out_dir is not None else None
            run = SessionService.run_incremental(
                datasets, arch, plan.model_copy(update={"lam": float(lam)}), train_cfg,
                TrainingMode.WEIGHTED_EWC, lime_cfg, run_dir, retention,
            )
            rows.extend((float(lam), r.session_id, r.test_accuracy) for r in run.records)

        if out_dir is not None:
            FileHandler.write_csv(Path(out_dir) / "lambda_sweep.csv", ["lambda", "session", "test_accuracy"], rows)
        return rows

    @staticmethod
    def compare_modes(
        datasets: DatasetSplit,
        arch: ArchDescriptor,
        plan: SessionPlan,
        train_cfg: TrainConfig,
        lime_cfg: Optional[LimeConfig] = None,
        modes: Sequence[TrainingMode] = tuple(TrainingMode),
        seeds: Sequence[int] = (0, 1, 2, 3, 4),
        out_dir: Optional[PathLike] = None,
    ) -> List[Tuple[str, int, float, float, int]]:
        """
        Repeated runs per training mode

        Returns:
            (mode, session, mean_accuracy, stderr, runs) rows; the standard error
            is taken over seeds
        """
        accuracies: Dict[Tuple[str, int], List[float]] = {}
        for mode in modes:
            mode = TrainingMode(mode)
            for seed in seeds:
                run_plan = plan.model_copy(update={"seed": seed})
                run = SessionService.run_incremental(datasets, arch, run_plan, train_cfg, mode, lime_cfg)
                for record in run.records:
                    accuracies.setdefault((mode.value, record.session_id), []).append(record.test_accuracy)

        rows = [
            (mode, session, *_mean_and_stderr(values), len(values))
            for (mode, session), values in accuracies.items()
        ]
        if out_dir is not None:
            FileHandler.write_csv(
                Path(out_dir) / "compare_modes.csv", ["mode", "session", "mean_accuracy", "stderr", "runs"], rows
            )
        return rows

    @staticmethod
    def compare_metrics(
        datasets: DatasetSplit,
        arch: ArchDescriptor,
        plan: SessionPlan,
        train_cfg: TrainConfig,
        lime_cfg: Optional[LimeConfig] = None,
        metrics: Sequence[WeightMetric] = tuple(WeightMetric),
        seeds: Sequence[int] = (0, 1, 2, 3, 4),
        out_dir: Optional[PathLike] = None,
    ) -> List[Tuple[str, float, float, int]]:
        """
        Final-session accuracy of weighted runs for each explanation distance

        Returns:
            (metric, mean_accuracy, stderr, runs) rows
        """
        rows = []
        for metric in metrics:
            metric = WeightMetric(metric)
            finals = []
            for seed in seeds:
                run_plan = plan.model_copy(update={"seed": seed, "metric": metric})
                run = SessionService.run_incremental(
                    datasets, arch, run_plan, train_cfg, TrainingMode.WEIGHTED, lime_cfg
                )
                finals.append(run.records[-1].test_accuracy)
            rows.append((metric.value, *_mean_and_stderr(finals), len(finals)))

        if out_dir is not None:
            FileHandler.write_csv(
                Path(out_dir) / "compare_metrics.csv", ["metric", "mean_accuracy", "stderr", "runs"], rows
            )
        return rows

    @staticmethod
    def plan_from_config(cfg: RunConfig, datasets: DatasetSplit) -> SessionPlan:
        """SessionPlan for a run configuration: validation chunks plus the test split"""
        return SessionService.plan_sessions(
            datasets.validation,
            cfg.sessions.n_sessions,
            seed=cfg.seed,
            test_set=datasets.test,
            lam=cfg.train.lam,
            metric=cfg.sessions.metric,
            sqrt_weights=cfg.sessions.sqrt_weights,
            fisher_fraction=cfg.sessions.fisher_fraction,
        )
