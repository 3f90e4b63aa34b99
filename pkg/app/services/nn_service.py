"""
Network Service - small VGG-style classifiers on spectrograms (torch, float64)

Flat parameter vectors cross the service boundary as numpy float64 arrays;
the torch module stays internal. Parameter order is ``network.parameters()``
order (layer by layer, weight before bias).
"""
import logging
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn
from torch.nn.utils import parameters_to_vector

from app.core.exceptions import (
    LabelRangeError,
    NonFiniteGradientError,
    ParameterLengthError,
    ShapeMismatchError,
)
from app.models.architecture import ArchDescriptor, Conv3x3, Dense, MaxPool2x2
from app.models.audio import Spectrogram

logger = logging.getLogger(__name__)

DTYPE = torch.float64
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

InputLike = Union[Spectrogram, np.ndarray]


class ModelState:
    """Architecture + torch module + Adam state"""

    def __init__(self, arch: ArchDescriptor, network: nn.Sequential):
        self.arch = arch
        self.network = network
        self.optimizer = torch.optim.Adam(
            network.parameters(), lr=0.001, betas=ADAM_BETAS, eps=ADAM_EPS
        )
        self.step_count = 0

    @property
    def parameters(self) -> List[nn.Parameter]:
        return list(self.network.parameters())

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.network.parameters())

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    @property
    def params(self) -> np.ndarray:
        return NNService.params_snapshot(self)

    def _moment(self, key: str) -> np.ndarray:
        chunks = []
        for p in self.parameters:
            state = self.optimizer.state.get(p, {})
            moment = state.get(key)
            chunks.append(
                moment.detach().reshape(-1) if moment is not None else torch.zeros(p.numel(), dtype=DTYPE)
            )
        return torch.cat(chunks).numpy().copy()

    @property
    def adam_m(self) -> np.ndarray:
        return self._moment("exp_avg")

    @property
    def adam_v(self) -> np.ndarray:
        return self._moment("exp_avg_sq")

    def __repr__(self) -> str:
        return f"ModelState(arch={self.arch}, params={self.n_params}, steps={self.step_count})"


def _build_network(arch: ArchDescriptor) -> nn.Sequential:
    height, width, channels = arch.input_shape
    features = None
    layers: List[nn.Module] = []

    for spec in arch.layers:
        if isinstance(spec, Conv3x3):
            layers.append(nn.Conv2d(channels, spec.filters, kernel_size=3, stride=1, padding=1, dtype=DTYPE))
            layers.append(nn.ReLU())
            channels = spec.filters
        elif isinstance(spec, MaxPool2x2):
            layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
            height, width = height // 2, width // 2
        else:
            if features is None:
                layers.append(nn.Flatten())
                features = height * width * channels
            out_features = spec.neurons if isinstance(spec, Dense) else spec.classes
            layers.append(nn.Linear(features, out_features, dtype=DTYPE))
            if isinstance(spec, Dense):
                layers.append(nn.ReLU())
            features = out_features

    return nn.Sequential(*layers)


def _he_initialize(network: nn.Sequential, seed: int) -> None:
    """He-normal fan-in weights from a PCG64 stream, zero biases"""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for module in network:
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                weight = module.weight
                fan_in = weight[0].numel()
                values = rng.standard_normal(tuple(weight.shape)) * np.sqrt(2.0 / fan_in)
                weight.copy_(torch.from_numpy(values))
                module.bias.zero_()


def _input_array(model: ModelState, item: InputLike) -> np.ndarray:
    values = item.values if isinstance(item, Spectrogram) else np.asarray(item)
    height, width, channels = model.arch.input_shape
    if values.ndim == 2 and channels == 1:
        values = values[:, :, None]
    if values.shape != (height, width, channels):
        raise ShapeMismatchError("model input", (height, width, channels), tuple(values.shape))
    return values


def _batch_tensor(model: ModelState, batch: np.ndarray) -> torch.Tensor:
    batch = np.asarray(batch, dtype=np.float64)
    height, width, channels = model.arch.input_shape
    if batch.ndim == 3 and channels == 1:
        batch = batch[..., None]
    if batch.ndim != 4 or batch.shape[1:] != (height, width, channels):
        raise ShapeMismatchError("model input batch", ("N", height, width, channels), tuple(batch.shape))
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2)))


def _flatten(model: ModelState, grads) -> np.ndarray:
    return torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1)
        for g, p in zip(grads, model.parameters)
    ]).detach().numpy().copy()


class NNService:
    """Build, run and update the torch classifiers"""

    @staticmethod
    def build_model(arch: ArchDescriptor, seed: int = 0) -> ModelState:
        """
        Build a seeded network from an architecture descriptor

        Args:
            arch: Validated architecture
            seed: PRNG seed; equal (arch, seed) give bit-identical parameters

        Returns:
            ModelState with zeroed Adam state

        Raises:
            ArchitectureError: Pool underflow, missing Output, misplaced layers
        """
        arch.validate_layers()
        network = _build_network(arch)
        _he_initialize(network, seed)
        model = ModelState(arch, network)

        expected = arch.param_count()
        if model.n_params != expected:  # pragma: no cover - guards the builder against the descriptor
            raise RuntimeError(f"built {model.n_params} parameters, descriptor implies {expected}")

        logger.debug(f"Built model {arch} with {model.n_params} parameters (seed={seed})")
        return model

    @staticmethod
    def restore_model(arch: Union[ArchDescriptor, str], params: np.ndarray) -> ModelState:
        """Model with the given flat parameters and fresh Adam state"""
        if isinstance(arch, str):
            arch = ArchDescriptor.parse(arch)
        return NNService.params_load(NNService.build_model(arch, seed=0), params)

    @staticmethod
    def stack_inputs(model: ModelState, items: Sequence[InputLike]) -> torch.Tensor:
        """(N, C, H, W) float64 batch from spectrograms or arrays"""
        height, width, channels = model.arch.input_shape
        if len(items) == 0:
            return torch.zeros((0, channels, height, width), dtype=DTYPE)
        batch = np.stack([_input_array(model, item) for item in items]).astype(np.float64, copy=False)
        return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2)))

    @staticmethod
    def forward(model: ModelState, item: InputLike) -> np.ndarray:
        """
        Logits for one input

        Raises:
            ShapeMismatchError: Input shape differs from arch input_shape
        """
        x = NNService.stack_inputs(model, [item])
        with torch.no_grad():
            return model.network(x)[0].numpy().copy()

    @staticmethod
    def predict_logits(model: ModelState, batch: Union[np.ndarray, torch.Tensor], batch_size: int = 256) -> np.ndarray:
        """Logits for an (N, H, W[, C]) array or an (N, C, H, W) tensor, evaluated in chunks"""
        x = batch if isinstance(batch, torch.Tensor) else _batch_tensor(model, batch)
        outputs = []
        with torch.no_grad():
            for start in range(0, x.shape[0], batch_size):
                outputs.append(model.network(x[start:start + batch_size]))
        if not outputs:
            return np.zeros((0, model.num_classes))
        return torch.cat(outputs).numpy().copy()

    @staticmethod
    def predict_proba(model: ModelState, batch: Union[np.ndarray, torch.Tensor], batch_size: int = 256) -> np.ndarray:
        """Softmax class probabilities for a batch"""
        logits = torch.from_numpy(NNService.predict_logits(model, batch, batch_size))
        return torch.softmax(logits, dim=1).numpy()

    @staticmethod
    def logits_for(model: ModelState, items: Sequence[InputLike], batch_size: int = 256) -> np.ndarray:
        """(N, C) logits for a list of spectrograms, stacking one chunk at a time"""
        outputs = [
            NNService.predict_logits(model, NNService.stack_inputs(model, items[start:start + batch_size]), batch_size)
            for start in range(0, len(items), batch_size)
        ]
        if not outputs:
            return np.zeros((0, model.num_classes))
        return np.concatenate(outputs, axis=0)

    @staticmethod
    def predict_classes(model: ModelState, items: Sequence[InputLike], batch_size: int = 256) -> np.ndarray:
        """Argmax class per item; ties go to the lowest class index"""
        return np.argmax(NNService.logits_for(model, items, batch_size), axis=1)

    @staticmethod
    def softmax_cross_entropy(logits: np.ndarray, label: int) -> Tuple[float, np.ndarray]:
        """
        Cross-entropy of one logit vector against a class index

        Returns:
            (loss, grad) with loss = -log softmax(logits)[label] and
            grad = softmax(logits) - onehot(label)

        Raises:
            LabelRangeError: label outside [0, classes)
        """
        z = torch.as_tensor(np.asarray(logits, dtype=np.float64))
        classes = z.shape[0]
        if not 0 <= label < classes:
            raise LabelRangeError(f"label {label} outside [0, {classes})")

        log_probs = torch.log_softmax(z, dim=0)
        grad = log_probs.exp()
        grad[label] -= 1.0
        return float(-log_probs[label]), grad.numpy()

    @staticmethod
    def backward(model: ModelState, item: InputLike, grad_logits: np.ndarray) -> np.ndarray:
        """
        Reverse-mode gradient of logits . grad_logits w.r.t. the flat parameters

        Raises:
            ShapeMismatchError: grad_logits length differs from the class count
        """
        grad_logits = np.asarray(grad_logits, dtype=np.float64).reshape(-1)
        if grad_logits.shape[0] != model.num_classes:
            raise ShapeMismatchError("grad_logits", (model.num_classes,), grad_logits.shape)

        x = NNService.stack_inputs(model, [item])
        logits = model.network(x)[0]
        grads = torch.autograd.grad(
            logits, model.parameters, grad_outputs=torch.from_numpy(grad_logits), allow_unused=True
        )
        return _flatten(model, grads)

    @staticmethod
    def collect_gradient(model: ModelState) -> np.ndarray:
        """Flat view of the .grad fields left by loss.backward()"""
        return _flatten(model, [p.grad for p in model.parameters])

    @staticmethod
    def adam_step(model: ModelState, grad: np.ndarray, lr: float) -> ModelState:
        """
        One Adam update (beta1=0.9, beta2=0.999, eps=1e-8, bias-corrected)

        Raises:
            ParameterLengthError: grad length differs from the parameter count
            NonFiniteGradientError: grad contains NaN/inf
        """
        grad = np.asarray(grad, dtype=np.float64).reshape(-1)
        if grad.shape[0] != model.n_params:
            raise ParameterLengthError(model.n_params, grad.shape[0])
        if not np.all(np.isfinite(grad)):
            bad = int(np.count_nonzero(~np.isfinite(grad)))
            raise NonFiniteGradientError(f"{bad} non-finite gradient entries at step {model.step_count + 1}")

        flat = torch.from_numpy(grad.copy())
        offset = 0
        for p in model.parameters:
            count = p.numel()
            p.grad = flat[offset:offset + count].view_as(p).clone()
            offset += count

        for group in model.optimizer.param_groups:
            group["lr"] = lr
        model.optimizer.step()
        model.optimizer.zero_grad(set_to_none=True)
        model.step_count += 1
        return model

    @staticmethod
    def params_snapshot(model: ModelState) -> np.ndarray:
        """Independent copy of the flat parameter vector"""
        with torch.no_grad():
            return parameters_to_vector(model.network.parameters()).numpy().copy()

    @staticmethod
    def params_load(model: ModelState, vector: np.ndarray) -> ModelState:
        """
        Overwrite the parameters from a flat vector (copied, not aliased)

        Raises:
            ParameterLengthError: vector length differs from the parameter count
        """
        vector = np.array(vector, dtype=np.float64).reshape(-1)
        if vector.shape[0] != model.n_params:
            raise ParameterLengthError(model.n_params, vector.shape[0])

        flat = torch.from_numpy(vector)
        offset = 0
        with torch.no_grad():
            for p in model.parameters:
                count = p.numel()
                p.copy_(flat[offset:offset + count].view_as(p))
                offset += count
        return model
