"""
Pydantic models for network architecture descriptors
"""
import re
from typing import List, Literal, Tuple, Union

from pydantic import BaseModel, Field
from typing_extensions import Annotated

from app.core.exceptions import ArchitectureError


class Conv3x3(BaseModel):
    """3x3 convolution, stride 1, zero padding 1, followed by ReLU"""
    kind: Literal["conv"] = "conv"
    filters: int = Field(..., ge=1)

    def token(self) -> str:
        return f"c3x{self.filters}"


class MaxPool2x2(BaseModel):
    """2x2 max-pool, stride 2 (integer halving)"""
    kind: Literal["pool"] = "pool"

    def token(self) -> str:
        return "p2"


class Dense(BaseModel):
    """Fully-connected layer followed by ReLU"""
    kind: Literal["dense"] = "dense"
    neurons: int = Field(..., ge=1)

    def token(self) -> str:
        return f"fc{self.neurons}"


class Output(BaseModel):
    """Final affine layer producing one logit per class"""
    kind: Literal["out"] = "out"
    classes: int = Field(..., ge=1)

    def token(self) -> str:
        return f"out{self.classes}"


LayerSpec = Annotated[Union[Conv3x3, MaxPool2x2, Dense, Output], Field(discriminator="kind")]

_HEADER = re.compile(r"^\s*in:(\d+)x(\d+)x(\d+)\s*;\s*(.*?)\s*$")
_TOKENS = [
    (re.compile(r"^c3x(\d+)$"), lambda m: Conv3x3(filters=int(m.group(1)))),
    (re.compile(r"^p2$"), lambda m: MaxPool2x2()),
    (re.compile(r"^fc(\d+)$"), lambda m: Dense(neurons=int(m.group(1)))),
    (re.compile(r"^out(\d+)$"), lambda m: Output(classes=int(m.group(1)))),
]


class ArchDescriptor(BaseModel):
    """Layer sequence plus input shape (freq bins, time frames, channels)"""
    input_shape: Tuple[int, int, int]
    layers: List[LayerSpec]

    @classmethod
    def parse(cls, text: str) -> "ArchDescriptor":
        """
        Parse the descriptor grammar, e.g. ``in:16x16x1;c3x8-p2-fc32-out4``

        Raises:
            ArchitectureError: Malformed header or unknown token
        """
        match = _HEADER.match(text)
        if not match:
            raise ArchitectureError(f"descriptor must start with 'in:<H>x<W>x<C>;': {text!r}")

        height, width, channels, body = match.groups()
        layers = []
        for token in filter(None, (t.strip() for t in body.split("-"))):
            for pattern, build in _TOKENS:
                token_match = pattern.match(token)
                if token_match:
                    try:
                        layers.append(build(token_match))
                    except ValueError as e:
                        raise ArchitectureError(f"invalid layer token {token!r}: {e}") from e
                    break
            else:
                raise ArchitectureError(f"unknown layer token {token!r}")

        arch = cls(input_shape=(int(height), int(width), int(channels)), layers=layers)
        arch.validate_layers()
        return arch

    def to_string(self) -> str:
        height, width, channels = self.input_shape
        return f"in:{height}x{width}x{channels};" + "-".join(layer.token() for layer in self.layers)

    def validate_layers(self) -> None:
        """
        Check the structural invariants

        Raises:
            ArchitectureError: Non-positive input, pool underflow, misplaced
                spatial layer, or missing/misplaced Output
        """
        height, width, channels = self.input_shape
        if min(height, width, channels) < 1:
            raise ArchitectureError(f"input shape must be positive, got {self.input_shape}")

        outputs = [i for i, layer in enumerate(self.layers) if isinstance(layer, Output)]
        if len(outputs) != 1 or outputs[0] != len(self.layers) - 1:
            raise ArchitectureError("exactly one Output layer is required and it must be last")

        flattened = False
        for index, layer in enumerate(self.layers):
            if isinstance(layer, (Conv3x3, MaxPool2x2)):
                if flattened:
                    raise ArchitectureError(f"layer {index} ({layer.token()}) follows a dense layer")
                if isinstance(layer, MaxPool2x2):
                    height, width = height // 2, width // 2
                    if height < 1 or width < 1:
                        raise ArchitectureError(
                            f"max-pool at layer {index} underflows spatial dims to {height}x{width}"
                        )
            else:
                flattened = True

    def layer_shapes(self) -> List[Tuple[int, ...]]:
        """Output shape after every layer: (H, W, C) for spatial layers, (n,) after flattening"""
        height, width, channels = self.input_shape
        shapes = []
        features = None
        for layer in self.layers:
            if isinstance(layer, Conv3x3):
                channels = layer.filters
                shapes.append((height, width, channels))
            elif isinstance(layer, MaxPool2x2):
                height, width = height // 2, width // 2
                shapes.append((height, width, channels))
            else:
                features = layer.neurons if isinstance(layer, Dense) else layer.classes
                shapes.append((features,))
        return shapes

    def param_count(self) -> int:
        """Analytic parameter count: conv 9*in*out+out, dense in*out+out"""
        height, width, channels = self.input_shape
        features = None
        total = 0
        for layer in self.layers:
            if isinstance(layer, Conv3x3):
                total += 9 * channels * layer.filters + layer.filters
                channels = layer.filters
            elif isinstance(layer, MaxPool2x2):
                height, width = height // 2, width // 2
            else:
                fan_in = features if features is not None else height * width * channels
                features = layer.neurons if isinstance(layer, Dense) else layer.classes
                total += fan_in * features + features
        return total

    @property
    def num_classes(self) -> int:
        return self.layers[-1].classes

    def __str__(self) -> str:
        return self.to_string()


def kws_vgg(classes: int, height: int = 128, width: int = 128) -> ArchDescriptor:
    """The adapted four-block VGG used for keyword spotting"""
    body = (
        "c3x8-c3x8-c3x16-c3x16-c3x32-c3x32-c3x32-p2-"
        f"c3x64-c3x64-c3x64-p2-fc1000-out{classes}"
    )
    return ArchDescriptor.parse(f"in:{height}x{width}x1;{body}")
