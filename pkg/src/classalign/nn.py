"""Small fully-connected networks and the SGD optimizer used to train them.

The adaptation model bundles one feature extractor with three heads that
share its feature space: the main classifier, an auxiliary classifier for
the disparity objective, and a binary domain discriminator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_FORMAT_VERSION = 1


class Parameter(Tensor):
    """Leaf tensor with a name and a weight-decay flag."""

    __slots__ = ("name", "decay")

    def __init__(self, values, name: str, decay: bool = True):
        super().__init__(values, requires_grad=True)
        self.name = name
        self.decay = decay


def he_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(he_uniform(rng, in_dim, (in_dim, out_dim)), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim), f"{name}.bias", decay=False)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.weight) + self.bias

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class MLP:
    """Stack of linear layers with relu after every layer except, optionally, the last."""

    def __init__(self, dims: list[int], rng: np.random.Generator, name: str,
                 relu_output: bool = False):
        self.dims = list(dims)
        self.relu_output = relu_output
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, f"{name}.{i}") for i in range(len(dims) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        out = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            out = layer(out)
            if i < last or self.relu_output:
                out = ad.relu(out)
        return out

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = (128, 128)
    feature_dim: int = 64
    head_hidden_dim: int = 64

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden_dims": list(self.hidden_dims),
            "feature_dim": self.feature_dim,
            "head_hidden_dim": self.head_hidden_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            num_classes=int(d["num_classes"]),
            hidden_dims=tuple(int(v) for v in d["hidden_dims"]),
            feature_dim=int(d["feature_dim"]),
            head_hidden_dim=int(d["head_hidden_dim"]),
        )


class AdaptationModel:
    """Feature extractor plus classifier, auxiliary classifier, and discriminator heads.

    The two classifier heads have identical output arity; all heads consume
    the same feature space. Initialization is fully determined by the rng
    handed in, so identical seeds give bit-identical parameters.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.extractor = MLP([c.input_dim, *c.hidden_dims, c.feature_dim], rng,
                             "extractor", relu_output=True)
        self.classifier = MLP([c.feature_dim, c.head_hidden_dim, c.num_classes], rng,
                              "classifier")
        self.auxiliary = MLP([c.feature_dim, c.head_hidden_dim, c.num_classes], rng,
                             "auxiliary")
        self.discriminator = MLP([c.feature_dim, c.head_hidden_dim, 1], rng,
                                 "discriminator")

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def features(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.values.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(
                f"features: expected [batch, {self.config.input_dim}], got {x.shape}"
            )
        return self.extractor(x)

    def class_logits(self, x) -> Tensor:
        return self.classifier(self.features(x))

    def predict(self, x) -> np.ndarray:
        """Class probabilities, one row per example (rows sum to 1)."""
        with ad.no_grad():
            return ad.softmax(self.class_logits(x)).values

    def predict_label(self, x) -> np.ndarray:
        with ad.no_grad():
            return argmax_labels(self.class_logits(x).values)

    def parameters(self) -> list[Parameter]:
        return (self.extractor.parameters() + self.classifier.parameters()
                + self.auxiliary.parameters() + self.discriminator.parameters())

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Row argmax with ties resolved to the smallest label id."""
    return np.argmax(logits, axis=1).astype(np.int64)


def build_model(input_dim: int, num_classes: int, seed_rng: np.random.Generator,
                **overrides) -> AdaptationModel:
    config = ModelConfig(input_dim=input_dim, num_classes=num_classes, **overrides)
    return AdaptationModel(config, seed_rng)


@dataclass
class SgdConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class Sgd:
    """Nesterov-momentum SGD with weight decay folded into the gradient.

    Per parameter: g <- grad + wd * theta (decay applies to weights only),
    buf <- mu * buf + g, theta <- theta - lr * (g + mu * buf). Momentum
    buffers start at zero.
    """

    params: list[Parameter]
    config: SgdConfig
    buffers: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.buffers = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        lr, mu, wd = (self.config.learning_rate, self.config.momentum,
                      self.config.weight_decay)
        for p, buf in zip(self.params, self.buffers):
            if p.grad is None:
                continue
            if p.grad.shape != p.values.shape:
                raise ValueError(f"sgd: grad {p.grad.shape} vs param {p.values.shape}")
            g = p.grad + wd * p.values if (wd and p.decay) else p.grad.copy()
            buf *= mu
            buf += g
            if mu:
                g = g + mu * buf
            p.values = p.values - lr * g

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def save_checkpoint(model: AdaptationModel, path) -> None:
    arrays = {name: p.values for name, p in model.named_parameters().items()}
    arrays["_meta"] = np.frombuffer(
        json.dumps({"format_version": CHECKPOINT_FORMAT_VERSION,
                    "model": model.config.to_dict()}).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> AdaptationModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["_meta"]))
        if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {meta['format_version']}")
        config = ModelConfig.from_dict(meta["model"])
        model = AdaptationModel(config, np.random.default_rng(0))
        for name, p in model.named_parameters().items():
            stored = data[name]
            if stored.shape != p.values.shape:
                raise ValueError(f"checkpoint mismatch for {name}: "
                                 f"{stored.shape} vs {p.values.shape}")
            p.values = stored.astype(np.float64)
    return model
