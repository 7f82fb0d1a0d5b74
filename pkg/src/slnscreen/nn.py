"""Layer stack, model assembly, optimizers and whole-model gradient checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from . import tensor as T
from .errors import GradientCheckError, ModelConfigError, ShapeError

LAYER_KINDS = ("conv", "maxpool", "relu", "flatten", "dense", "dropout", "softmax")

# fields each kind must carry; everything else must be None
_REQUIRED = {
    "conv": {"filters", "kernel", "stride", "padding", "activation"},
    "maxpool": {"window", "stride"},
    "relu": set(),
    "flatten": set(),
    "dense": {"units"},
    "dropout": {"rate"},
    "softmax": set(),
}
_OPTIONAL_FIELDS = ("filters", "kernel", "stride", "padding", "activation", "window", "units", "rate")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int | None = None
    kernel: int | None = None
    stride: int | None = None
    padding: str | None = None
    activation: str | None = None
    window: int | None = None
    units: int | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ModelConfigError(f"unknown layer kind {self.kind!r}")
        need = _REQUIRED[self.kind]
        for name in _OPTIONAL_FIELDS:
            value = getattr(self, name)
            if name in need and value is None:
                raise ModelConfigError(f"{self.kind} layer requires {name!r}")
            if name not in need and value is not None:
                raise ModelConfigError(f"{self.kind} layer does not take {name!r}")
        if self.kind == "dropout" and not 0 <= self.rate < 1:
            raise ModelConfigError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.kind == "conv" and self.activation not in ("none", "relu"):
            raise ModelConfigError(f"conv activation must be 'none' or 'relu', got {self.activation!r}")
        for name in ("filters", "kernel", "stride", "window", "units"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ModelConfigError(f"{self.kind} layer {name} must be >= 1, got {value}")

    @classmethod
    def conv(cls, filters, kernel=3, stride=1, padding="same", activation="relu"):
        return cls("conv", filters=filters, kernel=kernel, stride=stride, padding=padding, activation=activation)

    @classmethod
    def maxpool(cls, window=2, stride=None):
        return cls("maxpool", window=window, stride=window if stride is None else stride)

    @classmethod
    def dense(cls, units):
        return cls("dense", units=units)

    @classmethod
    def dropout(cls, rate):
        return cls("dropout", rate=float(rate))

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def default_layers(
    conv_filters: Iterable[int] = (16, 32, 64, 128),
    kernel: int = 3,
    dense_units: int = 256,
    dropout: float = 0.5,
    num_classes: int = 4,
) -> list[LayerSpec]:
    """Conv(+ReLU)/max-pool blocks followed by a dense head.

    With the default four blocks this is exactly 14 layer specs:
    8 conv/pool, then flatten, dense, relu, dropout, dense, softmax.
    """
    layers: list[LayerSpec] = []
    for filters in conv_filters:
        layers.append(LayerSpec.conv(filters, kernel))
        layers.append(LayerSpec.maxpool(2))
    layers += [
        LayerSpec("flatten"),
        LayerSpec.dense(dense_units),
        LayerSpec("relu"),
        LayerSpec.dropout(dropout),
        LayerSpec.dense(num_classes),
        LayerSpec("softmax"),
    ]
    return layers


@dataclass
class ModelConfig:
    input_shape: tuple[int, int, int] = (100, 100, 3)
    layers: list[LayerSpec] = field(default_factory=default_layers)
    num_classes: int = 4
    seed: int = 0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]

    def shape_chain(self) -> list[tuple[int, ...]]:
        """Activation shapes from the input through every layer.

        Raises :class:`ModelConfigError` naming the first layer whose input
        shape it cannot accept, or if the stack does not end in a K-way softmax.
        """
        shape: tuple[int, ...] = self.input_shape
        if len(shape) != 3 or min(shape) < 1:
            raise ModelConfigError(f"input shape must be (H, W, C), got {shape}")
        chain = [shape]
        for i, spec in enumerate(self.layers):
            where = f"layer {i} ({spec.kind})"
            if spec.kind in ("conv", "maxpool", "flatten") and len(shape) != 3:
                raise ModelConfigError(f"{where} needs an (H, W, C) input, got {shape}")
            if spec.kind == "dense" and len(shape) != 1:
                raise ModelConfigError(f"{where} needs a flat input, got {shape}; add a flatten layer")
            if spec.kind == "softmax" and len(shape) != 1:
                raise ModelConfigError(f"{where} needs a flat input, got {shape}")
            if spec.kind == "conv":
                cs = T.ConvSpec(spec.kernel, spec.kernel, shape[2], spec.filters, spec.stride, spec.padding)
                try:
                    h, w = cs.output_hw(shape[0], shape[1])
                except ShapeError as exc:
                    raise ModelConfigError(f"{where}: {exc}") from None
                shape = (h, w, spec.filters)
            elif spec.kind == "maxpool":
                if spec.window > shape[0] or spec.window > shape[1]:
                    raise ModelConfigError(f"{where}: window {spec.window} larger than input {shape}")
                shape = (
                    (shape[0] - spec.window) // spec.stride + 1,
                    (shape[1] - spec.window) // spec.stride + 1,
                    shape[2],
                )
            elif spec.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif spec.kind == "dense":
                shape = (spec.units,)
            chain.append(shape)
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ModelConfigError("the final layer must be a softmax")
        if shape != (self.num_classes,):
            raise ModelConfigError(f"final layer emits shape {shape}, expected ({self.num_classes},)")
        return chain

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [l.to_dict() for l in self.layers],
            "num_classes": self.num_classes,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        try:
            return cls(
                input_shape=tuple(data["input_shape"]),
                layers=[LayerSpec(**l) for l in data["layers"]],
                num_classes=int(data["num_classes"]),
                seed=int(data["seed"]),
            )
        except (KeyError, TypeError) as exc:
            raise ModelConfigError(f"malformed model config: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def reduced_config(seed: int = 0, dropout: float = 0.5) -> ModelConfig:
    """The same architecture shrunk to 12x12 inputs, small enough for finite differences."""
    return ModelConfig(
        input_shape=(12, 12, 3),
        layers=default_layers(conv_filters=(4, 8), dense_units=16, dropout=dropout),
        seed=seed,
    )


# -- runtime layers ---------------------------------------------------------


class Layer:
    params: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}

    def forward(self, x, train, rng):
        raise NotImplementedError

    def backward(self, grad):
        """Return the input gradient; parameter gradients land in ``self.grads``."""
        raise NotImplementedError


class Conv(Layer):
    def __init__(self, spec: LayerSpec, in_shape, rng, dtype, first: bool):
        super().__init__()
        self.cs = T.ConvSpec(spec.kernel, spec.kernel, in_shape[2], spec.filters, spec.stride, spec.padding)
        fan_in = spec.kernel * spec.kernel * in_shape[2]
        limit = np.sqrt(6.0 / fan_in)
        self.params = {
            "kernels": rng.uniform(-limit, limit, self.cs.kernel_shape).astype(dtype),
            "bias": np.zeros(spec.filters, dtype=dtype),
        }
        self.relu = spec.activation == "relu"
        self.first = first

    def forward(self, x, train, rng):
        out, cols = T.conv2d_forward(x, self.cs, self.params["kernels"], self.params["bias"])
        if self.relu:
            out = T.relu(out)
        self.cache = (x, cols, out)
        return out

    def backward(self, grad):
        x, cols, out = self.cache
        if self.relu:
            grad = grad * (out > 0)
        dx, dk, db = T.conv2d_backward(grad, x, self.cs, self.params["kernels"], cols,
                                       need_input_grad=not self.first)
        self.grads = {"kernels": dk, "bias": db}
        return dx


class MaxPool(Layer):
    def __init__(self, spec: LayerSpec):
        super().__init__()
        self.window, self.stride = spec.window, spec.stride

    def forward(self, x, train, rng):
        out, argmax = T.maxpool2d(x, self.window, self.stride)
        self.cache = (x.shape, argmax)
        return out

    def backward(self, grad):
        shape, argmax = self.cache
        return T.maxpool2d_backward(grad, argmax, shape, self.window, self.stride)


class ReLU(Layer):
    def forward(self, x, train, rng):
        self.cache = x
        return T.relu(x)

    def backward(self, grad):
        return T.relu_backward(grad, self.cache)


class Flatten(Layer):
    def forward(self, x, train, rng):
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self.cache)


class Dense(Layer):
    def __init__(self, spec: LayerSpec, in_shape, rng, dtype):
        super().__init__()
        limit = np.sqrt(6.0 / in_shape[0])
        self.params = {
            "weights": rng.uniform(-limit, limit, (in_shape[0], spec.units)).astype(dtype),
            "bias": np.zeros(spec.units, dtype=dtype),
        }

    def forward(self, x, train, rng):
        self.cache = x
        return T.dense(x, self.params["weights"], self.params["bias"])

    def backward(self, grad):
        dx, dw, db = T.dense_backward(grad, self.cache, self.params["weights"])
        self.grads = {"weights": dw, "bias": db}
        return dx


class Dropout(Layer):
    def __init__(self, spec: LayerSpec):
        super().__init__()
        self.rate = spec.rate

    def forward(self, x, train, rng):
        if not train or self.rate == 0:
            self.mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs a random generator")
        self.mask = T.dropout_mask(x.shape, self.rate, rng, dtype=x.dtype)
        return x * self.mask

    def backward(self, grad):
        return grad if self.mask is None else grad * self.mask


class Softmax(Layer):
    def forward(self, x, train, rng):
        self.cache = T.softmax(x)
        return self.cache

    def backward(self, grad):
        return T.softmax_backward(grad, self.cache)


class Model:
    """A built layer stack.  Holds weights, never optimizer state."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.shapes = config.shape_chain()
        self.metadata: dict = {}
        rng = np.random.default_rng(config.seed)
        self.layers: list[Layer] = []
        for i, spec in enumerate(config.layers):
            in_shape = self.shapes[i]
            if spec.kind == "conv":
                layer = Conv(spec, in_shape, rng, self.dtype, first=(i == 0))
            elif spec.kind == "maxpool":
                layer = MaxPool(spec)
            elif spec.kind == "relu":
                layer = ReLU()
            elif spec.kind == "flatten":
                layer = Flatten()
            elif spec.kind == "dense":
                layer = Dense(spec, in_shape, rng, self.dtype)
            elif spec.kind == "dropout":
                layer = Dropout(spec)
            else:
                layer = Softmax()
            self.layers.append(layer)

    def __len__(self):
        return len(self.layers)

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", p) for i, layer in enumerate(self.layers) for name, p in layer.params.items()]

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p in self.named_parameters()]

    def astype(self, dtype) -> "Model":
        clone = Model(self.config, dtype)
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst[...] = src
        clone.metadata = dict(self.metadata)
        return clone

    def _check_batch(self, batch):
        if batch.ndim != 4 or batch.shape[1:] != self.config.input_shape:
            raise ShapeError(
                f"batch shape {batch.shape} does not match model input (B, {', '.join(map(str, self.config.input_shape))})"
            )

    def forward(self, batch, mode: str = "infer", rng: np.random.Generator | None = None) -> np.ndarray:
        """Class probabilities ``[B, K]``.  Dropout is active only in ``train`` mode."""
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        batch = np.asarray(batch)
        self._check_batch(batch)
        h = batch.astype(self.dtype, copy=False)
        train = mode == "train"
        for layer in self.layers:
            h = layer.forward(h, train, rng)
        return h

    def backward(self, batch, targets, mode: str = "train", rng=None):
        """Forward + backward pass.  Returns ``(grads, mean_loss)``.

        ``grads`` is ordered like :meth:`named_parameters`; the loss is the
        batch-mean cross-entropy, so gradients are batch means as well.
        """
        targets = np.asarray(targets)
        T._check_targets(targets, self.config.num_classes)
        probs = self.forward(batch, mode, rng)
        if targets.shape != (probs.shape[0],):
            raise ShapeError(f"targets shape {targets.shape} does not match batch size {probs.shape[0]}")
        loss = float(np.mean(T.cross_entropy(probs, targets)))
        # softmax + cross-entropy fuse to (p - onehot) / B at the logits
        grad = T.softmax_cross_entropy_grad(probs, targets) / probs.shape[0]
        for layer in reversed(self.layers[:-1]):
            grad = layer.backward(grad)
        grads = {}
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                grads[f"{i}.{name}"] = layer.grads[name]
        return grads, loss


def build_model(config: ModelConfig | None = None, dtype=np.float32) -> Model:
    return Model(config or ModelConfig(), dtype)


def predict_probs(probs) -> int:
    """Argmax with ties resolved toward the lowest category index."""
    return int(np.argmax(np.asarray(probs)))


def predict(model: Model, patch) -> int:
    from .corpus import DiagnosticCategory

    probs = model.forward(np.asarray(patch)[None], "infer")[0]
    return DiagnosticCategory(predict_probs(probs))


# -- optimizers -------------------------------------------------------------


class SGD:
    def __init__(self, lr: float = 1e-2):
        self.lr = lr
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        for p, g in zip(params, grads):
            p -= (self.lr * g).astype(p.dtype, copy=False)
        self.step_count += 1


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        corr1 = 1 - self.beta1**t
        corr2 = 1 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)).astype(p.dtype, copy=False)


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ModelConfigError(f"unknown optimizer {name!r} (expected 'adam' or 'sgd')")


def apply_update(model: Model, grads: dict[str, np.ndarray], optimizer) -> None:
    """Advance ``optimizer`` one step, updating the model's weights in place."""
    named = model.named_parameters()
    if set(grads) != {name for name, _ in named}:
        raise ShapeError(f"gradient names {sorted(grads)} do not match model parameters")
    ordered = []
    for name, p in named:
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, parameter has {p.shape}")
        ordered.append(g)
    optimizer.step([p for _, p in named], ordered)


def kink_margin(model: Model, batch, mode: str = "infer", rng=None) -> float:
    """Distance of ``batch`` from the nearest non-differentiable point.

    The smallest of every ReLU pre-activation magnitude and every top-two gap
    inside a max-pool window whose winner is positive.
    """
    h = np.asarray(batch, dtype=model.dtype)
    margin = np.inf
    for layer in model.layers:
        if isinstance(layer, Conv) and layer.relu:
            pre, _ = T.conv2d_forward(h, layer.cs, layer.params["kernels"], layer.params["bias"])
            margin = min(margin, float(np.abs(pre).min()))
        elif isinstance(layer, ReLU):
            margin = min(margin, float(np.abs(h).min()))
        elif isinstance(layer, MaxPool):
            win = np.lib.stride_tricks.sliding_window_view(h, (layer.window, layer.window), axis=(1, 2))
            win = win[:, :: layer.stride, :: layer.stride]
            top = np.sort(win.reshape(*win.shape[:4], -1), axis=-1)[..., -2:]
            live = top[..., 1] > 0
            if live.any():
                margin = min(margin, float((top[..., 1] - top[..., 0])[live].min()))
        h = layer.forward(h, mode == "train", rng)
    return margin


def model_grad_check(config: ModelConfig, seed: int = 0, batch_size: int = 2, step: float = 1e-4,
                     max_draws: int = 500) -> float:
    """Whole-model central-difference check in float64, dropout mask held fixed.

    Inputs are redrawn until every ReLU and max-pool decision sits at least
    ``3 * step`` away from its switching point; a difference straddling a kink
    measures the kink, not the gradient.
    """
    rng = np.random.default_rng(seed)
    model = build_model(ModelConfig(config.input_shape, config.layers, config.num_classes, seed), np.float64)
    for _ in range(max_draws):
        batch = rng.uniform(0, 1, (batch_size, *config.input_shape))
        targets = rng.integers(0, config.num_classes, batch_size)
        dropout_seed = int(rng.integers(2**31))
        if kink_margin(model, batch, "train", np.random.default_rng(dropout_seed)) >= 3 * step:
            break
    else:
        raise GradientCheckError(f"no kink-free input found in {max_draws} draws (seed {seed})")

    def loss():
        probs = model.forward(batch, "train", np.random.default_rng(dropout_seed))
        return float(np.mean(T.cross_entropy(probs, targets)))

    grads, _ = model.backward(batch, targets, "train", np.random.default_rng(dropout_seed))
    return T.max_gradient_error(loss, dict(model.named_parameters()), grads, step)
