"""Dense, orthogonal-softmax, Dropout and DropConnect layers.

Every layer maps a ``d_in x n`` batch to a ``d_out x n`` batch and keeps the
input of its last forward pass so that ``backward`` can be called once per
forward. Parameter gradients are left in ``layer.grads`` keyed like
``layer.params``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError, as_matrix, softmax, softmax_backward

ACTIVATIONS = ("relu", "identity", "softmax")


class ConfigError(ValueError):
    """Invalid layer or model configuration."""


class LayerStateError(RuntimeError):
    """``backward`` called without a cached forward input."""


def init_weights(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(d_in)
    return rng.uniform(-bound, bound, size=(d_in, d_out))


@dataclass(frozen=True)
class MaskMatrix:
    """Fixed block-diagonal 0/1 mask giving each class a contiguous row block."""

    d: int
    k: int
    block_sizes: tuple[int, ...]
    matrix: np.ndarray = field(repr=False, compare=False)

    def rows_of(self, cls: int) -> range:
        start = sum(self.block_sizes[:cls])
        return range(start, start + self.block_sizes[cls])

    @property
    def owner(self) -> np.ndarray:
        """Class index owning each of the ``d`` input rows."""
        return np.repeat(np.arange(self.k), self.block_sizes)


def build_mask(d: int, k: int) -> MaskMatrix:
    if k < 2:
        raise ConfigError(f"need at least 2 classes, got k={k}")
    if d < k:
        raise ConfigError(
            f"each class needs at least one hidden neuron: width {d} < class count {k}"
        )
    base, extra = divmod(d, k)
    sizes = tuple(base + 1 if j < extra else base for j in range(k))
    m = np.zeros((d, k), dtype=np.float64)
    start = 0
    for j, size in enumerate(sizes):
        m[start : start + size, j] = 1.0
        start += size
    m.setflags(write=False)
    return MaskMatrix(d=d, k=k, block_sizes=sizes, matrix=m)


class Layer:
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]
    training: bool = False

    def train(self, mode: bool = True) -> None:
        self.training = mode

    def eval(self) -> None:
        self.train(False)

    def _require_cache(self):
        if getattr(self, "_x", None) is None:
            raise LayerStateError(f"{type(self).__name__}.backward called before forward")
        return self._x


class DenseLayer(Layer):
    """``a(W^T x + b)`` with ``W`` stored as ``d_in x d_out``."""

    def __init__(self, weights, bias=None, activation: str = "identity"):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.params = {"W": as_matrix(weights).copy()}
        if bias is not None:
            b = as_matrix(bias).copy()
            if b.shape != (self.d_out, 1):
                raise ShapeError(f"bias shape {b.shape} does not match d_out={self.d_out}")
            self.params["b"] = b
        self.activation = activation
        self.grads = {}
        self._x = None
        self._out = None

    @classmethod
    def create(cls, rng, d_in: int, d_out: int, bias: bool = True, activation: str = "identity"):
        w = init_weights(rng, d_in, d_out)
        b = rng.uniform(-1 / np.sqrt(d_in), 1 / np.sqrt(d_in), size=(d_out, 1)) if bias else None
        return cls(w, b, activation)

    @property
    def d_in(self) -> int:
        return self.params["W"].shape[0]

    @property
    def d_out(self) -> int:
        return self.params["W"].shape[1]

    @property
    def has_bias(self) -> bool:
        return "b" in self.params

    def effective_weights(self) -> np.ndarray:
        return self.params["W"]

    def pre_activation(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.d_in:
            raise ShapeError(f"layer expects {self.d_in} input rows, got {x.shape[0]}x{x.shape[1]}")
        z = self.effective_weights().T @ x
        if self.has_bias:
            z = z + self.params["b"]
        return z

    def forward(self, x) -> np.ndarray:
        x = as_matrix(x)
        z = self.pre_activation(x)
        if self.activation == "relu":
            out = np.maximum(z, 0.0)
        elif self.activation == "softmax":
            out = softmax(z)
        else:
            out = z
        self._x, self._out = x, out
        return out

    def _grad_pre_activation(self, grad_out: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return grad_out * (self._out > 0)
        if self.activation == "softmax":
            return softmax_backward(self._out, grad_out)
        return grad_out

    def backward(self, grad_out) -> np.ndarray:
        x = self._require_cache()
        gz = self._grad_pre_activation(as_matrix(grad_out))
        self.grads = {"W": x @ gz.T}
        if self.has_bias:
            self.grads["b"] = gz.sum(axis=1, keepdims=True)
        return self.effective_weights() @ gz


class OslLayer(Layer):
    """Classification layer whose weight matrix is multiplied by a fixed block mask.

    ``forward`` returns class probabilities; ``logits`` the masked linear
    scores. ``backward`` takes the gradient with respect to the logits, which
    is what the losses produce.
    """

    activation = "softmax"
    has_bias = False

    def __init__(self, weights, mask: MaskMatrix):
        w = as_matrix(weights)
        if w.shape != mask.matrix.shape:
            raise ShapeError(f"weights {w.shape} do not match mask {mask.matrix.shape}")
        # masked entries start at zero and only ever receive zero gradients
        self.params = {"W": w * mask.matrix}
        self.mask = mask
        self.grads = {}
        self._x = None

    @classmethod
    def create(cls, rng, d_in: int, k: int):
        return cls(init_weights(rng, d_in, k), build_mask(d_in, k))

    @property
    def d_in(self) -> int:
        return self.mask.d

    @property
    def d_out(self) -> int:
        return self.mask.k

    def effective_weights(self) -> np.ndarray:
        return self.mask.matrix * self.params["W"]

    def logits(self, v) -> np.ndarray:
        v = as_matrix(v)
        if v.shape[0] != self.d_in:
            raise ShapeError(f"OSL expects {self.d_in} input rows, got {v.shape[0]}x{v.shape[1]}")
        self._x = v
        return self.effective_weights().T @ v

    pre_activation = logits

    def forward(self, v) -> np.ndarray:
        return softmax(self.logits(v))

    def backward(self, grad_logits) -> np.ndarray:
        v = self._require_cache()
        g = as_matrix(grad_logits)
        self.grads = {"W": self.mask.matrix * (v @ g.T)}
        return self.effective_weights() @ g


def osl_forward(layer: OslLayer, v) -> np.ndarray:
    return layer.forward(v)


def osl_backward(layer: OslLayer, upstream_grad, cached_input=None):
    """Return ``(weight_grad, input_grad)`` for gradient ``upstream_grad`` on the logits."""
    if cached_input is not None:
        layer._x = as_matrix(cached_input)
    input_grad = layer.backward(upstream_grad)
    return layer.grads["W"], input_grad


class DropoutLayer(Layer):
    """Inverted dropout: survivors are scaled by ``1/(1-p)`` during training."""

    params: dict = {}

    def __init__(self, p: float, rng: np.random.Generator | None = None):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {}
        self.grads = {}
        self._scale = None
        self._x = None

    def forward(self, x) -> np.ndarray:
        x = as_matrix(x)
        self._x = x
        if not self.training or self.p == 0.0:
            self._scale = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._scale = keep / (1.0 - self.p)
        return x * self._scale

    def backward(self, grad_out) -> np.ndarray:
        self._require_cache()
        g = as_matrix(grad_out)
        return g if self._scale is None else g * self._scale


class DropConnectLayer(DenseLayer):
    """Dense layer with per-connection Bernoulli masks during training.

    A fresh mask is drawn on every training forward pass; at evaluation the
    expected weights ``(1-q) W`` are used.
    """

    def __init__(self, weights, bias=None, activation: str = "identity", q: float = 0.5,
                 rng: np.random.Generator | None = None):
        if not 0.0 <= q < 1.0:
            raise ConfigError(f"drop-connect probability must lie in [0, 1), got {q}")
        super().__init__(weights, bias, activation)
        self.q = q
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._conn = 1.0 - q

    @classmethod
    def wrap(cls, dense: DenseLayer, q: float, rng=None):
        return cls(dense.params["W"], dense.params.get("b"), dense.activation, q, rng)

    def effective_weights(self) -> np.ndarray:
        return self._conn * self.params["W"]

    def forward(self, x) -> np.ndarray:
        if self.training and self.q > 0.0:
            self._conn = (self.rng.random(self.params["W"].shape) >= self.q).astype(np.float64)
        else:
            self._conn = 1.0 - self.q
        return super().forward(x)

    def backward(self, grad_out) -> np.ndarray:
        gx = super().backward(grad_out)
        self.grads["W"] = self._conn * self.grads["W"]
        return gx


def dropout_forward(layer: DropoutLayer, x) -> np.ndarray:
    return layer.forward(x)


def dropconnect_forward(layer: DropConnectLayer, x) -> np.ndarray:
    return layer.forward(x)
