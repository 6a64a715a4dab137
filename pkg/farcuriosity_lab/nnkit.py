"""
Minimal dense-network toolkit: layers, mean squared error, exact backpropagation
and Adam, all in 64-bit numpy arrays.

Every curiosity and policy network of the lab is a `DenseNet`. Gradients are
returned as a flat list ordered like `DenseNet.params()`:
`[W0, b0, W1, b1, ...]`.

Example:
    Fit a two-layer net to a single target:
    ```python
    import numpy as np
    from farcuriosity_lab.nnkit import AdamState, dense_init, train_step

    net = dense_init([32, 64, 64], seed=7)
    adam = AdamState.for_params(net.params(), lr=1e-3)
    x, target = np.full(32, 0.5), np.zeros(64)
    for _ in range(100):
        loss = train_step(net, adam, x, target)
    ```
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from farcuriosity_lab.constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    NNKIT_FORMAT_VERSION,
)
from farcuriosity_lab.exceptions import (
    InvalidArgumentError,
    StateFormatError,
    VersionMismatchError,
)

ACTIVATIONS = ("relu", "identity")

Rng = np.random.Generator
Grads = List[np.ndarray]


def make_rng(seed: Optional[int]) -> Rng:
    """Deterministic PCG64 stream; identical seeds yield identical streams."""
    return np.random.default_rng(seed)


@dataclass
class DenseLayer:
    """Affine map `W @ x + b` followed by an activation."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class DenseNet:
    """A chain of dense layers whose dimensions line up."""

    layers: List[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgumentError("A DenseNet needs at least one layer.")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise InvalidArgumentError(
                    f"Layer dimensions do not chain: {prev.out_dim} -> {nxt.in_dim}."
                )
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise InvalidArgumentError(
                    f"Unknown activation {layer.activation!r}."
                )

    @property
    def sizes(self) -> List[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def activations(self) -> List[str]:
        return [layer.activation for layer in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> List[np.ndarray]:
        """The live parameter arrays, `[W0, b0, W1, b1, ...]`."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(
            [
                DenseLayer(layer.weight.copy(), layer.bias.copy(), layer.activation)
                for layer in self.layers
            ]
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)


def _resolve_activations(
    n_layers: int, activations: Union[None, str, Sequence[str]]
) -> List[str]:
    if activations is None:
        return ["relu"] * (n_layers - 1) + ["identity"]
    if isinstance(activations, str):
        return [activations] * n_layers
    activations = list(activations)
    if len(activations) != n_layers:
        raise InvalidArgumentError(
            f"Expected {n_layers} activation tags, got {len(activations)}."
        )
    return activations


def dense_init(
    layer_sizes: Sequence[int],
    activations: Union[None, str, Sequence[str]] = None,
    seed: Optional[int] = None,
) -> DenseNet:
    """
    Build a dense net with scaled uniform weights and zero biases.

    Relu layers use He-style bounds `sqrt(6 / fan_in)`, identity layers use
    Xavier-style bounds `sqrt(6 / (fan_in + fan_out))`.

    Args:
        layer_sizes: Input size followed by every layer's output size.
        activations: One tag per layer, a single tag for all layers, or None
            for relu hidden layers and an identity output layer.
        seed: Seed of the initialization stream.

    Returns:
        A freshly initialized `DenseNet`.
    """
    sizes = [int(size) for size in layer_sizes]
    if len(sizes) < 2:
        raise InvalidArgumentError("layer_sizes needs an input and an output size.")
    if any(size <= 0 for size in sizes):
        raise InvalidArgumentError(f"Layer sizes must be positive, got {sizes}.")
    tags = _resolve_activations(len(sizes) - 1, activations)
    rng = make_rng(seed)
    layers = []
    for fan_in, fan_out, tag in zip(sizes[:-1], sizes[1:], tags):
        if tag == "relu":
            bound = np.sqrt(6.0 / fan_in)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(DenseLayer(weight, np.zeros(fan_out), tag))
    return DenseNet(layers)


def _as_input(net: DenseNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.in_dim:
        raise InvalidArgumentError(
            f"Input of shape {x.shape} does not match input size {net.in_dim}."
        )
    return x


def _forward_cached(net: DenseNet, x: np.ndarray) -> List[np.ndarray]:
    hidden = [x]
    h = x
    for layer in net.layers:
        h = h @ layer.weight.T + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
        hidden.append(h)
    return hidden


def forward(net: DenseNet, x) -> np.ndarray:
    """Evaluate the net on a vector `(in,)` or a batch `(B, in)`."""
    return _forward_cached(net, _as_input(net, x))[-1]


def backward(net: DenseNet, hidden: List[np.ndarray], grad_out: np.ndarray) -> Grads:
    """
    Backpropagate `grad_out` (the loss gradient w.r.t. the net output) through
    activations cached by a forward pass.
    """
    grads: Grads = [None] * (2 * len(net.layers))
    g = np.atleast_2d(grad_out)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == "relu":
            g = g * (hidden[k + 1] > 0.0).reshape(g.shape)
        h_prev = np.atleast_2d(hidden[k])
        grads[2 * k] = g.T @ h_prev
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0:
            g = g @ layer.weight
    return grads


def loss_and_grads(net: DenseNet, x, grad_fn) -> Tuple[Any, Grads]:
    """
    Generic backprop: `grad_fn(y)` returns `(loss, dloss/dy)` for the output `y`.
    """
    hidden = _forward_cached(net, _as_input(net, x))
    loss, grad_out = grad_fn(hidden[-1])
    return loss, backward(net, hidden, grad_out)


def mse_loss_and_grads(net: DenseNet, x, target) -> Tuple[float, Grads]:
    """
    Mean squared error over output dimensions (and batch rows) and its exact
    gradient with respect to every parameter.
    """
    x = _as_input(net, x)
    target = np.asarray(target, dtype=np.float64)
    expected = x.shape[:-1] + (net.out_dim,)
    if target.shape != expected:
        raise InvalidArgumentError(
            f"Target of shape {target.shape} does not match output shape {expected}."
        )

    def grad_fn(y):
        diff = y - target
        return float(np.mean(diff**2)), 2.0 * diff / diff.size

    return loss_and_grads(net, x, grad_fn)


@dataclass
class AdamState:
    """First/second moments mirroring the parameter shapes, plus step counter."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    lr: float = 1e-3
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-3, **kwargs):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            **kwargs,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m=[a.copy() for a in self.m],
            v=[a.copy() for a in self.v],
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            t=self.t,
        )


def adam_step(
    state: AdamState, params: List[np.ndarray], grads: Grads
) -> Tuple[List[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update, applied in place to `params`.

    Returns:
        The updated parameters and optimizer state.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgumentError("Parameter, gradient and moment lists differ.")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise InvalidArgumentError(
                f"Shape mismatch: param {p.shape}, grad {np.shape(g)}, "
                f"moment {m.shape}."
            )
    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


def train_step(net: DenseNet, state: AdamState, x, target) -> float:
    """One Adam step on the MSE loss; returns the pre-step loss."""
    loss, grads = mse_loss_and_grads(net, x, target)
    adam_step(state, net.params(), grads)
    return loss


def net_to_dict(net: DenseNet) -> Dict[str, Any]:
    """Versioned JSON-ready document; floats keep full precision via `repr`."""
    return {
        "version": NNKIT_FORMAT_VERSION,
        "sizes": net.sizes,
        "activations": net.activations,
        "weights": [layer.weight.tolist() for layer in net.layers],
        "biases": [layer.bias.tolist() for layer in net.layers],
    }


def check_version(doc: Dict[str, Any], kind: str, expected: int) -> None:
    if not isinstance(doc, dict) or "version" not in doc:
        raise StateFormatError(f"{kind} document has no version field.")
    if doc["version"] != expected:
        raise VersionMismatchError(kind, expected, doc["version"])


def net_from_dict(doc: Dict[str, Any]) -> DenseNet:
    check_version(doc, "nnkit network", NNKIT_FORMAT_VERSION)
    try:
        layers = [
            DenseLayer(
                np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64), tag
            )
            for w, b, tag in zip(doc["weights"], doc["biases"], doc["activations"])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise StateFormatError(f"Malformed nnkit network document: {exc}") from exc
    net = DenseNet(layers)
    if net.sizes != list(doc["sizes"]):
        raise StateFormatError(
            f"Declared sizes {doc['sizes']} disagree with weights {net.sizes}."
        )
    return net


def adam_to_dict(state: AdamState) -> Dict[str, Any]:
    return {
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "t": state.t,
        "m": [a.tolist() for a in state.m],
        "v": [a.tolist() for a in state.v],
    }


def adam_from_dict(doc: Dict[str, Any]) -> AdamState:
    try:
        return AdamState(
            m=[np.asarray(a, dtype=np.float64) for a in doc["m"]],
            v=[np.asarray(a, dtype=np.float64) for a in doc["v"]],
            lr=float(doc["lr"]),
            beta1=float(doc["beta1"]),
            beta2=float(doc["beta2"]),
            eps=float(doc["eps"]),
            t=int(doc["t"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StateFormatError(f"Malformed Adam state document: {exc}") from exc
