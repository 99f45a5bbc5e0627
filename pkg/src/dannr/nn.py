"""Dense-network core with a closed op vocabulary and exact reverse-mode gradients.

Everything operates on row batches: an input of shape ``(n, in)`` produces an
output of shape ``(n, out)``. A 1-d input is treated as a single row and the
result is returned 1-d again by :func:`dense_forward`.

The :class:`Tape` records dense layers, gradient reversal and the two loss
heads (squared error and binary cross-entropy) as a Wengert list. Backward
replays it in exact reverse order, accumulating adjoints per node, and returns
gradients keyed by ``"<layer>.weight"`` / ``"<layer>.bias"``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

ACTIVATIONS = ("sigmoid", "identity")

#: discriminator probabilities are clamped to [EPS, 1 - EPS] before the logs
EPS = 1e-7


class SchemaError(ValueError):
    """Array shapes or column layouts do not agree."""


class ConfigError(ValueError):
    """An invalid hyper-parameter or configuration value."""


class TapeStateError(RuntimeError):
    """Backward requested on a tape with no recorded forward pass."""


def sigmoid(z):
    """Logistic function, evaluated without overflow for any finite input."""
    z = np.asarray(z, dtype=np.float64)
    # exp of a non-positive argument never overflows
    e = np.exp(-np.abs(z))
    r = 1.0 / (1.0 + e)
    return np.where(z >= 0, r, e * r)


@dataclass
class DenseLayer:
    """Affine map followed by an elementwise activation.

    ``weights`` has shape ``(out, in)``, ``bias`` shape ``(out,)``.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "sigmoid"
    name: str = "layer"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise SchemaError(
                f"{self.name}: bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"{self.name}.weight": self.weights, f"{self.name}.bias": self.bias}

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation, self.name)


def init_dense(in_dim: int, out_dim: int, activation: str, name: str, rng: np.random.Generator) -> DenseLayer:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    bound = 1.0 / np.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=out_dim)
    return DenseLayer(w, b, activation, name)


def _activate(z, activation):
    return sigmoid(z) if activation == "sigmoid" else z


def _affine(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != layer.in_dim:
        raise SchemaError(f"{layer.name}: expected input width {layer.in_dim}, got {x.shape[-1]}")
    return x @ layer.weights.T + layer.bias


@dataclass
class Node:
    """A value produced on a tape. ``index`` is its slot in the tape."""

    value: np.ndarray
    index: int


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: int
    ctx: dict = field(default_factory=dict)


class Tape:
    """Ordered record of the primitive ops of one forward pass."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.records: List[_Record] = []
        self.values: List[np.ndarray] = []
        self._leaves = set()
        self.adjoints = {}

    def __len__(self):
        return len(self.records)

    def _push(self, value, op=None, inputs=(), ctx=None) -> Node:
        index = len(self.values)
        self.values.append(value)
        if op is None:
            self._leaves.add(index)
        else:
            self.records.append(_Record(op, tuple(inputs), index, ctx or {}))
        return Node(value, index)

    def _as_node(self, x) -> Node:
        return x if isinstance(x, Node) else self.input(x)

    # forward ops -------------------------------------------------------

    def input(self, x) -> Node:
        return self._push(np.atleast_2d(np.asarray(x, dtype=np.float64)))

    def dense(self, layer: DenseLayer, x) -> Node:
        x = self._as_node(x)
        out = _activate(_affine(layer, x.value), layer.activation)
        return self._push(out, "dense", (x.index,), {"layer": layer})

    def grad_reverse(self, x, lam: float = 1.0) -> Node:
        if lam < 0:
            raise ConfigError(f"gradient reversal coefficient must be >= 0, got {lam}")
        x = self._as_node(x)
        return self._push(x.value, "grad_reverse", (x.index,), {"lam": float(lam)})

    def squared_error(self, pred, target, normalizer: Optional[float] = None) -> Node:
        """sum((pred - target)^2) / normalizer, default normalizer = number of rows."""
        pred = self._as_node(pred)
        target = np.asarray(target, dtype=np.float64).reshape(pred.value.shape)
        n = pred.value.shape[0] if normalizer is None else normalizer
        resid = pred.value - target
        loss = np.array(np.sum(resid * resid) / n)
        return self._push(loss, "squared_error", (pred.index,), {"resid": resid, "n": n})

    def cross_entropy(self, prob, label, normalizer: Optional[float] = None) -> Node:
        """Binary cross-entropy sum over rows / normalizer, natural log.

        ``label`` is a scalar domain label shared by all rows, or one per row.
        """
        prob = self._as_node(prob)
        d = np.asarray(label, dtype=np.float64)
        if d.ndim:
            d = d.reshape(prob.value.shape)
        n = prob.value.shape[0] if normalizer is None else normalizer
        p = np.clip(prob.value, EPS, 1.0 - EPS)
        loss = np.array(np.sum(-d * np.log(p) - (1.0 - d) * np.log1p(-p)) / n)
        return self._push(loss, "cross_entropy", (prob.index,), {"p": p, "d": d, "n": n, "raw": prob.value})

    def combine(self, terms) -> Node:
        """Scalar linear combination ``sum(coef * node)`` of scalar nodes."""
        terms = [(self._as_node(node), float(c)) for node, c in terms]
        value = np.array(sum(c * float(node.value) for node, c in terms))
        return self._push(value, "combine", tuple(node.index for node, _ in terms),
                          {"coefs": [c for _, c in terms]})

    # backward -----------------------------------------------------------

    def backward(self, root: Node, seed=1.0) -> Dict[str, np.ndarray]:
        if not self.records:
            raise TapeStateError("backward called before any forward pass was recorded")
        adj: Dict[int, np.ndarray] = {root.index: np.asarray(seed, dtype=np.float64) * np.ones_like(root.value)}
        self.adjoints = adj
        grads: Dict[str, np.ndarray] = {}

        def accumulate(i, g):
            if i in adj:
                adj[i] = adj[i] + g
            else:
                adj[i] = g

        for rec in reversed(self.records):
            g = adj.get(rec.output)
            if g is None:
                continue
            ctx = rec.ctx
            if rec.op == "dense":
                layer = ctx["layer"]
                x = self.values[rec.inputs[0]]
                if layer.activation == "sigmoid":
                    y = self.values[rec.output]
                    dz = g * y * (1.0 - y)
                else:
                    dz = g
                gw = dz.T @ x
                gb = dz.sum(axis=0)
                kw, kb = f"{layer.name}.weight", f"{layer.name}.bias"
                grads[kw] = grads[kw] + gw if kw in grads else gw
                grads[kb] = grads[kb] + gb if kb in grads else gb
                if rec.inputs[0] not in self._leaves:
                    accumulate(rec.inputs[0], dz @ layer.weights)
            elif rec.op == "grad_reverse":
                accumulate(rec.inputs[0], -ctx["lam"] * g)
            elif rec.op == "squared_error":
                accumulate(rec.inputs[0], g * 2.0 * ctx["resid"] / ctx["n"])
            elif rec.op == "cross_entropy":
                p, d, raw = ctx["p"], ctx["d"], ctx["raw"]
                dp = (-d / p + (1.0 - d) / (1.0 - p)) / ctx["n"]
                # derivative of the clamp: zero outside [EPS, 1 - EPS]
                dp = np.where((raw < EPS) | (raw > 1.0 - EPS), 0.0, dp)
                accumulate(rec.inputs[0], g * dp)
            elif rec.op == "combine":
                for i, c in zip(rec.inputs, ctx["coefs"]):
                    accumulate(i, c * g)
            else:  # pragma: no cover
                raise TapeStateError(f"unknown op {rec.op}")
        return grads

    def adjoint(self, node: Node) -> Optional[np.ndarray]:
        """Adjoint reached at ``node`` by the most recent backward pass."""
        return self.adjoints.get(node.index)


def dense_forward(layer: DenseLayer, x, tape: Optional[Tape] = None):
    """Apply ``activation(W x + b)``. Returns a :class:`Node` when recording."""
    if tape is not None:
        return tape.dense(layer, x)
    x = np.asarray(x, dtype=np.float64)
    return _activate(_affine(layer, x), layer.activation)


def grad_reverse(x, lam: float = 1.0, tape: Optional[Tape] = None):
    """Identity forward; scales the upstream adjoint by ``-lam`` on backward."""
    if lam < 0:
        raise ConfigError(f"gradient reversal coefficient must be >= 0, got {lam}")
    if tape is not None:
        return tape.grad_reverse(x, lam)
    return x


def backward(tape: Tape, root: Node, seed=1.0) -> Dict[str, np.ndarray]:
    return tape.backward(root, seed)
