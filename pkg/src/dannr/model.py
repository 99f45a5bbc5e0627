"""DANN-R architecture: feature extractor, regressor and domain discriminator.

Domain labels follow the convention 0 = source, 1 = target, so the
discriminator output is the probability that a sample comes from the target.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .nn import DenseLayer, SchemaError, Tape, init_dense, sigmoid

SOURCE = 0
TARGET = 1

CHECKPOINT_FORMAT = "dannr-checkpoint/1"


@dataclass
class DannrModel:
    feature_layers: List[DenseLayer]
    regressor: DenseLayer
    discriminator: DenseLayer
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regressor.activation != "identity" or self.regressor.out_dim != 1:
            raise SchemaError("regressor must be a width-1 identity layer")
        if self.discriminator.activation != "sigmoid" or self.discriminator.out_dim != 1:
            raise SchemaError("discriminator must be a width-1 sigmoid layer")
        prev = self.feature_layers[0].in_dim
        for layer in self.feature_layers:
            if layer.in_dim != prev:
                raise SchemaError(f"{layer.name}: input width {layer.in_dim} != {prev}")
            prev = layer.out_dim
        if self.regressor.in_dim != prev or self.discriminator.in_dim != prev:
            raise SchemaError("regressor/discriminator width does not match feature width")

    @property
    def input_dim(self) -> int:
        return self.feature_layers[0].in_dim

    @property
    def feature_dim(self) -> int:
        return self.feature_layers[-1].out_dim

    @property
    def hidden(self) -> tuple:
        return tuple(layer.out_dim for layer in self.feature_layers)

    def layers(self) -> List[DenseLayer]:
        return [*self.feature_layers, self.regressor, self.discriminator]

    def parameters(self) -> Dict[str, np.ndarray]:
        """Live parameter arrays keyed like the gradients from :class:`Tape`."""
        params = {}
        for layer in self.layers():
            params.update(layer.parameters())
        return params

    def regression_parameters(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.parameters().items() if not k.startswith("d.")}

    def copy(self) -> "DannrModel":
        return DannrModel([l.copy() for l in self.feature_layers], self.regressor.copy(),
                          self.discriminator.copy(), dict(self.meta))

    def features(self, X) -> np.ndarray:
        h = np.atleast_2d(np.asarray(X, dtype=np.float64))
        for layer in self.feature_layers:
            h = sigmoid(h @ layer.weights.T + layer.bias) if layer.activation == "sigmoid" \
                else h @ layer.weights.T + layer.bias
        return h

    def predict(self, X) -> np.ndarray:
        """Regression output for each row of ``X``."""
        f = self.features(_check_width(self, X))
        return (f @ self.regressor.weights.T + self.regressor.bias)[:, 0]

    def discriminate(self, X) -> np.ndarray:
        """Probability of the target domain for each row of ``X``."""
        f = self.features(_check_width(self, X))
        return sigmoid(f @ self.discriminator.weights.T + self.discriminator.bias)[:, 0]


def _check_width(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.input_dim:
        raise SchemaError(f"expected {model.input_dim} input features, got {X.shape[1]}")
    return X


def init_model(input_dim: int, hidden: Sequence[int] = (60,), seed=0) -> DannrModel:
    """Seeded DANN-R model; ``hidden`` lists the sigmoid feature-layer widths."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers, prev = [], input_dim
    for i, width in enumerate(hidden):
        layers.append(init_dense(prev, width, "sigmoid", f"f{i}", rng))
        prev = width
    regressor = init_dense(prev, 1, "identity", "r", rng)
    discriminator = init_dense(prev, 1, "sigmoid", "d", rng)
    return DannrModel(layers, regressor, discriminator)


def predict(model: DannrModel, x):
    """Scalar prediction for a single vector, or an array for a batch."""
    x = np.asarray(x, dtype=np.float64)
    out = model.predict(x)
    return float(out[0]) if x.ndim == 1 else out


def discriminate(model: DannrModel, x):
    x = np.asarray(x, dtype=np.float64)
    out = model.discriminate(x)
    return float(out[0]) if x.ndim == 1 else out


def regression_loss(y_hat, y):
    """Per-sample squared residual."""
    r = np.asarray(y_hat, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return r * r


def domain_loss(p, d):
    """Binary cross-entropy of discriminator output ``p`` against label ``d``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise FloatingPointError("domain probability must lie strictly inside (0, 1)")
    d = np.asarray(d, dtype=np.float64)
    return d * -np.log(p) + (1.0 - d) * -np.log1p(-p)


# --- composite objective ---------------------------------------------------

def _arrays(ds):
    X = getattr(ds, "X", None)
    return (np.asarray(ds.X, dtype=np.float64), ds) if X is not None else (np.asarray(ds, dtype=np.float64), None)


def record_losses(tape: Tape, model: DannrModel, Xs, ys, Xt, reverse: Optional[float] = None):
    """Record the regression and domain losses on ``tape``.

    Returns ``(L_r, L_d)`` nodes: the mean source squared error and the domain
    cross-entropy averaged over ``n_S + n_T`` rows. With ``reverse`` set, a
    gradient-reversal node with that coefficient sits between the features
    and the discriminator.
    """
    ns, nt = Xs.shape[0], Xt.shape[0]
    if ns == 0 or nt == 0:
        raise ValueError("source and target batches must be non-empty")
    hs, ht = tape.input(Xs), tape.input(Xt)
    for layer in model.feature_layers:
        hs = tape.dense(layer, hs)
    for layer in model.feature_layers:
        ht = tape.dense(layer, ht)
    lr = tape.squared_error(tape.dense(model.regressor, hs), np.reshape(ys, (-1, 1)), ns)
    if reverse is not None:
        hs, ht = tape.grad_reverse(hs, reverse), tape.grad_reverse(ht, reverse)
    ps = tape.dense(model.discriminator, hs)
    pt = tape.dense(model.discriminator, ht)
    ld = tape.combine([(tape.cross_entropy(ps, SOURCE, ns + nt), 1.0),
                       (tape.cross_entropy(pt, TARGET, ns + nt), 1.0)])
    return lr, ld


def _labelled(source):
    Xs, ds = _arrays(source)
    ys = getattr(ds, "y", None) if ds is not None else None
    if ys is None:
        raise ValueError("source dataset has no target values")
    return Xs, np.asarray(ys, dtype=np.float64)


def objective(model: DannrModel, source, target, lam: float) -> float:
    """Saddle-point cost: mean source regression loss minus lambda times the
    mean domain loss over the union of both domains."""
    Xs, ys = _labelled(source)
    Xt, _ = _arrays(target)
    lr, ld = record_losses(Tape(), model, Xs, ys, Xt)
    return float(lr.value) - lam * float(ld.value)


def objective_gradients(model: DannrModel, source, target, lam: float) -> Dict[str, np.ndarray]:
    """Exact gradient of :func:`objective` with respect to every parameter."""
    Xs, ys = _labelled(source)
    Xt, _ = _arrays(target)
    tape = Tape()
    lr, ld = record_losses(tape, model, Xs, ys, Xt)
    return tape.backward(tape.combine([(lr, 1.0), (ld, -lam)]))


def loss_gradients(model: DannrModel, source, target):
    """Separate gradients ``(dL_r, dL_d)`` of the two mean losses.

    Parameters a loss does not touch are reported as zero arrays.
    """
    Xs, ys = _labelled(source)
    Xt, _ = _arrays(target)
    out = []
    for pick in (0, 1):
        tape = Tape()
        nodes = record_losses(tape, model, Xs, ys, Xt)
        grads = tape.backward(nodes[pick])
        out.append({k: grads.get(k, np.zeros_like(v)) for k, v in model.parameters().items()})
    return tuple(out)


# --- checkpoints -----------------------------------------------------------

def _layer_to_dict(layer: DenseLayer) -> dict:
    return {
        "name": layer.name,
        "activation": layer.activation,
        "shape": list(layer.weights.shape),
        "weights": layer.weights.ravel().tolist(),
        "bias": layer.bias.tolist(),
    }


def _layer_from_dict(d: dict) -> DenseLayer:
    w = np.array(d["weights"], dtype=np.float64).reshape(d["shape"])
    return DenseLayer(w, np.array(d["bias"], dtype=np.float64), d["activation"], d["name"])


def model_to_dict(model: DannrModel) -> dict:
    """JSON-ready dict. Python floats serialize with shortest round-trip repr,
    so the encoding is value-exact for float64."""
    return {
        "format": CHECKPOINT_FORMAT,
        "architecture": {
            "input_dim": model.input_dim,
            "hidden": list(model.hidden),
            "feature_activation": "sigmoid",
            "regressor_activation": "identity",
            "discriminator_activation": "sigmoid",
        },
        "feature_layers": [_layer_to_dict(l) for l in model.feature_layers],
        "regressor": _layer_to_dict(model.regressor),
        "discriminator": _layer_to_dict(model.discriminator),
        "meta": model.meta,
    }


def model_from_dict(d: dict) -> DannrModel:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"not a DANN-R checkpoint (format={d.get('format')!r})")
    return DannrModel(
        [_layer_from_dict(l) for l in d["feature_layers"]],
        _layer_from_dict(d["regressor"]),
        _layer_from_dict(d["discriminator"]),
        d.get("meta", {}),
    )


def save_checkpoint(model: DannrModel, path) -> None:
    """Write ``model`` as JSON. Normalization stats and the training config,
    when known, travel in ``model.meta``."""
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, allow_nan=False), encoding="utf-8")


def load_checkpoint(path) -> DannrModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
