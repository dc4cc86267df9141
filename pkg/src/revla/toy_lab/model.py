"""Desk-scale two-headed encoder network with analytic gradients.

The encoder is two affine layers with tanh activations (16 -> 32 -> 8); its
parameters live under ``vision.dino.`` so checkpoint selectors apply to it
unchanged. Head "a" is a scalar regression readout, head "b" emits seven
values, mirroring a depth head and an action head sharing one backbone.
Everything is f64 numpy; forward and grad are deterministic.
"""

from __future__ import annotations

import numpy as np

from ..tensor_store import Checkpoint, Selector, select

D_IN = 16
D_HIDDEN = 32
D_FEATURE = 8

HEAD_A = "a"
HEAD_B = "b"
HEAD_DIMS = {HEAD_A: 1, HEAD_B: 7}

ENCODER_PATTERNS = ("vision.*",)

PARAM_SHAPES: dict[str, tuple[int, ...]] = {
    "vision.dino.layer1.weight": (D_HIDDEN, D_IN),
    "vision.dino.layer1.bias": (D_HIDDEN,),
    "vision.dino.layer2.weight": (D_FEATURE, D_HIDDEN),
    "vision.dino.layer2.bias": (D_FEATURE,),
    "head_a.weight": (HEAD_DIMS[HEAD_A], D_FEATURE),
    "head_a.bias": (HEAD_DIMS[HEAD_A],),
    "head_b.weight": (HEAD_DIMS[HEAD_B], D_FEATURE),
    "head_b.bias": (HEAD_DIMS[HEAD_B],),
}

ENCODER_NAMES = tuple(n for n in sorted(PARAM_SHAPES) if n.startswith("vision."))


class ToyModel:
    """Parameter bundle with forward passes; training mutates ``params``."""

    def __init__(self, params: dict[str, np.ndarray]) -> None:
        if set(params) != set(PARAM_SHAPES):
            missing = sorted(set(PARAM_SHAPES) - set(params))
            extra = sorted(set(params) - set(PARAM_SHAPES))
            raise ValueError(f"bad parameter set: missing {missing}, extra {extra}")
        self.params: dict[str, np.ndarray] = {}
        for name, shape in PARAM_SHAPES.items():
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: parameters must be finite")
            self.params[name] = arr.copy()

    @classmethod
    def initialize(cls, seed: int) -> "ToyModel":
        """Random init: weights ~ N(0, 1/fan_in), biases zero."""
        rng = np.random.default_rng([seed, 0])
        params = {}
        for name, shape in PARAM_SHAPES.items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.standard_normal(shape) / np.sqrt(shape[1])
        return cls(params)

    def copy(self) -> "ToyModel":
        return ToyModel(self.params)

    def features(self, x: np.ndarray) -> np.ndarray:
        """Encoder output tanh(W2 tanh(W1 x + b1) + b2) for a (batch, 16) input."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != D_IN:
            raise ValueError(f"input must have {D_IN} columns, got shape {x.shape}")
        p = self.params
        h1 = np.tanh(x @ p["vision.dino.layer1.weight"].T + p["vision.dino.layer1.bias"])
        return np.tanh(h1 @ p["vision.dino.layer2.weight"].T + p["vision.dino.layer2.bias"])

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(self.params)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "ToyModel":
        return cls({name: ckpt[name] for name in ckpt.names()})

    def load_tensors(self, ckpt: Checkpoint, names: list[str]) -> None:
        """Overwrite the given parameters with the checkpoint's values."""
        for name in names:
            arr = np.asarray(ckpt[name], dtype=np.float64)
            if arr.shape != PARAM_SHAPES[name]:
                raise ValueError(f"{name}: expected shape {PARAM_SHAPES[name]}, got {arr.shape}")
            self.params[name] = arr.copy()


def _head_params(model: ToyModel, head: str) -> tuple[np.ndarray, np.ndarray]:
    if head not in HEAD_DIMS:
        raise ValueError(f"unknown head {head!r}; expected one of {sorted(HEAD_DIMS)}")
    return model.params[f"head_{head}.weight"], model.params[f"head_{head}.bias"]


def forward(model: ToyModel, x: np.ndarray, head: str) -> np.ndarray:
    """Predictions of the chosen head on encoder features."""
    w, b = _head_params(model, head)
    return model.features(x) @ w.T + b


def grad(
    model: ToyModel,
    x: np.ndarray,
    targets: np.ndarray,
    head: str,
    freeze: Selector | None = None,
) -> dict[str, np.ndarray]:
    """Mean-squared-error gradients for every parameter.

    The loss is the mean of squared residuals over all batch elements and
    output dimensions. Parameters of the unused head get zero gradient, as
    does anything matched by ``freeze``.
    """
    w, b = _head_params(model, head)
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("gradient requires a non-empty batch")
    p = model.params
    h1 = np.tanh(x @ p["vision.dino.layer1.weight"].T + p["vision.dino.layer1.bias"])
    feats = np.tanh(h1 @ p["vision.dino.layer2.weight"].T + p["vision.dino.layer2.bias"])
    preds = feats @ w.T + b
    if preds.shape != targets.shape:
        raise ValueError(f"targets shape {targets.shape} != predictions shape {preds.shape}")

    grads = {name: np.zeros(shape) for name, shape in PARAM_SHAPES.items()}
    dpred = 2.0 * (preds - targets) / targets.size
    grads[f"head_{head}.weight"] = dpred.T @ feats
    grads[f"head_{head}.bias"] = dpred.sum(axis=0)
    dfeats = dpred @ w
    dz2 = dfeats * (1.0 - feats * feats)
    grads["vision.dino.layer2.weight"] = dz2.T @ h1
    grads["vision.dino.layer2.bias"] = dz2.sum(axis=0)
    dh1 = dz2 @ p["vision.dino.layer2.weight"]
    dz1 = dh1 * (1.0 - h1 * h1)
    grads["vision.dino.layer1.weight"] = dz1.T @ x
    grads["vision.dino.layer1.bias"] = dz1.sum(axis=0)

    if freeze is not None:
        for name in select(grads, freeze):
            grads[name] = np.zeros(PARAM_SHAPES[name])
    return grads
