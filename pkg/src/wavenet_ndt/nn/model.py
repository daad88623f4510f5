"""Sequential 1-D CNN container, default architecture and checkpoints."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatVersionMismatch, InvalidParameter, ShapeMismatch
from .layers import (
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    ReLU,
    layer_from_spec,
)

CHECKPOINT_FORMAT = "wavenet-ndt/model"
CHECKPOINT_VERSION = 1

# (out_channels, kernel_size) per convolution block
DEFAULT_CONV_BLOCKS = ((16, 7), (32, 7), (32, 5), (16, 5))

# "rms": each profile is divided by its own root-mean-square before entering the
# network and the output is multiplied back. "fixed": divide by input_scale.
NORMALIZATIONS = ("rms", "fixed")


class CnnModel:
    """Ordered layer stack mapping (batch, length) profiles to (batch, length).

    With ``residual`` the stack learns a correction that is added to its input.
    """

    def __init__(
        self,
        layers: list[Layer],
        length: int = 100,
        input_scale: float = 1.0,
        normalization: str = "fixed",
        residual: bool = False,
    ):
        if normalization not in NORMALIZATIONS:
            raise InvalidParameter(f"normalization must be one of {NORMALIZATIONS}")
        if not input_scale > 0:
            raise InvalidParameter("input_scale must be positive")
        self.layers = list(layers)
        self.length = length
        self.input_scale = float(input_scale)
        self.normalization = normalization
        self.residual = bool(residual)
        self.training = False
        self.rng = np.random.default_rng(0)
        self._check_chain()

    def _check_chain(self):
        shape = (1, self.length)
        for layer in self.layers:
            shape = layer.out_shape(shape)
        if shape != (self.length,):
            raise ShapeMismatch(f"network maps to {shape}, expected ({self.length},)")

    @property
    def mode(self) -> str:
        return "train" if self.training else "infer"

    def train_mode(self):
        self.training = True
        return self

    def infer_mode(self):
        self.training = False
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.length:
            raise ShapeMismatch(f"expected (batch, {self.length}) input, got {x.shape}")
        out = x[:, None, :]
        for layer in self.layers:
            out = layer.forward(out, self.training, self.rng)
        return out + x if self.residual else out

    def scales(self, x: np.ndarray) -> np.ndarray:
        """Per-row divisors, shape (batch, 1), applied to inputs and targets alike."""
        x = np.asarray(x, dtype=float)
        if self.normalization == "fixed":
            return np.full((x.shape[0], 1), self.input_scale)
        rms = np.sqrt(np.mean(x * x, axis=1, keepdims=True))
        return np.where(rms > 0, rms, 1.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = grad_out
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g[:, 0, :] + grad_out if self.residual else g[:, 0, :]

    def named_params(self) -> dict:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def named_grads(self) -> dict:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def regularised_weights(self) -> dict:
        return {
            f"{i}.{k}": layer.params[k]
            for i, layer in enumerate(self.layers)
            for k in layer.weight_names
        }

    def bn_state(self) -> dict:
        return {str(i): layer.state() for i, layer in enumerate(self.layers) if layer.state()}

    def snapshot(self) -> dict:
        return {
            "params": {k: v.copy() for k, v in self.named_params().items()},
            "bn": {i: {k: v.copy() for k, v in s.items()} for i, s in self.bn_state().items()},
        }

    def restore(self, snap: dict) -> None:
        params = self.named_params()
        for k, v in snap["params"].items():
            params[k][...] = v
        for i, s in snap["bn"].items():
            layer = self.layers[int(i)]
            for k, v in s.items():
                layer.running[k] = v.copy()

    def arch(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]


def build_default_model(
    length: int = 100,
    dropout_rate: float = 0.3,
    seed: int = 0,
    input_scale: float = 1.0,
    conv_blocks=DEFAULT_CONV_BLOCKS,
    normalization: str = "rms",
    residual: bool = True,
) -> CnnModel:
    """Conv-BN-ReLU blocks, dropout, then a dense layer back to ``length``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    layers: list[Layer] = []
    channels = 1
    for out_ch, k in conv_blocks:
        layers += [Conv1D(channels, out_ch, k, rng), BatchNorm(out_ch), ReLU()]
        channels = out_ch
    layers += [Dropout(dropout_rate), Flatten(), Dense(channels * length, length, rng)]
    return CnnModel(layers, length, input_scale, normalization, residual)


def predict(model: CnnModel, profile: np.ndarray) -> np.ndarray:
    """Reconstruct one profile (or a batch of rows) in physical units."""
    x = np.asarray(profile, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != model.length:
        raise ShapeMismatch(f"expected profiles of length {model.length}, got {x.shape}")
    was_training = model.training
    model.infer_mode()
    try:
        s = model.scales(batch)
        out = model.forward(batch / s) * s
    finally:
        model.training = was_training
    return out[0] if single else out


def _tolist(a: np.ndarray):
    return a.tolist()


def save_checkpoint(model: CnnModel, path, train_config: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "length": model.length,
        "input_scale": model.input_scale,
        "normalization": model.normalization,
        "residual": model.residual,
        "arch": model.arch(),
        "params": {k: _tolist(v) for k, v in model.named_params().items()},
        "bn_state": {
            i: {k: _tolist(v) for k, v in s.items()} for i, s in model.bn_state().items()
        },
        "train_config": train_config or {},
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[CnnModel, dict]:
    """Return ``(model, train_config)``; the model starts in inference mode."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatVersionMismatch(f"{path}: not a JSON checkpoint ({exc})") from exc
    if (
        not isinstance(doc, dict)
        or doc.get("format") != CHECKPOINT_FORMAT
        or doc.get("version") != CHECKPOINT_VERSION
    ):
        raise FormatVersionMismatch(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} file")
    layers = [layer_from_spec(spec) for spec in doc["arch"]]
    model = CnnModel(
        layers,
        doc["length"],
        doc["input_scale"],
        doc.get("normalization", "fixed"),
        doc.get("residual", False),
    )
    params = model.named_params()
    if set(params) != set(doc["params"]):
        raise InvalidParameter(f"{path}: parameter names do not match the architecture")
    for k, v in doc["params"].items():
        arr = np.asarray(v, dtype=float)
        if arr.shape != params[k].shape:
            raise ShapeMismatch(f"{path}: parameter {k} has shape {arr.shape}")
        params[k][...] = arr
    for i, s in doc["bn_state"].items():
        layer = model.layers[int(i)]
        layer.running = {k: np.asarray(v, dtype=float) for k, v in s.items()}
    return model, doc.get("train_config", {})
