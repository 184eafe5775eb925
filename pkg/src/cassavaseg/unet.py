"""UNet encoder-decoder assembled from :mod:`cassavaseg.nn`.

Every encoder level is a double convolution (conv3x3 -> BN -> ReLU, twice)
followed by 2x2 max pooling, which halves the resolution while the next
level doubles the channels. The decoder mirrors it: a 2x2 transposed
convolution halves the channels, the matching encoder output is
concatenated, and another double convolution follows. A 1x1 convolution
maps to class scores and a channel softmax yields probabilities.
Padding keeps 3x3 convolutions size-preserving, so skips need no cropping.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError
from .imgmask import LabelMask, RgbImage, resize_image, resize_mask
from .nn import checkpoint
from .nn.tensor import Tensor

INPUT_SCALE = 1.0 / 255.0


@dataclass(frozen=True)
class UnetConfig:
    input_side: int = 256
    in_channels: int = 3
    num_classes: int = 3
    depth: int = 4
    base_channels: int = 64

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.in_channels < 1 or self.num_classes < 2:
            raise ConfigError("need in_channels >= 1 and num_classes >= 2")
        if self.input_side < 1 or self.input_side % (2 ** self.depth):
            raise ConfigError(f"input_side {self.input_side} is not divisible by 2**{self.depth}")

    def channels(self, level: int) -> int:
        """Feature channels at encoder level ``level`` (``depth`` = bottleneck)."""
        return self.base_channels * 2 ** level

    @classmethod
    def from_dict(cls, doc: dict) -> "UnetConfig":
        return cls(**{k: doc[k] for k in cls.__dataclass_fields__ if k in doc})


@dataclass
class UnetModel:
    config: UnetConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    input_scale: float = INPUT_SCALE

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.params.items()}
        state.update(self.buffers)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.params) | set(self.buffers)
        if set(state) != expected:
            missing, extra = expected - set(state), set(state) - expected
            raise ConfigError(f"checkpoint mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, t in self.params.items():
            if state[name].shape != t.shape:
                raise ConfigError(f"{name}: checkpoint shape {state[name].shape} != {t.shape}")
            t.data = np.array(state[name], dtype=np.float32)
        for name in self.buffers:
            self.buffers[name] = np.array(state[name], dtype=np.float32)

    def copy(self) -> "UnetModel":
        clone = build_empty(self.config)
        clone.input_scale = self.input_scale
        clone.load_state_dict({k: v.copy() for k, v in self.state_dict().items()})
        return clone


class _Builder:
    def __init__(self, model: UnetModel, seed: int):
        self.model = model
        self.seeds = np.random.SeedSequence(seed)
        self.counter = 0

    def _seed(self):
        self.counter += 1
        return np.random.SeedSequence([int(self.seeds.entropy), self.counter])

    def conv(self, name, cin, cout, k):
        fan_in, fan_out = cin * k * k, cout * k * k
        self.model.params[f"{name}.weight"] = nn.xavier_init((cout, cin, k, k), fan_in, fan_out, self._seed(),
                                                             name=f"{name}.weight")
        self.model.params[f"{name}.bias"] = Tensor(np.zeros(cout), requires_grad=True, name=f"{name}.bias")

    def upconv(self, name, cin, cout):
        self.model.params[f"{name}.weight"] = nn.xavier_init((cin, cout, 2, 2), cin * 4, cout * 4, self._seed(),
                                                             name=f"{name}.weight")
        self.model.params[f"{name}.bias"] = Tensor(np.zeros(cout), requires_grad=True, name=f"{name}.bias")

    def bn(self, name, ch):
        self.model.params[f"{name}.gamma"] = Tensor(np.ones(ch), requires_grad=True, name=f"{name}.gamma")
        self.model.params[f"{name}.beta"] = Tensor(np.zeros(ch), requires_grad=True, name=f"{name}.beta")
        self.model.buffers[f"{name}.running_mean"] = np.zeros(ch, dtype=np.float32)
        self.model.buffers[f"{name}.running_var"] = np.ones(ch, dtype=np.float32)

    def double_conv(self, name, cin, cout):
        self.conv(f"{name}.conv1", cin, cout, 3)
        self.bn(f"{name}.bn1", cout)
        self.conv(f"{name}.conv2", cout, cout, 3)
        self.bn(f"{name}.bn2", cout)


def block_names(config: UnetConfig) -> list[str]:
    names = [f"enc{i}" for i in range(config.depth)] + ["bottleneck"]
    names += [f"dec{i}" for i in reversed(range(config.depth))] + ["head"]
    return names


def build(config: UnetConfig, seed: int = 0) -> UnetModel:
    """Fresh model with Xavier-uniform weights, zero biases and unit BN scale."""
    model = UnetModel(config)
    b = _Builder(model, seed)
    cin = config.in_channels
    for i in range(config.depth):
        b.double_conv(f"enc{i}", cin, config.channels(i))
        cin = config.channels(i)
    b.double_conv("bottleneck", cin, config.channels(config.depth))
    for i in reversed(range(config.depth)):
        b.upconv(f"dec{i}.up", config.channels(i + 1), config.channels(i))
        b.double_conv(f"dec{i}", 2 * config.channels(i), config.channels(i))
    b.conv("head", config.channels(0), config.num_classes, 1)
    return model


def build_empty(config: UnetConfig) -> UnetModel:
    return build(config, seed=0)


def _double_conv(model: UnetModel, name: str, x: Tensor, training: bool) -> Tensor:
    p, buf = model.params, model.buffers
    for j in (1, 2):
        x = nn.conv2d(x, p[f"{name}.conv{j}.weight"], p[f"{name}.conv{j}.bias"], padding=1)
        x = nn.batchnorm2d(x, p[f"{name}.bn{j}.gamma"], p[f"{name}.bn{j}.beta"],
                           buf[f"{name}.bn{j}.running_mean"], buf[f"{name}.bn{j}.running_var"], training)
        x = nn.relu(x)
    return x


def forward(model: UnetModel, batch: Tensor, mode: str = "eval", trace: dict | None = None) -> Tensor:
    """Class probabilities of shape (N, num_classes, S, S).

    ``mode`` is "train" (batch statistics, running stats updated) or "eval".
    If ``trace`` is given it receives the output shape of every block.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = model.config
    side = cfg.input_side
    if batch.data.ndim != 4 or batch.shape[1] != cfg.in_channels or batch.shape[2:] != (side, side):
        raise ShapeError(f"expected input (N, {cfg.in_channels}, {side}, {side}), got {batch.shape}")
    training = mode == "train"
    p = model.params

    skips = []
    x = batch
    for i in range(cfg.depth):
        x = _double_conv(model, f"enc{i}", x, training)
        skips.append(x)
        if trace is not None:
            trace[f"enc{i}"] = x.shape
        x = nn.maxpool2d(x, 2)
    x = _double_conv(model, "bottleneck", x, training)
    if trace is not None:
        trace["bottleneck"] = x.shape
    for i in reversed(range(cfg.depth)):
        x = nn.upconv2d(x, p[f"dec{i}.up.weight"], p[f"dec{i}.up.bias"])
        if trace is not None:
            trace[f"dec{i}.up"] = x.shape
        x = nn.concat_channels(x, skips[i])
        x = _double_conv(model, f"dec{i}", x, training)
        if trace is not None:
            trace[f"dec{i}"] = x.shape
    x = nn.conv2d(x, p["head.weight"], p["head.bias"], padding=0)
    out = nn.softmax_channels(x)
    if trace is not None:
        trace["head"] = out.shape
    return out


def images_to_batch(images, scale: float = INPUT_SCALE) -> np.ndarray:
    arr = np.stack([im.pixels for im in images]).astype(np.float32) * np.float32(scale)
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def predict_masks(model: UnetModel, images, batch_size: int = 8, original_size: bool = False) -> list[LabelMask]:
    """Argmax segmentation of each image; ties resolve to the lowest class index."""
    side = model.config.input_side
    out = []
    images = list(images)
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        resized = [resize_image(im, side, side) for im in chunk]
        with nn.no_grad():
            probs = forward(model, Tensor(images_to_batch(resized, model.input_scale)), mode="eval").data
        labels = probs.argmax(axis=1).astype(np.uint8)
        for im, lab in zip(chunk, labels):
            mask = LabelMask(lab)
            if original_size:
                mask = resize_mask(mask, im.width, im.height)
            out.append(mask)
    return out


def predict_mask(model: UnetModel, img: RgbImage, original_size: bool = False) -> LabelMask:
    return predict_masks(model, [img], batch_size=1, original_size=original_size)[0]


def sidecar_doc(model: UnetModel) -> dict:
    return {"unet": asdict(model.config), "input_scale": model.input_scale}


def save_model(model: UnetModel, ckpt_path: str | Path, write_sidecar: bool = True) -> None:
    """Write the tensor container and, next to it, ``config.json``."""
    ckpt_path = Path(ckpt_path)
    checkpoint.save(model.state_dict(), ckpt_path)
    if write_sidecar:
        sidecar = ckpt_path.parent / "config.json"
        sidecar.write_text(json.dumps(sidecar_doc(model), indent=2, sort_keys=True) + "\n")


def load_model(ckpt_path: str | Path, config_path: str | Path | None = None) -> UnetModel:
    ckpt_path = Path(ckpt_path)
    config_path = Path(config_path) if config_path else ckpt_path.parent / "config.json"
    doc = json.loads(config_path.read_text())
    model = build_empty(UnetConfig.from_dict(doc["unet"]))
    model.input_scale = float(doc.get("input_scale", INPUT_SCALE))
    model.load_state_dict(checkpoint.load(ckpt_path))
    return model
