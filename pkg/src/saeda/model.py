"""Symmetric convolutional auto-encoders, the identity bridge and the heads.

Encoder:  conv 16@2x2 -> relu -> maxpool 2x2 -> conv 32@3x3 -> relu -> maxpool 2x2
          -> dense(b) -> relu
Decoder:  dense -> relu -> reshape -> upsample 2x2 -> conv 32@3x3 -> relu
          -> upsample 2x2 -> conv 16@2x2 -> relu -> conv c@3x3 -> sigmoid

Arrays crossing the public API are NHWC float32 NumPy; modules work in NCHW.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import storage

POOL_LEVELS = 2


class ModelSpecError(ValueError):
    pass


class ShapeError(ModelSpecError):
    pass


class ParameterCountError(storage.ContainerError):
    pass


class KindMismatchError(storage.ContainerError):
    pass


class HeadKind(str, enum.Enum):
    SOFTMAX_CLASSIFIER = "softmax_classifier"
    LINEAR_REGRESSOR = "linear_regressor"


@dataclass
class AutoencoderSpec:
    input_shape: tuple
    bottleneck_size: int = 100
    conv1_filters: int = 16
    conv1_kernel: int = 2
    conv2_filters: int = 32
    conv2_kernel: int = 3

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ModelSpecError("input_shape must be (h, w, c)")
        if self.bottleneck_size < 1:
            raise ModelSpecError("bottleneck_size must be positive")
        h, w, _ = self.input_shape
        step = 2**POOL_LEVELS
        if h < step or w < step:
            raise ShapeError(f"input {h}x{w} is too small for {POOL_LEVELS} 2x2 pooling stages")
        if h % step or w % step:
            raise ShapeError(f"input {h}x{w} must be divisible by {step} for the mirrored decoder")

    @property
    def latent_grid(self):
        h, w, _ = self.input_shape
        return self.conv2_filters, h // 2**POOL_LEVELS, w // 2**POOL_LEVELS


@dataclass
class HeadSpec:
    kind: HeadKind = HeadKind.SOFTMAX_CLASSIFIER
    output_size: int = 4
    hidden_layers: list = field(default_factory=lambda: [64])

    def __post_init__(self):
        self.kind = HeadKind(self.kind)
        self.hidden_layers = [int(h) for h in self.hidden_layers]
        if self.kind is HeadKind.LINEAR_REGRESSOR and self.output_size != 1:
            raise ModelSpecError("a regressor head has output_size 1")
        if self.kind is HeadKind.SOFTMAX_CLASSIFIER and self.output_size < 2:
            raise ModelSpecError("a classifier head needs at least 2 outputs")


def _glorot(module: nn.Module, generator: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight, generator=generator)
            nn.init.zeros_(m.bias)


class Autoencoder(nn.Module):
    def __init__(self, spec: AutoencoderSpec):
        super().__init__()
        self.spec = spec
        c = spec.input_shape[2]
        f1, f2 = spec.conv1_filters, spec.conv2_filters
        k1, k2 = spec.conv1_kernel, spec.conv2_kernel
        grid = spec.latent_grid
        flat = int(np.prod(grid))
        self.encoder = nn.Sequential(
            nn.Conv2d(c, f1, k1, padding="same"), nn.ReLU(), nn.MaxPool2d(2),
            nn.Conv2d(f1, f2, k2, padding="same"), nn.ReLU(), nn.MaxPool2d(2),
            nn.Flatten(), nn.Linear(flat, spec.bottleneck_size), nn.ReLU(),
        )
        self.decoder = nn.Sequential(
            nn.Linear(spec.bottleneck_size, flat), nn.ReLU(), nn.Unflatten(1, grid),
            nn.Upsample(scale_factor=2), nn.Conv2d(f2, f2, k2, padding="same"), nn.ReLU(),
            nn.Upsample(scale_factor=2), nn.Conv2d(f2, f1, k1, padding="same"), nn.ReLU(),
            nn.Conv2d(f1, c, 3, padding="same"), nn.Sigmoid(),
        )

    def forward(self, x):
        z = self.encoder(x)
        return z, self.decoder(z)


class Head(nn.Module):
    def __init__(self, in_features: int, spec: HeadSpec):
        super().__init__()
        self.spec = spec
        layers, width = [], in_features
        for h in spec.hidden_layers:
            layers += [nn.Linear(width, h), nn.ReLU()]
            width = h
        layers.append(nn.Linear(width, spec.output_size))
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        out = self.net(z)
        if self.spec.kind is HeadKind.SOFTMAX_CLASSIFIER:
            return torch.softmax(out, dim=1)
        return out.view(-1)


class Bridge(nn.Module):
    """Parameterless identity joining both bottlenecks into one graph."""

    def forward(self, zs, zt):
        return zs, zt


class AdaptationModel(nn.Module):
    def __init__(self, source_spec, target_spec, head_spec, seed=0):
        super().__init__()
        if source_spec.bottleneck_size != target_spec.bottleneck_size:
            raise ModelSpecError(
                f"bottleneck sizes differ ({source_spec.bottleneck_size} vs {target_spec.bottleneck_size}); "
                "the shared head needs equal widths"
            )
        self.seed = int(seed)
        self.source_ae = Autoencoder(source_spec)
        self.target_ae = Autoencoder(target_spec)
        self.head = Head(source_spec.bottleneck_size, head_spec)
        self.bridge: Bridge | None = Bridge()
        self.stages_done: set[int] = set()
        self.stage3_skipped = False
        # Regression heads fit standardized targets; predictions are mapped back.
        self.target_mean = 0.0
        self.target_scale = 1.0
        _glorot(self.source_ae, _generator(seed, 0))
        _glorot(self.target_ae, _generator(seed, 1))
        _glorot(self.head, _generator(seed, 2))

    @property
    def kind(self) -> HeadKind:
        return self.head.spec.kind

    def reset_head(self, seed):
        _glorot(self.head, _generator(seed, 2))

    def forward_pair(self, xs, xt):
        """Encode both domains, join them through the bridge, decode both."""
        zs = self.source_ae.encoder(xs)
        zt = self.target_ae.encoder(xt)
        if self.bridge is not None:
            zs, zt = self.bridge(zs, zt)
        return zs, self.source_ae.decoder(zs), zt, self.target_ae.decoder(zt)


def _generator(seed, stream):
    g = torch.Generator()
    g.manual_seed((int(seed) * 1_000_003 + stream) % (2**63))
    return g


def build_autoencoder(spec: AutoencoderSpec, seed=0) -> Autoencoder:
    ae = Autoencoder(spec)
    _glorot(ae, _generator(seed, 0))
    return ae


def build_adaptation_model(source_spec, target_spec, head_spec, seed=0) -> AdaptationModel:
    return AdaptationModel(source_spec, target_spec, head_spec, seed)


# -- array helpers -----------------------------------------------------------------------


def to_nchw(batch) -> torch.Tensor:
    if isinstance(batch, torch.Tensor):
        return batch
    a = np.asarray(batch, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))


def _check_input(ae: Autoencoder, batch):
    shape = tuple(np.shape(batch)[1:])
    if np.ndim(batch) != 4 or shape != ae.spec.input_shape:
        raise ShapeError(f"batch of shape {np.shape(batch)} does not match input {ae.spec.input_shape}")


@torch.no_grad()
def encode(ae: Autoencoder, batch, chunk=512) -> np.ndarray:
    """(N, h, w, c) -> (N, b) bottleneck features."""
    _check_input(ae, batch)
    batch = np.asarray(batch, dtype=np.float32)
    out = [ae.encoder(to_nchw(batch[i:i + chunk])).numpy() for i in range(0, len(batch), chunk)]
    return np.concatenate(out) if out else np.zeros((0, ae.spec.bottleneck_size), np.float32)


@torch.no_grad()
def decode(ae: Autoencoder, z) -> np.ndarray:
    """(N, b) -> (N, h, w, c) reconstructions in (0, 1)."""
    z = np.asarray(z, dtype=np.float32)
    if z.ndim != 2 or z.shape[1] != ae.spec.bottleneck_size:
        raise ShapeError(f"bottleneck matrix must be (N, {ae.spec.bottleneck_size})")
    return ae.decoder(torch.from_numpy(z)).numpy().transpose(0, 2, 3, 1)


# -- persistence -----------------------------------------------------------------------


def save_model(model: AdaptationModel, path) -> None:
    state = model.state_dict()
    names = list(state)
    flat = np.concatenate([state[n].detach().numpy().astype(np.float32).ravel() for n in names])
    manifest = {
        "kind": "adaptation_model",
        "seed": model.seed,
        "source_spec": asdict(model.source_ae.spec),
        "target_spec": asdict(model.target_ae.spec),
        "head_spec": {**asdict(model.head.spec), "kind": model.kind.value},
        "stages_done": sorted(model.stages_done),
        "stage3_skipped": model.stage3_skipped,
        "target_mean": model.target_mean,
        "target_scale": model.target_scale,
        "parameters": [{"name": n, "shape": list(state[n].shape)} for n in names],
        "parameter_count": int(flat.size),
    }
    storage.write_container(path, manifest, {"parameters": flat})


def load_model(path, expected_kind: HeadKind | str | None = None) -> AdaptationModel:
    manifest = storage.read_manifest(path)
    head_spec = HeadSpec(**manifest["head_spec"])
    if expected_kind is not None and HeadKind(expected_kind) is not head_spec.kind:
        raise KindMismatchError(f"checkpoint holds a {head_spec.kind.value} head, {HeadKind(expected_kind).value} requested")
    model = AdaptationModel(
        AutoencoderSpec(**manifest["source_spec"]),
        AutoencoderSpec(**manifest["target_spec"]),
        head_spec,
        seed=manifest.get("seed", 0),
    )
    state = model.state_dict()
    expected = sum(int(np.prod(v.shape)) for v in state.values())
    if manifest.get("parameter_count") != expected or [p["name"] for p in manifest["parameters"]] != list(state):
        raise ParameterCountError(
            f"checkpoint declares {manifest.get('parameter_count')} parameters, model has {expected}"
        )
    try:
        flat = storage.read_block(path, manifest, "parameters")
    except storage.ShapeMismatchError as exc:
        raise ParameterCountError(str(exc)) from exc
    offset, new_state = 0, {}
    for entry in manifest["parameters"]:
        n = int(np.prod(entry["shape"]))
        new_state[entry["name"]] = torch.from_numpy(flat[offset:offset + n].reshape(entry["shape"]).copy())
        offset += n
    model.load_state_dict(new_state)
    model.stages_done = set(manifest.get("stages_done", []))
    model.stage3_skipped = bool(manifest.get("stage3_skipped", False))
    model.target_mean = float(manifest.get("target_mean", 0.0))
    model.target_scale = float(manifest.get("target_scale", 1.0))
    return model
