"""Feature generator, twin regressor heads and the conditional discriminator."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
from torch import nn

from .exceptions import ConfigError, ContractError
from .losses import clamp_probability

GROUP_NAMES = ("F", "G_hat", "R_hat", "G_tilde", "R_tilde", "D")
REGRESSOR_GROUPS = ("G_hat", "R_hat", "G_tilde", "R_tilde")
HEADS = ("hat", "tilde")


@dataclass
class ModelConfig:
    input_kind: str = "sequence"
    window_length: int = 10
    signal_dim: int = 63
    feature_dim: int = 512
    condition_dim: int = 64
    floor_extents: tuple = (12.0, 8.0)
    discriminator_hidden: int = 64
    # image variant only: (H, W, C)
    image_shape: tuple = (32, 32, 3)
    conv_channels: tuple = (16, 32, 64)
    # False gives a feature-only discriminator (used by the DANN baseline)
    conditional_discriminator: bool = True

    def __post_init__(self):
        self.floor_extents = tuple(float(v) for v in self.floor_extents)
        self.image_shape = tuple(int(v) for v in self.image_shape)
        self.conv_channels = tuple(int(v) for v in self.conv_channels)
        self.validate()

    @property
    def label_dim(self):
        return len(self.floor_extents)

    def validate(self):
        if self.input_kind not in ("sequence", "image"):
            raise ConfigError(f"input_kind must be 'sequence' or 'image', got {self.input_kind!r}")
        for name in ("window_length", "signal_dim", "feature_dim", "condition_dim", "discriminator_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.input_kind == "sequence" and self.feature_dim % 2:
            raise ConfigError("feature_dim must be even for the bidirectional encoder")
        if not self.floor_extents or any(v <= 0 for v in self.floor_extents):
            raise ConfigError("floor_extents must be positive")
        if len(self.image_shape) != 3 or any(v < 1 for v in self.image_shape):
            raise ConfigError("image_shape must be three positive ints (H, W, C)")
        if len(self.conv_channels) != 3 or any(v < 1 for v in self.conv_channels):
            raise ConfigError("conv_channels must be three positive ints")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @property
    def input_shape(self):
        if self.input_kind == "sequence":
            return (self.window_length, self.signal_dim)
        return self.image_shape


class RegressorOutput(NamedTuple):
    g: torch.Tensor  # pre-activation condition vector [B, k]
    l: torch.Tensor  # raw coordinate prediction [B, label_dim]
    h: torch.Tensor  # [sigmoid(g), normalized l] in [0, 1]


class SequenceEncoder(nn.Module):
    """Bidirectional LSTM; the feature is [last forward state, last backward state]."""

    def __init__(self, signal_dim, feature_dim):
        super().__init__()
        self.lstm = nn.LSTM(signal_dim, feature_dim // 2, batch_first=True, bidirectional=True)

    def forward(self, x):
        _, (h_n, _) = self.lstm(x)
        return torch.cat([h_n[0], h_n[1]], dim=1)


class ImageEncoder(nn.Module):
    """Three conv/ReLU/max-pool blocks and a linear projection. Input is NHWC."""

    def __init__(self, image_shape, channels, feature_dim):
        super().__init__()
        h, w, c = image_shape
        layers = []
        for out in channels:
            layers += [nn.Conv2d(c, out, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
            c = out
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ConfigError(f"image_shape {image_shape} too small for three pooling stages")
        self.conv = nn.Sequential(*layers)
        self.proj = nn.Linear(c * h * w, feature_dim)

    def forward(self, x):
        z = self.conv(x.permute(0, 3, 1, 2))
        return torch.relu(self.proj(z.flatten(1)))


class ModelBundle(nn.Module):
    """All trainable parts, addressable as six disjoint parameter groups."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        k, fd = config.condition_dim, config.feature_dim
        if config.input_kind == "sequence":
            self.F = SequenceEncoder(config.signal_dim, fd)
        else:
            self.F = ImageEncoder(config.image_shape, config.conv_channels, fd)
        self.G_hat = nn.Linear(fd, k)
        self.R_hat = nn.Linear(k, config.label_dim)
        self.G_tilde = nn.Linear(fd, k)
        self.R_tilde = nn.Linear(k, config.label_dim)
        d_in = fd + (config.label_dim if config.conditional_discriminator else 0)
        self.D = nn.Sequential(
            nn.Linear(d_in, config.discriminator_hidden),
            nn.ReLU(),
            nn.Linear(config.discriminator_hidden, 1),
        )
        self.register_buffer("extents", torch.tensor(config.floor_extents, dtype=torch.float32))

    def group(self, name) -> nn.Module:
        if name not in GROUP_NAMES:
            raise ContractError(f"unknown parameter group {name!r}")
        return getattr(self, name)

    def groups(self):
        return {name: list(self.group(name).parameters()) for name in GROUP_NAMES}

    def checksum(self, name):
        digest = hashlib.sha256()
        for pname, p in self.group(name).named_parameters():
            digest.update(pname.encode())
            digest.update(p.detach().cpu().numpy().tobytes())
        return digest.hexdigest()

    def checksums(self):
        return {name: self.checksum(name) for name in GROUP_NAMES}

    def normalize_coords(self, l):
        return (l / self.extents.to(l.dtype)).clamp(0.0, 1.0)

    def to_floor(self, z):
        """Map the coordinate layer's output from floor-relative units to meters."""
        ext = self.extents.to(z.dtype)
        return ext * (0.5 + z)


def build_models(config: ModelConfig, seed: int) -> ModelBundle:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        bundle = ModelBundle(config)
    bundle.eval()
    return bundle


def extract_features(bundle, x):
    cfg = bundle.config
    expected = cfg.input_shape
    if x.dim() != len(expected) + 1 or tuple(x.shape[1:]) != tuple(expected):
        raise ContractError(f"input shape {tuple(x.shape)} does not match [B, {', '.join(map(str, expected))}]")
    return bundle.F(x)


def forward_regressor(bundle, head, features) -> RegressorOutput:
    if head not in HEADS:
        raise ContractError(f"head must be one of {HEADS}, got {head!r}")
    if features.dim() != 2 or features.shape[1] != bundle.config.feature_dim:
        raise ContractError(f"features must be [B, {bundle.config.feature_dim}], got {tuple(features.shape)}")
    G = bundle.G_hat if head == "hat" else bundle.G_tilde
    R = bundle.R_hat if head == "hat" else bundle.R_tilde
    g = G(features)
    cond = torch.sigmoid(g)
    l = bundle.to_floor(R(cond))
    h = torch.cat([cond, bundle.normalize_coords(l)], dim=1)
    return RegressorOutput(g, l, h)


def forward_discriminator(bundle, features, coordinates=None):
    """Domain probability for each (feature, normalized coordinate) pair.

    ``coordinates`` must already be normalized to [0, 1]; it is ignored (and
    may be None) for a feature-only discriminator.
    """
    cfg = bundle.config
    if features.dim() != 2 or features.shape[1] != cfg.feature_dim:
        raise ContractError(f"features must be [B, {cfg.feature_dim}], got {tuple(features.shape)}")
    if cfg.conditional_discriminator:
        if coordinates is None or coordinates.shape != (features.shape[0], cfg.label_dim):
            got = None if coordinates is None else tuple(coordinates.shape)
            raise ContractError(f"coordinates must be [{features.shape[0]}, {cfg.label_dim}], got {got}")
        z = torch.cat([features, coordinates], dim=1)
    else:
        z = features
    return clamp_probability(torch.sigmoid(bundle.D(z).squeeze(1)))
