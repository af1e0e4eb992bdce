"""Siamese encoder / skip-connected decoder with a scene-light split latent.

The same encoder maps the input image I and the target image T to latent
codes.  The decoder receives I's scene channels, T's light channels and I's
skip features, so the only path from T to the output is its light code.

Three variants differ in how the light code is supervised:

``illum_predicter``
    a small MLP regresses light direction and color temperature from it;
``envmap_only``
    the whole latent is light, weighted-pooled into a 16x32 RGB environment map;
``envmap_scene``
    a scene/light split where the light part pools into a compact
    (hue, saturation, 512 brightness) environment map.
"""

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .envmap import COMPACT_SIZE, ENVMAP_HEIGHT, ENVMAP_PIXELS, ENVMAP_WIDTH
from .errors import ConfigError

VARIANTS = ("illum_predicter", "envmap_only", "envmap_scene")
DOWNSAMPLING_STAGES = 4

_DEFAULT_SPLITS = {
    # variant: (scene_channels, light_channels)
    "illum_predicter": (512, 8),
    "envmap_only": (0, 4 * ENVMAP_PIXELS),
    "envmap_scene": (1024, 2 * COMPACT_SIZE),
}

# output units of the illumination head are scaled to degrees / Kelvin
DIRECTION_SCALE = 180.0
TEMPERATURE_SCALE = 2000.0
TEMPERATURE_INIT = 4500.0


@dataclass
class VariantConfig:
    variant: str = "illum_predicter"
    latent_channels: int = None
    scene_channels: int = None
    light_channels: int = None
    image_size: int = 256
    base_channels: int = 64
    upsample_mode: str = "nearest"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    skip_source: str = "input"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        scene, light = _DEFAULT_SPLITS[self.variant]
        if self.scene_channels is None:
            if self.light_channels is not None and self.latent_channels is not None:
                self.scene_channels = self.latent_channels - self.light_channels
            else:
                self.scene_channels = scene
        if self.light_channels is None:
            if self.latent_channels is not None:
                self.light_channels = self.latent_channels - self.scene_channels
            else:
                self.light_channels = light
        if self.latent_channels is None:
            self.latent_channels = self.scene_channels + self.light_channels
        self.validate()

    def validate(self):
        if self.scene_channels + self.light_channels != self.latent_channels:
            raise ConfigError(
                f"scene ({self.scene_channels}) + light ({self.light_channels}) channels "
                f"must equal latent_channels ({self.latent_channels})"
            )
        if self.scene_channels < 0 or self.light_channels < 1:
            raise ConfigError("channel counts must be non-negative with at least one light channel")
        if self.variant == "envmap_only":
            if self.scene_channels != 0 or self.light_channels != 4 * ENVMAP_PIXELS:
                raise ConfigError(
                    f"envmap_only needs scene_channels=0 and light_channels={4 * ENVMAP_PIXELS} "
                    f"(512 pooling weights + 3x512 color values)"
                )
        if self.variant == "envmap_scene" and self.light_channels != 2 * COMPACT_SIZE:
            raise ConfigError(f"envmap_scene needs light_channels={2 * COMPACT_SIZE}")
        if self.image_size % 2**DOWNSAMPLING_STAGES:
            raise ConfigError(f"image_size must be divisible by {2**DOWNSAMPLING_STAGES}")
        if self.skip_source != "input":
            raise ConfigError("skip connections always come from the input image")
        if self.upsample_mode not in ("nearest", "bilinear"):
            raise ConfigError(f"unsupported upsample_mode {self.upsample_mode!r}")

    @property
    def latent_size(self):
        return self.image_size // 2**DOWNSAMPLING_STAGES

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LatentCode:
    """Encoder output: scene part, light part and the skip features (128², 64², 32² for 256² input)."""

    scene: torch.Tensor
    light: torch.Tensor
    skips: list = field(default_factory=list)

    @property
    def full(self):
        return torch.cat([self.scene, self.light], dim=1)


@dataclass
class IlluminationPrediction:
    direction_degrees: torch.Tensor
    temperature_kelvin: torch.Tensor


@dataclass
class RelightOutput:
    relit: torch.Tensor
    code_input: LatentCode
    code_target: LatentCode
    envmap_input: torch.Tensor = None
    envmap_target: torch.Tensor = None
    illum_input: IlluminationPrediction = None
    illum_target: IlluminationPrediction = None


def _conv(cin, cout, stride, cfg, act="lrelu", kernel=3):
    layers = [
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(cout, momentum=cfg.bn_momentum, eps=cfg.bn_eps),
    ]
    layers.append(nn.LeakyReLU(0.2) if act == "lrelu" else nn.ReLU())
    return nn.Sequential(*layers)


def _widths(cfg):
    b = cfg.base_channels
    return [b, 2 * b, 4 * b, 8 * b, 8 * b]


class Encoder(nn.Module):
    """11 weight layers: stem, four (stride-2, stride-1) stages, two 1x1 latent convs."""

    def __init__(self, cfg):
        super().__init__()
        w = _widths(cfg)
        self.stem = _conv(3, w[0], 1, cfg)
        self.stages = nn.ModuleList(
            nn.Sequential(_conv(w[k], w[k + 1], 2, cfg), _conv(w[k + 1], w[k + 1], 1, cfg))
            for k in range(DOWNSAMPLING_STAGES)
        )
        self.to_latent = nn.Sequential(
            _conv(w[-1], cfg.latent_channels, 1, cfg, kernel=1),
            nn.Conv2d(cfg.latent_channels, cfg.latent_channels, 1),
        )

    def forward(self, x):
        x = self.stem(x)
        skips = []
        for k, stage in enumerate(self.stages):
            x = stage(x)
            if k < DOWNSAMPLING_STAGES - 1:
                skips.append(x)
        return self.to_latent(x), skips


class _UpStage(nn.Module):
    def __init__(self, cin, cout, skip_ch, cfg):
        super().__init__()
        self.mode = cfg.upsample_mode
        self.conv_up = _conv(cin, cout, 1, cfg, act="relu")
        self.conv_merge = _conv(cout + skip_ch, cout, 1, cfg, act="relu")

    def forward(self, x, skip=None):
        x = F.interpolate(x, scale_factor=2, mode=self.mode)
        x = self.conv_up(x)
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        return self.conv_merge(x)


class Decoder(nn.Module):
    """Mirror of the encoder; every resolution increase is upsample followed by convolution."""

    def __init__(self, cfg):
        super().__init__()
        w = _widths(cfg)
        self.from_latent = nn.Sequential(
            _conv(cfg.latent_channels, w[-1], 1, cfg, act="relu", kernel=1),
            _conv(w[-1], w[-1], 1, cfg, act="relu", kernel=1),
        )
        # skip widths by decoder stage: /8, /4, /2, none
        skip_widths = [w[3], w[2], w[1], 0]
        outs = [w[3], w[2], w[1], w[0]]
        ins = [w[4]] + outs[:-1]
        self.stages = nn.ModuleList(_UpStage(i, o, s, cfg) for i, o, s in zip(ins, outs, skip_widths))
        self.to_image = nn.Conv2d(w[0], 3, 3, padding=1)

    def forward(self, latent, skips):
        if len(skips) != DOWNSAMPLING_STAGES - 1:
            raise ValueError(f"decoder needs {DOWNSAMPLING_STAGES - 1} skip tensors, got {len(skips)}")
        x = self.from_latent(latent)
        ordered = list(reversed(skips)) + [None]
        for stage, skip in zip(self.stages, ordered):
            if skip is not None and skip.shape[-1] != 2 * x.shape[-1]:
                raise ValueError(f"skip of size {tuple(skip.shape[-2:])} does not match decoder stage")
            x = stage(x, skip)
        return torch.sigmoid(self.to_image(x))


class IlluminationHead(nn.Module):
    """flatten(light) -> 20 -> 10 -> (direction degrees, temperature Kelvin)."""

    def __init__(self, in_features):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_features, 20),
            nn.ReLU(),
            nn.Linear(20, 10),
            nn.ReLU(),
            nn.Linear(10, 2),
        )
        self.register_buffer("scale", torch.tensor([DIRECTION_SCALE, TEMPERATURE_SCALE]))
        with torch.no_grad():
            self.net[-1].bias[1] = TEMPERATURE_INIT / TEMPERATURE_SCALE

    def forward(self, light):
        out = self.net(light.flatten(1)) * self.scale
        return IlluminationPrediction(direction_degrees=out[:, 0], temperature_kelvin=out[:, 1])


def weighted_pool(light, variant):
    """Pool the light code into an environment-map estimate.

    Weight channels multiply value channels elementwise and the product is
    summed over the spatial grid.  ``envmap_only`` returns (B, 3, 16, 32),
    ``envmap_scene`` returns (B, 514).
    """
    b, c = light.shape[:2]
    if variant == "envmap_only":
        if c != 4 * ENVMAP_PIXELS:
            raise ValueError(f"envmap_only light code needs {4 * ENVMAP_PIXELS} channels, got {c}")
        weights = light[:, :ENVMAP_PIXELS]
        values = light[:, ENVMAP_PIXELS:].reshape(b, 3, ENVMAP_PIXELS, *light.shape[2:])
        pooled = (weights[:, None] * values).sum(dim=(-2, -1))
        return pooled.reshape(b, 3, ENVMAP_HEIGHT, ENVMAP_WIDTH)
    if variant == "envmap_scene":
        if c != 2 * COMPACT_SIZE:
            raise ValueError(f"envmap_scene light code needs {2 * COMPACT_SIZE} channels, got {c}")
        weights = light[:, :COMPACT_SIZE]
        values = light[:, COMPACT_SIZE:]
        return (weights * values).sum(dim=(-2, -1))
    raise ConfigError(f"variant {variant!r} has no weighted pooling")


def swap_latent(code_input, code_target):
    """Scene and skips from the input image, light from the target image."""
    if code_input.scene.shape[1:] != code_target.scene.shape[1:] or (
        code_input.light.shape[1:] != code_target.light.shape[1:]
    ):
        raise ConfigError("latent codes come from different variant configurations")
    return LatentCode(scene=code_input.scene, light=code_target.light, skips=code_input.skips)


class RelightNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config if config is not None else VariantConfig()
        self.encoder = Encoder(self.config)
        self.decoder = Decoder(self.config)
        if self.config.variant == "illum_predicter":
            n = self.config.light_channels * self.config.latent_size**2
            self.illumination_head = IlluminationHead(n)
        else:
            self.illumination_head = None

    def _check_image(self, x):
        s = self.config.image_size
        if x.ndim != 4 or tuple(x.shape[1:]) != (3, s, s):
            raise ValueError(f"expected images of shape (B, 3, {s}, {s}), got {tuple(x.shape)}")

    def encode(self, image) -> LatentCode:
        self._check_image(image)
        latent, skips = self.encoder(image)
        scene = latent[:, : self.config.scene_channels]
        light = latent[:, self.config.scene_channels :]
        if self.config.variant != "illum_predicter":
            # pooled environment maps feed a log(1 + x) loss, so keep them non-negative
            light = F.softplus(light)
        return LatentCode(scene=scene, light=light, skips=skips)

    def decode(self, code) -> torch.Tensor:
        return self.decoder(code.full, code.skips)

    def weighted_pool(self, light):
        return weighted_pool(light, self.config.variant)

    def predict_illumination(self, light) -> IlluminationPrediction:
        if self.illumination_head is None:
            raise ConfigError(f"variant {self.config.variant!r} has no illumination predicter")
        return self.illumination_head(light)

    def forward(self, image_input, image_target) -> RelightOutput:
        code_i = self.encode(image_input)
        code_t = self.encode(image_target)
        out = RelightOutput(relit=self.decode(swap_latent(code_i, code_t)), code_input=code_i, code_target=code_t)
        if self.config.variant == "illum_predicter":
            out.illum_input = self.predict_illumination(code_i.light)
            out.illum_target = self.predict_illumination(code_t.light)
        else:
            out.envmap_input = self.weighted_pool(code_i.light)
            out.envmap_target = self.weighted_pool(code_t.light)
        return out

    relight = forward


class IdentityBaseline(nn.Module):
    """Wraps a network but always returns the input image as the relit image."""

    def __init__(self, net):
        super().__init__()
        self.net = net
        self.config = net.config

    def encode(self, image):
        return self.net.encode(image)

    def forward(self, image_input, image_target):
        out = self.net(image_input, image_target)
        out.relit = image_input
        return out

    relight = forward


def relight(image_input, image_target, model):
    return model(image_input, image_target)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
