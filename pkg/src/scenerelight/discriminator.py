"""PatchGAN discriminator and the binary cross-entropy adversarial objective."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError

CLAMP_EPS = 1e-7


@dataclass
class PatchVerdict:
    scores: torch.Tensor  # (B, 1, h, w) real-probabilities per patch

    @property
    def mean(self):
        return self.scores.mean()


class PatchDiscriminator(nn.Module):
    """Four stride-2 4x4 convolutions followed by a 3x3 scoring convolution.

    For a 256x256 input the score grid is 16x16 and each score sees a 78x78
    pixel receptive field.  Only the relit image is judged (unconditional).
    """

    def __init__(self, in_channels=3, base_channels=64, conditional=False):
        super().__init__()
        if conditional:
            raise NotImplementedError("conditional PatchGAN (judging I/T together with the relit image) is not implemented")
        widths = [base_channels, 2 * base_channels, 4 * base_channels, 8 * base_channels]
        layers = []
        cin = in_channels
        for k, w in enumerate(widths):
            layers.append(nn.Conv2d(cin, w, 4, stride=2, padding=1, bias=k == 0))
            if k > 0:
                layers.append(nn.BatchNorm2d(w))
            layers.append(nn.LeakyReLU(0.2))
            cin = w
        layers.append(nn.Conv2d(cin, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.normal_(m.weight, 0.0, 0.02)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.normal_(m.weight, 1.0, 0.02)
                nn.init.zeros_(m.bias)

    def forward(self, image):
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(image.shape)}")
        return PatchVerdict(torch.sigmoid(self.net(image)))


def discriminate(model, image):
    return model(image)


def adversarial_losses(verdict_real, verdict_fake):
    """Discriminator and generator BCE losses from patch verdicts.

    d_loss = -mean log(real) - mean log(1 - fake); g_loss = -mean log(fake).
    Scores are clamped into [1e-7, 1 - 1e-7].
    """
    real = _scores(verdict_real).clamp(CLAMP_EPS, 1 - CLAMP_EPS)
    fake = _scores(verdict_fake).clamp(CLAMP_EPS, 1 - CLAMP_EPS)
    d_loss = -torch.log(real).mean() - torch.log1p(-fake).mean()
    g_loss = -torch.log(fake).mean()
    return d_loss, g_loss


def _scores(v):
    if isinstance(v, PatchVerdict):
        return v.scores
    return torch.as_tensor(v, dtype=torch.float64)


def build_discriminator(kind="patchgan", **kwargs):
    if kind == "patchgan":
        return PatchDiscriminator(**kwargs)
    if kind == "conditional_patchgan":
        return PatchDiscriminator(conditional=True, **kwargs)
    raise ConfigError(f"unknown discriminator {kind!r}")
