"""Single-file checkpoints: parameters keyed by layer path plus the variant config."""

from pathlib import Path

import torch

from .discriminator import PatchDiscriminator
from .errors import ConfigError
from .relightnet import IdentityBaseline, RelightNet, VariantConfig

FORMAT = "scenerelight-checkpoint/1"


def save_checkpoint(path, model, discriminator=None, step=0, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    baseline = isinstance(model, IdentityBaseline)
    net = model.net if baseline else model
    payload = {
        "format": FORMAT,
        "variant_config": net.config.to_dict(),
        "identity_baseline": baseline,
        "step": int(step),
        "model": net.state_dict(),
        "discriminator": None if discriminator is None else discriminator.state_dict(),
        "discriminator_base_channels": None if discriminator is None else discriminator.net[0].out_channels,
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path, expected_variant=None):
    """Rebuild the model (and discriminator, if stored) from a checkpoint.

    Returns ``(model, discriminator_or_None, metadata)``.  Raises ConfigError
    if the stored variant differs from ``expected_variant``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != FORMAT:
        raise ConfigError(f"{path}: not a {FORMAT} file")
    cfg = VariantConfig.from_dict(payload["variant_config"])
    if expected_variant is not None and cfg.variant != expected_variant:
        raise ConfigError(f"checkpoint variant {cfg.variant!r} does not match expected {expected_variant!r}")
    net = RelightNet(cfg)
    try:
        net.load_state_dict(payload["model"])
    except RuntimeError as exc:
        raise ConfigError(f"{path}: parameters incompatible with stored config: {exc}") from exc
    model = IdentityBaseline(net) if payload["identity_baseline"] else net
    disc = None
    if payload.get("discriminator") is not None:
        disc = PatchDiscriminator(base_channels=payload["discriminator_base_channels"])
        disc.load_state_dict(payload["discriminator"])
    meta = {k: payload[k] for k in ("step", "extra", "identity_baseline", "variant_config")}
    return model, disc, meta
