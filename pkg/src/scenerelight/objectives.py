"""Training losses.

All functions take torch tensors (array-likes are converted) and return a
0-d tensor so they can be differentiated.
"""

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError

TEMPERATURE_NORMALIZER = 2000.0


def _t(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(x, dtype=dtype)


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


@dataclass
class LossWeights:
    reconstruction: float = 0.0
    perceptual: float = 0.0
    envmap: float = 0.0
    hsl_envmap: float = 0.0
    direction: float = 0.0
    temperature: float = 0.0
    adversarial: float = 0.0

    def __post_init__(self):
        values = asdict(self)
        if any(v < 0 for v in values.values()):
            raise ConfigError(f"loss weights must be non-negative: {values}")
        if not any(v > 0 for v in values.values()):
            raise ConfigError("at least one loss weight must be positive")

    @classmethod
    def for_variant(cls, variant, adversarial=0.0):
        defaults = {
            "illum_predicter": dict(reconstruction=1.0, direction=0.1, temperature=0.1),
            "envmap_only": dict(reconstruction=1.0, envmap=0.01),
            "envmap_scene": dict(perceptual=1.0, hsl_envmap=0.01),
        }
        if variant not in defaults:
            raise ConfigError(f"unknown variant {variant!r}")
        return cls(adversarial=adversarial, **defaults[variant])


def l1_reconstruction(relit, truth):
    """Mean absolute error over every pixel and channel."""
    relit, truth = _t(relit), _t(truth)
    _same_shape(relit, truth, "l1_reconstruction")
    return (relit - truth).abs().mean()


def l2_reconstruction(relit, truth):
    """Mean squared error over every pixel and channel."""
    relit, truth = _t(relit), _t(truth)
    _same_shape(relit, truth, "l2_reconstruction")
    return ((relit - truth) ** 2).mean()


def envmap_loss(estimate, truth):
    """Squared L2 distance between log(1 + x) of two environment maps, summed over all elements."""
    estimate, truth = _t(estimate), _t(truth, estimate)
    _same_shape(estimate, truth, "envmap_loss")
    if (estimate < 0).any() or (truth < 0).any():
        raise ValueError("environment map values must be non-negative")
    return ((torch.log1p(estimate) - torch.log1p(truth)) ** 2).sum()


def cosine_loss(x, x_hat):
    """Angular error 1 - cos(x - x_hat) for angles in degrees, averaged over elements."""
    x, x_hat = _t(x), _t(x_hat, x)
    return (1.0 - torch.cos(math.pi * (x - x_hat) / 180.0)).mean()


def temperature_loss(c, c_hat):
    """(c - c_hat)^2 / 2000^2, averaged over elements."""
    c, c_hat = _t(c), _t(c_hat, c)
    return (((c - c_hat) / TEMPERATURE_NORMALIZER) ** 2).mean()


def hsl_envmap_loss(estimate, truth):
    """Composite loss on compact maps ``[hue, saturation, brightness x 512]``.

    Hue (in turns) goes through the cosine loss, saturation through squared
    error and brightness through ``envmap_loss``.  Unit weights.  With a
    leading batch dimension every term is averaged over the batch.
    """
    estimate, truth = _t(estimate), _t(truth, estimate)
    _same_shape(estimate, truth, "hsl_envmap_loss")
    est = estimate.reshape(-1, estimate.shape[-1])
    tru = truth.reshape(-1, truth.shape[-1])
    n_maps = est.shape[0]
    hue = cosine_loss(360.0 * tru[:, 0], 360.0 * est[:, 0])
    sat = ((tru[:, 1] - est[:, 1]) ** 2).mean()
    brightness = envmap_loss(est[:, 2:], tru[:, 2:]) / n_maps
    return hue + sat + brightness


def _pyramid_mse(a, b, levels=3):
    if a.ndim == 3:
        a, b = a[None], b[None]
    total = 0.0
    for level in range(levels):
        if level:
            a = F.avg_pool2d(a, 2)
            b = F.avg_pool2d(b, 2)
        total = total + ((a - b) ** 2).mean()
    return total / levels


_PERCEPTUAL_BACKENDS = {}


def register_perceptual_backend(name, fn):
    """Install a callable ``fn(a, b) -> 0-d tensor`` under ``name`` (e.g. a pretrained LPIPS net)."""
    _PERCEPTUAL_BACKENDS[name] = fn


def _lpips_external():
    if "lpips_external" in _PERCEPTUAL_BACKENDS:
        return _PERCEPTUAL_BACKENDS["lpips_external"]
    try:
        import lpips
    except ImportError:
        raise ConfigError(
            "perceptual backend 'lpips_external' needs the 'lpips' package with pretrained weights "
            "(pip install lpips), or register one with register_perceptual_backend('lpips_external', fn); "
            "use backend='builtin_stand_in' otherwise"
        ) from None
    net = lpips.LPIPS(net="alex", verbose=False)

    def fn(a, b):
        # lpips expects NCHW in [-1, 1]
        return net(a * 2 - 1, b * 2 - 1).mean()

    _PERCEPTUAL_BACKENDS["lpips_external"] = fn
    return fn


def perceptual_loss(relit, truth, backend="builtin_stand_in"):
    """Perceptual distance between NCHW images in [0, 1].

    ``builtin_stand_in`` is NOT LPIPS: it is the mean squared error averaged
    over a 3-level average-pooling pyramid.  ``lpips_external`` delegates to a
    registered or installed pretrained LPIPS model.
    """
    relit, truth = _t(relit), _t(truth)
    _same_shape(relit, truth, "perceptual_loss")
    if callable(backend):
        return backend(relit, truth)
    if backend == "builtin_stand_in":
        return _pyramid_mse(relit, truth)
    if backend == "lpips_external":
        return _lpips_external()(relit, truth)
    if backend in _PERCEPTUAL_BACKENDS:
        return _PERCEPTUAL_BACKENDS[backend](relit, truth)
    raise ConfigError(f"unknown perceptual backend {backend!r}")


def _l2(a, b):
    return torch.linalg.vector_norm((_t(a) - _t(b)).flatten())


def latent_consistency(a, b, c):
    """Mean of the three pairwise L2 distances between codes a, b, c."""
    return (_l2(a, b) + _l2(a, c) + _l2(c, b)) / 3.0


def latent_scene_loss(scene_input, scene_gt, scene_relit):
    return latent_consistency(scene_input, scene_gt, scene_relit)


def latent_light_loss(light_target, light_gt, light_relit):
    return latent_consistency(light_target, light_gt, light_relit)


def normalized_latent_loss(loss, reference_a, reference_b):
    """Latent loss divided by a reference L2 distance; None when that distance is zero."""
    ref = _l2(reference_a, reference_b)
    if float(ref) == 0.0:
        return None
    return loss / ref


def normalized_latent_scene_loss(scene_input, scene_target, scene_gt, scene_relit):
    """Scene consistency relative to the (unconstrained) target-to-ground-truth scene distance."""
    return normalized_latent_loss(latent_scene_loss(scene_input, scene_gt, scene_relit), scene_target, scene_gt)


def normalized_latent_light_loss(light_input, light_target, light_gt, light_relit):
    """Light consistency relative to the (unconstrained) input-to-ground-truth light distance."""
    return normalized_latent_loss(latent_light_loss(light_target, light_gt, light_relit), light_input, light_gt)
