"""Image-quality metrics, the identity-relative Score and evaluation over pair subsets."""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import objectives
from .data import load_triple, sample_pairs

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# reference values reported for full-VIDIT training; shown in reports, never asserted
PUBLISHED_RESULTS = {
    "illum_predicter": {"mse": 0.0238, "psnr_db": 18.11, "ssim": 0.3365, "lpips": 0.3268},
    "envmap_only": {"mse": 0.0219, "psnr_db": 18.66, "ssim": 0.1832, "lpips": 0.2738},
    "envmap_scene": {"mse": 0.0254, "psnr_db": 18.10, "ssim": 0.2988, "lpips": 0.2564},
}
PUBLISHED_LABEL = "published full-VIDIT results, not a test target"

IMAGE_ROLES = ("I", "T", "G", "G_hat")


def _pair(a, b):
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(((a - b) ** 2).mean())


def psnr_from_mse(value, peak=1.0):
    if value == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / value)


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images in [0, 1]; ``inf`` for identical images."""
    return psnr_from_mse(mse(a, b))


def _gaussian_window(dtype):
    x = torch.arange(SSIM_WINDOW, dtype=dtype) - (SSIM_WINDOW - 1) / 2
    g = torch.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(a, b, data_range=1.0):
    """Mean SSIM of (C, H, W) or (N, C, H, W) images.

    Gaussian 11x11 window with sigma 1.5, K1 = 0.01, K2 = 0.03, statistics
    over valid window positions only, averaged over channels and pixels.
    """
    a, b = _pair(a, b)
    if a.ndim == 3:
        a, b = a[None], b[None]
    n, c = a.shape[:2]
    win = _gaussian_window(a.dtype).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(x):
        return F.conv2d(x, win, groups=c)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def score_l2(image_input, ground_truth, relit):
    """||G - G_hat||_2 / ||G - I||_2; 1 for the identity mapping, 0 for a perfect relight.

    Returns None when I already equals G (the ratio is undefined).
    """
    i = torch.as_tensor(image_input, dtype=torch.float64)
    g = torch.as_tensor(ground_truth, dtype=torch.float64)
    r = torch.as_tensor(relit, dtype=torch.float64)
    denom = torch.linalg.vector_norm((g - i).flatten())
    if float(denom) == 0.0:
        return None
    return float(torch.linalg.vector_norm((g - r).flatten()) / denom)


def latent_distances(codes):
    """All six pairwise L2 distances between codes keyed by image role."""
    out = {}
    for a, b in itertools.combinations(IMAGE_ROLES, 2):
        out[f"{a}-{b}"] = float(torch.linalg.vector_norm((codes[a] - codes[b]).flatten()))
    return out


@dataclass
class MetricReport:
    variant: str
    subsets: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "variant": self.variant,
            "settings": self.settings,
            "subsets": self.subsets,
            "reference": self.reference,
        }

    def to_json(self):
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def table(self):
        cols = ["pairs", "mse", "psnr_db", "ssim", "lpips", "score_l2", "score_reciprocal"]
        have_lpips = any(s.get("lpips") is not None for s in self.subsets.values())
        if not have_lpips:
            cols.remove("lpips")
        lines = [f"{'subset':<16}" + "".join(f"{c:>18}" for c in cols)]
        for name, stats in self.subsets.items():
            lines.append(f"{name:<16}" + "".join(f"{_fmt(stats.get(c)):>18}" for c in cols))
        ref = self.reference.get("values")
        if ref:
            lines.append("")
            lines.append(f"reference ({self.reference['label']}):")
            for variant, vals in ref.items():
                lines.append(f"  {variant:<16}" + "  ".join(f"{k}={v}" for k, v in vals.items()))
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.4f}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def images_to_tensor(arrays):
    return torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).contiguous()


@torch.no_grad()
def evaluate_pairs(model, index, keys, image_size, batch_size=8, lpips_backend=None):
    """Per-subset averages over explicit pair keys (processed in sorted key order)."""
    model.eval()
    keys = sorted(keys)
    cfg = model.config
    rows = []
    for start in range(0, len(keys), batch_size):
        triples = [load_triple(index, k, image_size) for k in keys[start : start + batch_size]]
        x_i = images_to_tensor([t.input for t in triples])
        x_t = images_to_tensor([t.target for t in triples])
        x_g = images_to_tensor([t.ground_truth for t in triples])
        out = model(x_i, x_t)
        code_g = model.encode(x_g)
        code_r = model.encode(out.relit)
        for b in range(len(triples)):
            row = {
                "mse": mse(out.relit[b], x_g[b]),
                "ssim": ssim(out.relit[b], x_g[b]),
                "score_l2": score_l2(x_i[b], x_g[b], out.relit[b]),
            }
            if lpips_backend is not None:
                row["lpips"] = float(objectives.perceptual_loss(out.relit[b : b + 1], x_g[b : b + 1], lpips_backend))
            for part in ("scene", "light"):
                if part == "scene" and cfg.scene_channels == 0:
                    continue
                codes = {
                    "I": getattr(out.code_input, part)[b],
                    "T": getattr(out.code_target, part)[b],
                    "G": getattr(code_g, part)[b],
                    "G_hat": getattr(code_r, part)[b],
                }
                row[f"{part}_distances"] = latent_distances(codes)
            rows.append(row)
    return rows


def summarize(rows):
    stats = {"pairs": len(rows)}
    stats["mse"] = _mean(r["mse"] for r in rows)
    stats["psnr_db"] = psnr_from_mse(stats["mse"])
    stats["ssim"] = _mean(r["ssim"] for r in rows)
    stats["lpips"] = _mean(r.get("lpips") for r in rows)
    scores = [r["score_l2"] for r in rows if r["score_l2"] is not None]
    stats["score_pairs"] = len(scores)
    stats["score_l2"] = _mean(scores)
    stats["score_reciprocal"] = None if not stats["score_l2"] else 1.0 / stats["score_l2"]
    for part, consistency_roles in (("scene", ("I", "G", "G_hat")), ("light", ("T", "G", "G_hat"))):
        key = f"{part}_distances"
        if not rows or key not in rows[0]:
            continue
        names = rows[0][key].keys()
        stats[key] = {n: _mean(r[key][n] for r in rows) for n in names}
        a, b, c = consistency_roles
        pair_names = [f"{a}-{b}", f"{a}-{c}", f"{b}-{c}"]
        stats[f"latent_{part}_loss"] = _mean(sum(r[key][n] for n in pair_names) / 3.0 for r in rows)
    if stats["lpips"] is None:
        del stats["lpips"]
    return stats


def evaluate(model, index, subsets, limit=None, seed=0, image_size=256, batch_size=8, lpips_backend=None):
    """Average metrics over each named PairSet in ``subsets``.

    At most ``limit`` pairs per subset are drawn with ``seed``; empty subsets
    are skipped with a warning.
    """
    report = MetricReport(
        variant=model.config.variant,
        settings={"limit": limit, "seed": seed, "image_size": image_size},
        reference={"label": PUBLISHED_LABEL, "values": PUBLISHED_RESULTS},
    )
    for name, pairs in subsets.items():
        if len(pairs) == 0:
            logger.warning("evaluation subset %s is empty; omitted", name)
            continue
        n = len(pairs) if limit is None else min(limit, len(pairs))
        keys = sample_pairs(pairs, n, seed)
        rows = evaluate_pairs(model, index, keys, image_size, batch_size, lpips_backend)
        report.subsets[name] = summarize(rows)
    return report
