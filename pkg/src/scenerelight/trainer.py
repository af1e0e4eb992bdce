"""Training and evaluation loops for the three model variants."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import objectives
from .checkpoint import load_checkpoint, save_checkpoint
from .data import enumerate_pairs, filter_subset, load_triple, parse_manifest, sample_pairs
from .discriminator import PatchDiscriminator, adversarial_losses
from .envmap import envmap_targets
from .errors import ConfigError, TrainingError
from .metrics import evaluate, images_to_tensor, score_l2
from .relightnet import RelightNet, VariantConfig

logger = logging.getLogger(__name__)

EMA_FACTOR = 0.99
GRID_ROWS = ("input", "target", "ground_truth", "relit")


@dataclass
class TrainingConfig:
    manifest: str = None
    output_dir: str = "runs/default"
    variant: dict = field(default_factory=lambda: {"variant": "illum_predicter"})
    loss_weights: dict = None
    reconstruction: str = None  # "l1" | "l2"; per-variant default when None
    perceptual_backend: str = "builtin_stand_in"
    adversarial: bool = False
    adversarial_weight: float = 0.01
    discriminator_base_channels: int = 64
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    batch_size: int = 8
    steps: int = 1000
    pair_budget: int = None
    restricted: bool = True
    eval_scenes: list = None
    seed: int = 0
    log_every: int = 1
    image_every: int = 100
    checkpoint_every: int = 1000
    eval_every: int = 0
    eval_limit: int = 64

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.reconstruction not in (None, "l1", "l2"):
            raise ConfigError(f"reconstruction must be 'l1' or 'l2', got {self.reconstruction!r}")
        self.betas = tuple(self.betas)
        self.variant_config()
        self.weights()

    def variant_config(self):
        return VariantConfig.from_dict(dict(self.variant))

    def weights(self):
        variant = self.variant["variant"]
        if self.loss_weights is not None:
            return objectives.LossWeights(**self.loss_weights)
        return objectives.LossWeights.for_variant(variant, self.adversarial_weight if self.adversarial else 0.0)

    def reconstruction_kind(self):
        if self.reconstruction is not None:
            return self.reconstruction
        return "l2" if self.variant["variant"] == "illum_predicter" else "l1"

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


def preset(name, model=None, **overrides):
    """Training config for one of the three architectures with its default losses.

    ``model`` holds VariantConfig overrides such as ``image_size`` or ``base_channels``.
    """
    return TrainingConfig(variant={"variant": name, **(model or {})}, **overrides)


def split_scenes(index, eval_scenes):
    """(train scenes, eval scenes).  Without a held-out set both are all scenes."""
    if eval_scenes is None:
        return list(index.scenes), list(index.scenes)
    if isinstance(eval_scenes, int):
        held = list(index.scenes[-eval_scenes:])
    else:
        held = list(eval_scenes)
    train = [s for s in index.scenes if s not in held]
    if not train or not held:
        raise ConfigError("scene split leaves the train or eval set empty")
    return train, held


class PairStream:
    """Batches from a fixed sample of pairs, never repeating a pair until the sample is exhausted."""

    def __init__(self, pairs, budget, seed):
        self.keys = sample_pairs(pairs, budget, seed)
        self.rng = np.random.default_rng(seed + 1)
        self.order = list(range(len(self.keys)))
        self.pos = 0
        self.passes = 0

    def next_batch(self, batch_size):
        batch = []
        while len(batch) < batch_size:
            if self.pos == len(self.order):
                self.order = list(self.rng.permutation(len(self.keys)))
                self.pos = 0
                self.passes += 1
            batch.append(self.keys[self.order[self.pos]])
            self.pos += 1
        return batch


def batch_tensors(index, keys, image_size):
    triples = [load_triple(index, k, image_size) for k in keys]
    return (
        triples,
        images_to_tensor([t.input for t in triples]),
        images_to_tensor([t.target for t in triples]),
        images_to_tensor([t.ground_truth for t in triples]),
    )


def illumination_targets(triples):
    direction = torch.tensor(
        [[t.illum_input.direction_degrees, t.illum_target.direction_degrees] for t in triples]
    )
    temperature = torch.tensor(
        [[float(t.illum_input.color_temperature), float(t.illum_target.color_temperature)] for t in triples]
    )
    return direction, temperature


def variant_losses(config, out, ground_truth, triples):
    """Unweighted loss components for one batch, keyed like LossWeights fields."""
    variant = config.variant["variant"]
    losses = {}
    if variant == "envmap_scene":
        losses["perceptual"] = objectives.perceptual_loss(out.relit, ground_truth, config.perceptual_backend)
    elif config.reconstruction_kind() == "l1":
        losses["reconstruction"] = objectives.l1_reconstruction(out.relit, ground_truth)
    else:
        losses["reconstruction"] = objectives.l2_reconstruction(out.relit, ground_truth)

    if variant == "illum_predicter":
        direction, temperature = illumination_targets(triples)
        losses["direction"] = objectives.cosine_loss(
            direction[:, 0], out.illum_input.direction_degrees
        ) + objectives.cosine_loss(direction[:, 1], out.illum_target.direction_degrees)
        losses["temperature"] = objectives.temperature_loss(
            temperature[:, 0], out.illum_input.temperature_kelvin
        ) + objectives.temperature_loss(temperature[:, 1], out.illum_target.temperature_kelvin)
    elif variant == "envmap_only":
        gt_i = envmap_targets([t.illum_input for t in triples], "rgb")
        gt_t = envmap_targets([t.illum_target for t in triples], "rgb")
        n = len(triples)
        losses["envmap"] = (
            objectives.envmap_loss(out.envmap_input, gt_i) + objectives.envmap_loss(out.envmap_target, gt_t)
        ) / n
    else:
        gt_i = envmap_targets([t.illum_input for t in triples], "compact")
        gt_t = envmap_targets([t.illum_target for t in triples], "compact")
        losses["hsl_envmap"] = objectives.hsl_envmap_loss(out.envmap_input, gt_i) + objectives.hsl_envmap_loss(
            out.envmap_target, gt_t
        )
    return losses


def image_grid(rows, max_columns=4):
    """Stack NCHW batches into a uint8 grid: one row per entry of ``rows``."""
    strips = []
    for batch in rows:
        imgs = batch[:max_columns].detach().clamp(0, 1).permute(0, 2, 3, 1).cpu().numpy()
        strips.append(np.concatenate(list(imgs), axis=1))
    grid = np.concatenate(strips, axis=0)
    return np.round(grid * 255).astype(np.uint8)


def smooth(values, factor=EMA_FACTOR):
    """Exponential moving average, seeded with the first value."""
    out = []
    s = None
    for v in values:
        s = v if s is None else factor * s + (1 - factor) * v
        out.append(s)
    return out


def read_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize_log(path, factor=EMA_FACTOR):
    """Final smoothed value of every logged loss component."""
    records = read_log(path)
    keys = [k for k in records[0]["losses"]]
    return {k: smooth([r["losses"][k] for r in records if k in r["losses"]], factor)[-1] for k in keys}


def _seed_everything(seed):
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


@dataclass
class TrainResult:
    checkpoint: Path
    run_dir: Path
    model: RelightNet
    discriminator: PatchDiscriminator = None
    train_keys: list = None


def train(config, index=None, stop_when=None):
    """Run ``config.steps`` parameter updates and return the final checkpoint and run directory.

    ``stop_when(step, record)`` may end training early by returning True.
    """
    if index is None:
        if config.manifest is None:
            raise ConfigError("training config needs a manifest path")
        index = parse_manifest(config.manifest)
    run_dir = Path(config.output_dir)
    (run_dir / "images").mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)

    _seed_everything(config.seed)
    vcfg = config.variant_config()
    weights = config.weights()
    model = RelightNet(vcfg)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=config.betas)
    disc = opt_d = None
    if config.adversarial:
        disc = PatchDiscriminator(base_channels=config.discriminator_base_channels)
        opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=(0.5, 0.999))

    train_scenes, eval_scenes = split_scenes(index, config.eval_scenes)
    pairs = enumerate_pairs(index, restricted=config.restricted, scenes=train_scenes)
    if len(pairs) == 0:
        raise ConfigError("no training pairs; restricted pairing needs >= 2 scenes")
    budget = config.pair_budget or min(len(pairs), max(config.steps, 1) * config.batch_size)
    stream = PairStream(pairs, min(budget, len(pairs)), config.seed)

    log_path = run_dir / "metrics.jsonl"
    log_fh = open(log_path, "w")
    t0 = time.time()
    ckpt = None
    try:
        for step in range(config.steps):
            model.train()
            keys = stream.next_batch(config.batch_size)
            triples, x_i, x_t, x_g = batch_tensors(index, keys, vcfg.image_size)
            out = model(x_i, x_t)
            losses = variant_losses(config, out, x_g, triples)
            total = sum(getattr(weights, k) * v for k, v in losses.items())

            d_loss = None
            if disc is not None:
                disc.train()
                verdict_real = disc(x_g)
                d_loss, _ = adversarial_losses(verdict_real, disc(out.relit.detach()))
                _check_finite(d_loss, "discriminator", step, run_dir, keys, x_i, x_t, x_g)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                _, g_loss = adversarial_losses(verdict_real.scores.detach(), disc(out.relit))
                losses["adversarial"] = g_loss
                total = total + weights.adversarial * g_loss

            _check_finite(total, "generator", step, run_dir, keys, x_i, x_t, x_g)
            opt.zero_grad()
            total.backward()
            opt.step()

            record = {
                "step": step,
                "losses": {k: float(v.detach()) for k, v in losses.items()},
                "total": float(total.detach()),
                "lr": opt.param_groups[0]["lr"],
                "wall_time": time.time() - t0,
            }
            if d_loss is not None:
                record["losses"]["d_loss"] = float(d_loss.detach())
            with torch.no_grad():
                scores = [score_l2(x_i[b], x_g[b], out.relit[b]) for b in range(len(keys))]
            scores = [s for s in scores if s is not None]
            if scores:
                record["losses"]["score_l2"] = float(np.mean(scores))
            if step % config.log_every == 0:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if config.image_every and step % config.image_every == 0:
                grid = image_grid([x_i, x_t, x_g, out.relit])
                Image.fromarray(grid).save(run_dir / "images" / f"step_{step}.png")
            if config.checkpoint_every and step > 0 and step % config.checkpoint_every == 0:
                save_checkpoint(run_dir / f"ckpt_{step}.pt", model, disc, step)
            if config.eval_every and step > 0 and step % config.eval_every == 0:
                report = evaluate_model(model, index, eval_scenes, config.eval_limit, config.seed, vcfg.image_size)
                (run_dir / f"eval_{step}.json").write_text(report.to_json())
            if stop_when is not None and stop_when(step, record):
                break
        ckpt = save_checkpoint(run_dir / f"ckpt_{config.steps if config.steps else 0}.pt", model, disc, config.steps)
    finally:
        log_fh.close()
    return TrainResult(ckpt, run_dir, model, disc, stream.keys)


def _check_finite(loss, what, step, run_dir, keys, x_i, x_t, x_g):
    if torch.isfinite(loss).all():
        return
    snap = run_dir / f"nonfinite_step_{step}.pt"
    torch.save({"keys": [tuple(k) for k in keys], "input": x_i, "target": x_t, "ground_truth": x_g}, snap)
    raise TrainingError(f"non-finite {what} loss at step {step}; offending batch saved to {snap}")


def evaluation_subsets(index, scenes, train_scenes=None):
    pairs = enumerate_pairs(index, restricted=False, scenes=scenes)
    subsets = {
        "Eval": pairs,
        "Eval_c_I=c_T": filter_subset(pairs, "same_temperature"),
        "Eval_d_I=d_T": filter_subset(pairs, "same_direction"),
    }
    if train_scenes is not None:
        subsets["Train-sample"] = enumerate_pairs(index, restricted=False, scenes=train_scenes)
    return subsets


def evaluate_model(model, index, scenes, limit, seed, image_size, train_scenes=None, lpips_backend=None):
    return evaluate(
        model,
        index,
        evaluation_subsets(index, scenes, train_scenes),
        limit=limit,
        seed=seed,
        image_size=image_size,
        lpips_backend=lpips_backend,
    )


def evaluate_checkpoint(checkpoint, manifest, limit=64, seed=0, eval_scenes=None, expected_variant=None,
                        output=None, lpips_backend=None):
    """Evaluate a stored model on Eval, Eval_{c_I=c_T} and Eval_{d_I=d_T}; optionally write the JSON report."""
    model, _, _ = load_checkpoint(checkpoint, expected_variant)
    index = parse_manifest(manifest) if not hasattr(manifest, "records") else manifest
    _, scenes = split_scenes(index, eval_scenes)
    report = evaluate_model(model, index, scenes, limit, seed, model.config.image_size, lpips_backend=lpips_backend)
    if output is not None:
        Path(output).write_text(report.to_json())
    return report


@torch.no_grad()
def illumination_fit(model, index, keys, batch_size=8):
    """Inference-mode L_c, L_d and Score over given pairs (both I and T predictions count)."""
    model.eval()
    l_c, l_d, scores = [], [], []
    for start in range(0, len(keys), batch_size):
        chunk = keys[start : start + batch_size]
        triples, x_i, x_t, x_g = batch_tensors(index, chunk, model.config.image_size)
        out = model(x_i, x_t)
        direction, temperature = illumination_targets(triples)
        pred_d = torch.stack([out.illum_input.direction_degrees, out.illum_target.direction_degrees], 1)
        pred_c = torch.stack([out.illum_input.temperature_kelvin, out.illum_target.temperature_kelvin], 1)
        l_d.append(float(objectives.cosine_loss(direction, pred_d)) * len(chunk))
        l_c.append(float(objectives.temperature_loss(temperature, pred_c)) * len(chunk))
        for b in range(len(chunk)):
            s = score_l2(x_i[b], x_g[b], out.relit[b])
            if s is not None:
                scores.append(s)
    n = len(keys)
    return {
        "temperature": sum(l_c) / n,
        "direction": sum(l_d) / n,
        "score_l2": float(np.mean(scores)) if scores else math.nan,
    }
