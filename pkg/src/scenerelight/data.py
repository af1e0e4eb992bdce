"""Relighting triples: manifest ingestion, pair enumeration and sampling, image loading.

Every scene is rendered under the 40 illuminations of ``TEMPERATURES x
DIRECTIONS``.  A training sample pairs an input image I with a target image
T; its ground truth G(I, T) is the image of I's scene under T's illumination,
which always exists in a complete index.
"""

import csv
import itertools
import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

from .errors import DataError, ManifestError

logger = logging.getLogger(__name__)

TEMPERATURES = (2500, 3500, 4500, 5500, 6500)
DIRECTIONS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
DIRECTION_DEGREES = {d: 45.0 * k for k, d in enumerate(DIRECTIONS)}
ILLUMINATIONS_PER_SCENE = len(TEMPERATURES) * len(DIRECTIONS)

MANIFEST_HEADER = ("scene_id", "direction", "temperature", "relpath")
DEFAULT_IMAGE_SIZE = 256


@dataclass(frozen=True, order=True)
class Illumination:
    color_temperature: int
    direction: str

    def __post_init__(self):
        if self.color_temperature not in TEMPERATURES:
            raise ValueError(f"color temperature {self.color_temperature} K not in {TEMPERATURES}")
        if self.direction not in DIRECTION_DEGREES:
            raise ValueError(f"direction {self.direction!r} not in {DIRECTIONS}")

    @property
    def direction_degrees(self) -> float:
        return DIRECTION_DEGREES[self.direction]


def all_illuminations():
    return [Illumination(c, d) for c in TEMPERATURES for d in DIRECTIONS]


@dataclass(frozen=True)
class ImageRecord:
    scene_id: str
    illumination: Illumination
    path: Path


class PairKey(NamedTuple):
    """Record indices of the input and target images inside a SceneIndex."""

    input: int
    target: int


class SceneIndex:
    """Immutable catalogue of images keyed by (scene_id, illumination).

    Records are sorted by scene, then temperature, then direction, so record
    indices (and therefore pair keys) do not depend on manifest row order.
    """

    def __init__(self, records):
        records = sorted(
            records,
            key=lambda r: (r.scene_id, r.illumination.color_temperature, DIRECTIONS.index(r.illumination.direction)),
        )
        self.records = tuple(records)
        self._lookup = {}
        for i, rec in enumerate(self.records):
            key = (rec.scene_id, rec.illumination)
            if key in self._lookup:
                raise ManifestError(f"duplicate entry for scene {rec.scene_id!r} under {rec.illumination}")
            self._lookup[key] = i
        self.scenes = tuple(dict.fromkeys(r.scene_id for r in self.records))
        counts = {s: 0 for s in self.scenes}
        for r in self.records:
            counts[r.scene_id] += 1
        self.counts_per_scene = counts
        for scene, n in counts.items():
            if n != ILLUMINATIONS_PER_SCENE:
                raise ManifestError(
                    f"incomplete scene {scene!r}: {n} images, expected {ILLUMINATIONS_PER_SCENE}"
                )
        scene_pos = {s: k for k, s in enumerate(self.scenes)}
        self.scene_codes = np.array([scene_pos[r.scene_id] for r in self.records], dtype=np.int64)
        self.direction_codes = np.array(
            [DIRECTIONS.index(r.illumination.direction) for r in self.records], dtype=np.int64
        )
        self.temperature_codes = np.array(
            [TEMPERATURES.index(r.illumination.color_temperature) for r in self.records], dtype=np.int64
        )

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> ImageRecord:
        return self.records[i]

    def find(self, scene_id, illumination) -> int:
        try:
            return self._lookup[(scene_id, illumination)]
        except KeyError:
            raise DataError(f"no image for scene {scene_id!r} under {illumination}") from None

    def ground_truth(self, key: PairKey) -> int:
        """Record index of G(I, T): the input's scene under the target's illumination."""
        return self.find(self.records[key.input].scene_id, self.records[key.target].illumination)


def parse_manifest(path) -> SceneIndex:
    """Read a ``scene_id,direction,temperature,relpath`` CSV into a SceneIndex.

    Relative paths are resolved against the manifest's directory and every
    referenced file must exist.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            scene_id, direction, temperature, relpath = (f.strip() for f in row)
            try:
                kelvin = int(temperature)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: temperature {temperature!r} is not an integer") from None
            illum = Illumination(kelvin, direction)
            file = Path(relpath)
            if not file.is_absolute():
                file = root / file
            if not file.is_file():
                raise DataError(f"{path}:{lineno}: image file missing: {file}")
            records.append(ImageRecord(scene_id, illum, file))
    return SceneIndex(records)


def write_manifest(path, rows):
    """Write manifest rows of (scene_id, direction, temperature, relpath)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    return path


class PairSet:
    """Lazy set of (input, target) pairs over a SceneIndex.

    Pairs are never materialized: the size is computed from group counts and
    individual pairs are addressed by rank, which keeps VIDIT-sized sets (about
    1.5e8 pairs) cheap.  Pairs are ordered by input record, then target record.

    restricted
        input and target must come from different scenes and have different
        light directions.
    same_temperature / same_direction
        evaluation-subset filters (c_I = c_T, d_I = d_T).
    scenes
        optional whitelist; both images must belong to one of these scenes.
    """

    def __init__(self, index, restricted=False, same_temperature=False, same_direction=False, scenes=None):
        self.index = index
        self.restricted = bool(restricted)
        self.same_temperature = bool(same_temperature)
        self.same_direction = bool(same_direction)
        self.scenes = None if scenes is None else tuple(scenes)
        if self.scenes is None:
            eligible = np.ones(len(index), dtype=bool)
        else:
            unknown = set(self.scenes) - set(index.scenes)
            if unknown:
                raise DataError(f"unknown scenes: {sorted(unknown)}")
            wanted = [index.scenes.index(s) for s in self.scenes]
            eligible = np.isin(index.scene_codes, wanted)
        self._eligible = np.flatnonzero(eligible)
        self._partner_counts = self._count_partners()
        self._offsets = np.concatenate([[0], np.cumsum(self._partner_counts)])

    def _columns(self, names):
        cols = {
            "scene": self.index.scene_codes,
            "direction": self.index.direction_codes,
            "temperature": self.index.temperature_codes,
        }
        return [cols[n][self._eligible] for n in names]

    def _count_partners(self):
        equal = [n for n, on in (("temperature", self.same_temperature), ("direction", self.same_direction)) if on]
        unequal = ["scene", "direction"] if self.restricted else []
        n = len(self._eligible)
        if set(equal) & set(unequal):
            return np.zeros(n, dtype=np.int64)
        # inclusion-exclusion over the "must differ" attributes
        total = np.zeros(n, dtype=np.int64)
        for r in range(len(unequal) + 1):
            for subset in itertools.combinations(unequal, r):
                names = equal + list(subset)
                if names:
                    _, inverse, counts = np.unique(
                        np.stack(self._columns(names), axis=1), axis=0, return_inverse=True, return_counts=True
                    )
                    matched = counts[inverse.reshape(-1)]
                else:
                    matched = np.full(n, n, dtype=np.int64)
                total += (-1) ** r * matched
        return total

    def _partner_mask(self, i):
        idx = self.index
        mask = np.ones(len(self._eligible), dtype=bool)
        cand = self._eligible
        if self.restricted:
            mask &= idx.scene_codes[cand] != idx.scene_codes[i]
            mask &= idx.direction_codes[cand] != idx.direction_codes[i]
        if self.same_temperature:
            mask &= idx.temperature_codes[cand] == idx.temperature_codes[i]
        if self.same_direction:
            mask &= idx.direction_codes[cand] == idx.direction_codes[i]
        return mask

    def __len__(self):
        return int(self._offsets[-1])

    def __bool__(self):
        return len(self) > 0

    def __getitem__(self, rank) -> PairKey:
        rank = int(rank)
        if rank < 0:
            rank += len(self)
        if not 0 <= rank < len(self):
            raise IndexError(f"pair rank {rank} out of range for {len(self)} pairs")
        pos = int(np.searchsorted(self._offsets, rank, side="right")) - 1
        i = int(self._eligible[pos])
        partners = self._eligible[self._partner_mask(i)]
        return PairKey(i, int(partners[rank - self._offsets[pos]]))

    def __iter__(self):
        for pos, k in enumerate(self._partner_counts):
            if k == 0:
                continue
            i = int(self._eligible[pos])
            for t in self._eligible[self._partner_mask(i)]:
                yield PairKey(i, int(t))

    def __contains__(self, key):
        i, t = key
        if i not in set(self._eligible.tolist()) or t not in set(self._eligible.tolist()):
            return False
        pos = np.flatnonzero(self._eligible == t)[0]
        return bool(self._partner_mask(i)[pos])

    def filtered(self, same_temperature=False, same_direction=False):
        return PairSet(
            self.index,
            restricted=self.restricted,
            same_temperature=self.same_temperature or same_temperature,
            same_direction=self.same_direction or same_direction,
            scenes=self.scenes,
        )

    def __repr__(self):
        return (
            f"PairSet(n={len(self)}, restricted={self.restricted}, same_temperature={self.same_temperature}, "
            f"same_direction={self.same_direction}, scenes={self.scenes})"
        )


def enumerate_pairs(index, restricted=False, scenes=None) -> PairSet:
    """All (I, T) pairs of the index, optionally restricted to different scenes and directions."""
    if len(index) == 0:
        raise DataError("cannot enumerate pairs of an empty index")
    pairs = PairSet(index, restricted=restricted, scenes=scenes)
    if restricted and len(pairs) == 0:
        warnings.warn("restricted pairing needs at least 2 scenes; pair set is empty", stacklevel=2)
    return pairs


def filter_subset(pairs, predicate) -> PairSet:
    """Evaluation subset: ``"same_temperature"`` (c_I = c_T) or ``"same_direction"`` (d_I = d_T)."""
    if predicate == "same_temperature":
        return pairs.filtered(same_temperature=True)
    if predicate == "same_direction":
        return pairs.filtered(same_direction=True)
    raise ValueError(f"unknown subset predicate {predicate!r}")


def sample_pairs(pairs, n, seed):
    """Draw ``n`` distinct pairs uniformly at random, reproducibly for a given seed."""
    total = len(pairs)
    if n > total:
        raise ValueError(f"cannot sample {n} pairs from a set of {total}")
    rng = np.random.default_rng(seed)
    ranks = rng.choice(total, size=n, replace=False)
    return [pairs[r] for r in ranks]


@dataclass(frozen=True)
class RelightingTriple:
    input: np.ndarray
    target: np.ndarray
    ground_truth: np.ndarray
    illum_input: Illumination
    illum_target: Illumination
    scene_input: str
    scene_target: str


@lru_cache(maxsize=256)
def load_image(path, size=DEFAULT_IMAGE_SIZE):
    """Read an image as a read-only float32 (size, size, 3) array in [0, 1], bilinear resize."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (size, size):
                im = im.resize((size, size), Image.Resampling.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise DataError(f"image file missing: {path}") from None
    arr.flags.writeable = False
    return arr


def load_triple(index, key, image_size=DEFAULT_IMAGE_SIZE) -> RelightingTriple:
    key = PairKey(*key)
    rec_i, rec_t = index[key.input], index[key.target]
    rec_g = index[index.ground_truth(key)]
    return RelightingTriple(
        input=load_image(rec_i.path, image_size),
        target=load_image(rec_t.path, image_size),
        ground_truth=load_image(rec_g.path, image_size),
        illum_input=rec_i.illumination,
        illum_target=rec_t.illumination,
        scene_input=rec_i.scene_id,
        scene_target=rec_t.scene_id,
    )


def generate_toy_dataset(out_dir, n_scenes, image_size=128, seed=0):
    """Render ``n_scenes`` procedural scenes under all 40 illuminations.

    Layout: ``<out_dir>/scene_<k>/<direction>_<kelvin>.png`` and a
    ``manifest.csv`` at the root.  Returns the manifest path.
    """
    from . import toyscene

    if n_scenes < 2:
        raise ValueError("restricted pairing needs >= 2 scenes")
    if image_size < 64:
        raise ValueError(f"image_size must be >= 64, got {image_size}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_scenes):
        scene = toyscene.sample_scene(rng)
        scene_id = f"scene_{k}"
        (out_dir / scene_id).mkdir(exist_ok=True)
        for illum in all_illuminations():
            image = toyscene.render(scene, illum, image_size)
            relpath = f"{scene_id}/{illum.direction}_{illum.color_temperature}.png"
            Image.fromarray(toyscene.to_uint8(image)).save(out_dir / relpath)
            rows.append((scene_id, illum.direction, illum.color_temperature, relpath))
    logger.info("rendered %d images into %s", len(rows), out_dir)
    return write_manifest(out_dir / "manifest.csv", rows)
