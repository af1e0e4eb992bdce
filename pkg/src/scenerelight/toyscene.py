"""Tiny ray-cast renderer for the synthetic stand-in dataset.

Scenes are a few spheres and axis-aligned boxes on a textured ground plane,
seen from a fixed camera south of the scene looking north.  A single
directional light at fixed elevation provides Lambertian shading and hard
shadows; the image is tinted by the light color.

World axes: +x east, +y up, +z north.
"""

from dataclasses import dataclass, field

import numpy as np

from .envmap import hsv_to_rgb, kelvin_to_rgb

LIGHT_ELEVATION_DEG = 35.0
AMBIENT = 0.25
DIRECT = 0.75

CAMERA_EYE = np.array([0.0, 4.5, -5.5])
CAMERA_LOOK_AT = np.array([0.0, 0.0, 0.7])
CAMERA_FOV_DEG = 50.0

_EPS = 1e-4
GROUND_ID = -1
SKY_ID = -2


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: tuple


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    albedo: tuple


@dataclass(frozen=True)
class Scene:
    objects: tuple
    ground_colors: tuple = field(default=((0.6, 0.6, 0.6), (0.45, 0.45, 0.45)))
    checker_period: float = 1.0


def light_vector(direction_degrees, elevation_deg=LIGHT_ELEVATION_DEG):
    """Unit vector pointing from the scene toward the light."""
    az = np.deg2rad(direction_degrees)
    el = np.deg2rad(elevation_deg)
    return np.array([np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])


def _random_color(rng):
    h = rng.uniform(0.0, 1.0)
    s = rng.uniform(0.3, 0.8)
    v = rng.uniform(0.55, 0.9)
    return tuple(float(c) for c in hsv_to_rgb(h, s, v))


def sample_scene(rng, n_objects=None):
    """Random layout of 2-5 non-overlapping spheres and boxes."""
    if n_objects is None:
        n_objects = int(rng.integers(2, 6))
    objects = []
    footprints = []
    attempts = 0
    while len(objects) < n_objects and attempts < 1000:
        attempts += 1
        x = rng.uniform(-2.0, 2.0)
        z = rng.uniform(-1.0, 2.5)
        if rng.uniform() < 0.5:
            r = rng.uniform(0.3, 0.6)
            extent = r
            obj = Sphere((x, r, z), r, _random_color(rng))
        else:
            hx, hz = rng.uniform(0.25, 0.5, size=2)
            h = rng.uniform(0.4, 1.2)
            extent = float(np.hypot(hx, hz))
            obj = Box((x - hx, 0.0, z - hz), (x + hx, h, z + hz), _random_color(rng))
        if any(np.hypot(x - fx, z - fz) < extent + fe + 0.1 for fx, fz, fe in footprints):
            continue
        footprints.append((x, z, extent))
        objects.append(obj)
    base = np.array(_random_color(rng))
    ground = (tuple(float(c) for c in 0.8 * base + 0.1), tuple(float(c) for c in 0.6 * base + 0.1))
    return Scene(tuple(objects), ground_colors=ground, checker_period=float(rng.uniform(0.6, 1.4)))


def camera_rays(size):
    """Origins and unit directions through pixel centers, row 0 at the top."""
    forward = CAMERA_LOOK_AT - CAMERA_EYE
    forward = forward / np.linalg.norm(forward)
    right = np.cross(np.array([0.0, 1.0, 0.0]), forward)
    right = right / np.linalg.norm(right)
    up = np.cross(forward, right)
    half = np.tan(np.deg2rad(CAMERA_FOV_DEG) / 2)
    coords = (np.arange(size) + 0.5) / size * 2 - 1
    u, v = np.meshgrid(coords * half, -coords * half)
    dirs = forward[None, None] + u[..., None] * right[None, None] + v[..., None] * up[None, None]
    dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(CAMERA_EYE, dirs.shape)
    return origins.reshape(-1, 3), dirs.reshape(-1, 3)


def _hit_sphere(obj, o, d):
    c = np.asarray(obj.center)
    oc = o - c
    b = np.einsum("ij,ij->i", oc, d)
    cc = np.einsum("ij,ij->i", oc, oc) - obj.radius**2
    disc = b * b - cc
    t = np.full(len(o), np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    near = np.where(t0 > _EPS, t0, t1)
    ok &= near > _EPS
    t[ok] = near[ok]
    p = o + np.where(ok, t, 0.0)[:, None] * d
    return t, (p - c) / obj.radius


def _hit_box(obj, o, d):
    lo, hi = np.asarray(obj.lo), np.asarray(obj.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (lo - o) * inv
        tb = (hi - o) * inv
    tmin = np.fmin(ta, tb)
    tmax = np.fmax(ta, tb)
    t_enter = np.nanmax(tmin, axis=1)
    t_exit = np.nanmin(tmax, axis=1)
    t = np.full(len(o), np.inf)
    ok = (t_enter <= t_exit) & (t_exit > _EPS)
    hit_t = np.where(t_enter > _EPS, t_enter, t_exit)
    t[ok] = hit_t[ok]
    # normal from the face the hit point lies on
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    center = (lo + hi) / 2
    half = (hi - lo) / 2
    rel = (p - center) / half
    axis = np.argmax(np.abs(rel), axis=1)
    normal = np.zeros_like(p)
    normal[np.arange(len(p)), axis] = np.sign(rel[np.arange(len(p)), axis])
    return t, normal


def _hit(obj, o, d):
    return _hit_sphere(obj, o, d) if isinstance(obj, Sphere) else _hit_box(obj, o, d)


def _occluded(scene, points, light):
    d = np.broadcast_to(light, points.shape)
    blocked = np.zeros(len(points), dtype=bool)
    for obj in scene.objects:
        t, _ = _hit(obj, points, d)
        blocked |= np.isfinite(t)
    return blocked


def render(scene, illum, size, shadows=True, return_buffers=False):
    """Render a scene as a (size, size, 3) float array in [0, 1].

    With ``return_buffers`` also returns a dict holding ``object_id`` (-1
    ground, -2 sky, k for object k) and ``shadow`` (surface point hidden from
    the light by another primitive) as (size, size) arrays.
    """
    o, d = camera_rays(size)
    n = len(o)
    t_best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    ids = np.full(n, SKY_ID)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(d[:, 1] < 0, -o[:, 1] / d[:, 1], np.inf)
    hit = t_ground < t_best
    t_best[hit] = t_ground[hit]
    normal[hit] = (0.0, 1.0, 0.0)
    ids[hit] = GROUND_ID
    p = o + np.where(np.isfinite(t_best), t_best, 0.0)[:, None] * d
    checker = (np.floor(p[:, 0] / scene.checker_period) + np.floor(p[:, 2] / scene.checker_period)) % 2
    ground = np.where(checker[:, None] == 0, scene.ground_colors[0], scene.ground_colors[1])
    albedo[hit] = ground[hit]

    for k, obj in enumerate(scene.objects):
        t, nrm = _hit(obj, o, d)
        closer = t < t_best
        t_best[closer] = t[closer]
        normal[closer] = nrm[closer]
        albedo[closer] = obj.albedo
        ids[closer] = k

    light = light_vector(illum.direction_degrees)
    surface = ids != SKY_ID
    points = o + np.where(surface, t_best, 0.0)[:, None] * d + _EPS * 10 * normal
    shadow = np.zeros(n, dtype=bool)
    if shadows:
        shadow[surface] = _occluded(scene, points[surface], light)
    lambert = np.clip(normal @ light, 0.0, None)
    shading = AMBIENT + DIRECT * lambert * (~shadow)
    color = albedo * shading[:, None] * kelvin_to_rgb(illum.color_temperature)[None, :]
    color[~surface] = 0.0
    image = np.clip(color, 0.0, 1.0).reshape(size, size, 3)
    if return_buffers:
        return image, {"object_id": ids.reshape(size, size), "shadow": shadow.reshape(size, size)}
    return image


def to_uint8(image):
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
