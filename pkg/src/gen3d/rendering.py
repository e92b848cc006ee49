"""Camera sampling, ray casting, the patch operator, and differentiable
volume rendering.

Conventions: cameras sit on a sphere around the origin, looking at it, world
z up.  Camera frame is x-right / y-down / z-forward; continuous pixel
coordinates run over [0, W] x [0, H] with pixel (i, j) centered at
(j + 0.5, i + 0.5).  A patch is a K x K grid of continuous image positions;
real patches are bilinearly sampled from images, fake patches are rendered
by casting one ray per grid position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import tape
from .errors import ContractError, EvaluationError
from .field import sigma_to_alpha

WHITE = np.array([1.0, 1.0, 1.0], dtype=np.float32)


@dataclass(frozen=True)
class CameraConfig:
    radius: float = 3.0
    elev_lo_deg: float = 10.0
    elev_hi_deg: float = 50.0
    fov_deg: float = 45.0
    width: int = 64
    height: int = 64


@dataclass(frozen=True)
class CameraPose:
    position: np.ndarray
    orientation: np.ndarray  # world-from-camera, columns = right, down, forward
    focal: float
    principal: np.ndarray
    size: tuple

    def __post_init__(self):
        R = np.asarray(self.orientation, dtype=float)
        if R.shape != (3, 3):
            raise ContractError("orientation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ContractError("orientation must be a rotation (orthonormal, det +1)")

    @property
    def forward(self):
        return self.orientation[:, 2]


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        if not (0 <= self.t_near < self.t_far):
            raise ContractError("need 0 <= t_near < t_far")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ContractError("ray direction must be unit length")


@dataclass(frozen=True)
class PatchSpec:
    center: np.ndarray  # normalized image coords in [0,1]^2, (u_x, u_y)
    scale: float


@dataclass(frozen=True)
class PatchConfig:
    size: int = 32
    scale_min: float | None = None  # None -> K/W at sample time
    scale_max: float = 1.0


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[2] != 3:
            raise ContractError("patch must be KxKx3")
        if p.min() < -1e-5 or p.max() > 1 + 1e-5:
            raise ContractError("patch values must lie in [0,1]")

    @property
    def k(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class RaySampleBatch:
    ts: np.ndarray
    positions: np.ndarray
    deltas: np.ndarray
    alphas: np.ndarray
    transmittances: np.ndarray
    colors: np.ndarray
    residual_transmittance: float


class RayBundle:
    """Vectorized ray set: one shared origin, per-ray unit directions."""

    def __init__(self, origins, dirs, t_near, t_far):
        self.origins = origins
        self.dirs = dirs
        self.t_near = t_near
        self.t_far = t_far

    def __len__(self):
        return len(self.dirs)


# ---------------------------------------------------------------------------
# cameras and rays


def look_at_rotation(position, target=np.zeros(3), up=np.array([0.0, 0.0, 1.0])):
    f = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    f = f / np.linalg.norm(f)
    if abs(np.dot(f, up)) > 1.0 - 1e-8:
        up = np.array([1.0, 0.0, 0.0])
    r = np.cross(f, up)
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    return np.stack([r, d, f], axis=1)


def sample_camera(rng, cam: CameraConfig) -> CameraPose:
    """Pose on the configured sphere: azimuth uniform, elevation uniform in
    its range, looking at the origin."""
    if cam.elev_lo_deg > cam.elev_hi_deg:
        raise ContractError("empty elevation range")
    azim = rng.uniform(0.0, 2.0 * np.pi)
    elev = np.deg2rad(rng.uniform(cam.elev_lo_deg, cam.elev_hi_deg))
    pos = cam.radius * np.array(
        [np.cos(elev) * np.cos(azim), np.cos(elev) * np.sin(azim), np.sin(elev)]
    )
    return pose_at(pos, cam)


def pose_at(position, cam: CameraConfig) -> CameraPose:
    focal = 0.5 * cam.width / np.tan(0.5 * np.deg2rad(cam.fov_deg))
    return CameraPose(
        position=np.asarray(position, dtype=float),
        orientation=look_at_rotation(position),
        focal=float(focal),
        principal=np.array([cam.width / 2.0, cam.height / 2.0]),
        size=(cam.width, cam.height),
    )


def ray_bounds(pose: CameraPose, scene_bound=1.0):
    dist = np.linalg.norm(pose.position)
    half = np.sqrt(3.0) * scene_bound
    return max(1e-3, dist - half), dist + half


def ray_directions(pose: CameraPose, pixel_coords):
    coords = np.asarray(pixel_coords, dtype=float).reshape(-1, 2)
    cam_dirs = np.stack(
        [
            (coords[:, 0] - pose.principal[0]) / pose.focal,
            (coords[:, 1] - pose.principal[1]) / pose.focal,
            np.ones(len(coords)),
        ],
        axis=1,
    )
    world = cam_dirs @ pose.orientation.T
    return world / np.linalg.norm(world, axis=1, keepdims=True)


def ray_bundle(pose: CameraPose, pixel_coords, scene_bound=1.0) -> RayBundle:
    dirs = ray_directions(pose, pixel_coords)
    near, far = ray_bounds(pose, scene_bound)
    n = len(dirs)
    return RayBundle(
        origins=np.broadcast_to(pose.position, (n, 3)),
        dirs=dirs,
        t_near=np.full(n, near),
        t_far=np.full(n, far),
    )


def generate_rays(pose: CameraPose, pixel_coords, scene_bound=1.0):
    """One pinhole ray per continuous pixel coordinate."""
    w, h = pose.size
    coords = np.asarray(pixel_coords, dtype=float).reshape(-1, 2)
    if np.any(coords < 0) or np.any(coords[:, 0] > w) or np.any(coords[:, 1] > h):
        raise ContractError("pixel coordinates outside image bounds")
    bundle = ray_bundle(pose, coords, scene_bound)
    return [
        Ray(bundle.origins[i].copy(), bundle.dirs[i], float(bundle.t_near[i]), float(bundle.t_far[i]))
        for i in range(len(bundle))
    ]


# ---------------------------------------------------------------------------
# patches


def patch_grid(spec: PatchSpec, k, size):
    """K x K continuous pixel coordinates implied by (center, scale).

    At scale 1 with K == W == H the grid lands exactly on pixel centers.
    """
    w, h = size
    u = np.asarray(spec.center, dtype=float)
    if k == 1:
        frac = np.zeros(1)
    else:
        frac = np.arange(k) / (k - 1) - 0.5
    gx = u[0] * w + frac * spec.scale * (w - 1)
    gy = u[1] * h + frac * spec.scale * (h - 1)
    grid = np.stack(np.meshgrid(gx, gy, indexing="xy"), axis=-1)  # [row, col, (x,y)]
    return grid


def grid_in_bounds(grid, size):
    w, h = size
    eps = 1e-9
    return (
        grid[..., 0].min() >= 0.5 - eps
        and grid[..., 0].max() <= w - 0.5 + eps
        and grid[..., 1].min() >= 0.5 - eps
        and grid[..., 1].max() <= h - 0.5 + eps
    )


def sample_patch_spec(rng, patch: PatchConfig, size) -> PatchSpec:
    """Scale uniform in its range, center uniform over in-bounds positions."""
    w, h = size
    k = patch.size
    if k > min(w, h):
        raise ContractError("patch size exceeds image")
    s_min = patch.scale_min if patch.scale_min is not None else k / w
    s = rng.uniform(s_min, patch.scale_max)
    center = np.empty(2)
    for axis, extent in enumerate((w, h)):
        half = 0.5 * s * (extent - 1)
        lo = (0.5 + half) / extent
        hi = (extent - 0.5 - half) / extent
        if lo > hi:
            if lo - hi < 1e-9:
                center[axis] = lo
                continue
            raise ContractError(f"no valid patch center at scale {s:.4f}")
        center[axis] = rng.uniform(lo, hi)
    return PatchSpec(center=center, scale=float(s))


def extract_patch(image, spec: PatchSpec, k) -> Patch:
    """Bilinear sampling of the image at the patch grid."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    grid = patch_grid(spec, k, (w, h))
    if not grid_in_bounds(grid, (w, h)):
        raise ContractError("patch grid leaves the image")
    fx = grid[..., 0] - 0.5
    fy = grid[..., 1] - 0.5
    ix = np.clip(np.floor(fx).astype(int), 0, w - 2)
    iy = np.clip(np.floor(fy).astype(int), 0, h - 2)
    wx = (fx - ix)[..., None]
    wy = (fy - iy)[..., None]
    out = (
        image[iy, ix] * (1 - wx) * (1 - wy)
        + image[iy, ix + 1] * wx * (1 - wy)
        + image[iy + 1, ix] * (1 - wx) * wy
        + image[iy + 1, ix + 1] * wx * wy
    )
    return Patch(pixels=out.astype(image.dtype))


# ---------------------------------------------------------------------------
# sampling along rays


def stratified_samples(ray: Ray, n, rng):
    """One uniform draw per equal sub-interval of [t_near, t_far]."""
    if n < 2:
        raise ContractError("need at least 2 samples")
    ts = stratified_ts(np.array([ray.t_near]), np.array([ray.t_far]), n, rng)
    return ts[0]


def stratified_ts(near, far, n, rng):
    r = len(near)
    u = rng.random((r, n))
    bins = np.arange(n)
    return near[:, None] + (bins[None, :] + u) * ((far - near) / n)[:, None]


# ---------------------------------------------------------------------------
# volume rendering


def compose_ray_colors(alphas, colors, background):
    """Front-to-back alpha compositing with residual background.

    Returns (pixel colors, transmittances T_i, weights, residual T_{N+1}).
    """
    keep = 1.0 - alphas
    cum = np.cumprod(keep, axis=1)
    r, n = alphas.shape
    trans = np.concatenate([np.ones((r, 1), dtype=alphas.dtype), cum[:, :-1]], axis=1)
    weights = trans * alphas
    residual = cum[:, -1]
    out = (weights[..., None] * colors).sum(axis=1) + residual[:, None] * background[None, :]
    return out, trans, weights, residual


def compose_ray_colors_t(alpha_t, rgb_t, background):
    """Graph twin of compose_ray_colors; returns (R,3) color tensor."""
    r, n = alpha_t.shape
    dt = alpha_t.dtype
    one = tape.constant(np.asarray(1.0, dtype=dt))
    trans = tape.constant(np.ones((r, 1), dtype=dt))
    acc = tape.constant(np.zeros((r, 3), dtype=dt))
    for i in range(n):
        a_i = tape.slice_(alpha_t, (slice(None), slice(i, i + 1)))
        c_i = tape.slice_(rgb_t, (slice(None), i, slice(None)))
        w_i = tape.mul(trans, a_i)
        acc = tape.add(acc, tape.mul(w_i, c_i))
        trans = tape.mul(trans, tape.sub(one, a_i))
    bg = tape.constant(np.asarray(background, dtype=dt).reshape(1, 3))
    return tape.add(acc, tape.mul(trans, bg))


def _deltas_from_ts(ts, t_far):
    d = np.diff(ts, axis=-1)
    last = np.maximum(t_far - ts[..., -1:], 1e-12)
    return np.concatenate([d, last], axis=-1)


def _alphas_from_field(vals, deltas, quantity):
    if quantity == "occupancy":
        if vals.min() < 0 or vals.max() > 1:
            raise EvaluationError("occupancy left [0,1]")
        return vals
    return np.asarray(sigma_to_alpha(vals, deltas), dtype=vals.dtype)


def render_rays(field, bundle: RayBundle, ts, codes, background=WHITE, quantity="occupancy"):
    """Render a bundle; ts is (R, N).  Returns colors plus compositing aux."""
    r, n = ts.shape
    pos = bundle.origins[:, None, :] + ts[..., None] * bundle.dirs[:, None, :]
    dirs = np.broadcast_to(bundle.dirs[:, None, :], pos.shape)
    rgb, vals = field.sample_batch(pos.reshape(-1, 3), dirs.reshape(-1, 3), codes, quantity=quantity)
    if not (np.all(np.isfinite(rgb)) and np.all(np.isfinite(vals))):
        raise EvaluationError("field produced non-finite output")
    deltas = _deltas_from_ts(ts, bundle.t_far[:, None])
    alphas = _alphas_from_field(vals.reshape(r, n), deltas, quantity)
    colors = rgb.reshape(r, n, 3)
    out, trans, weights, residual = compose_ray_colors(alphas, colors, np.asarray(background, dtype=rgb.dtype))
    return out, pos, deltas, alphas, trans, colors, residual


def render_ray(field, ray: Ray, ts, codes, background=WHITE, quantity="occupancy"):
    """Render one ray at the given ascending sample positions.

    Returns (color, RaySampleBatch).
    """
    ts = np.asarray(ts, dtype=float)
    if ts.ndim != 1 or len(ts) < 1:
        raise ContractError("ts must be a nonempty vector")
    if np.any(np.diff(ts) <= 0):
        raise ContractError("ts must be strictly increasing")
    if ts[0] < ray.t_near - 1e-9 or ts[-1] > ray.t_far + 1e-9:
        raise ContractError("ts must lie within ray bounds")
    bundle = RayBundle(
        origins=ray.origin[None, :],
        dirs=ray.direction[None, :],
        t_near=np.array([ray.t_near]),
        t_far=np.array([ray.t_far]),
    )
    out, pos, deltas, alphas, trans, colors, residual = render_rays(
        field, bundle, ts[None, :], codes, background, quantity
    )
    batch = RaySampleBatch(
        ts=ts,
        positions=pos[0],
        deltas=deltas[0],
        alphas=alphas[0],
        transmittances=trans[0],
        colors=colors[0],
        residual_transmittance=float(residual[0]),
    )
    return out[0], batch


def render_patch(
    field,
    pose: CameraPose,
    spec: PatchSpec,
    codes,
    n_samples,
    rng,
    background=WHITE,
    *,
    k,
    scene_bound=1.0,
    quantity="occupancy",
    ts_provider=None,
) -> Patch:
    """Render the K x K rays of the patch grid; the generator's output."""
    grid = patch_grid(spec, k, pose.size)
    if not grid_in_bounds(grid, pose.size):
        raise ContractError("patch grid leaves the image")
    bundle = ray_bundle(pose, grid.reshape(-1, 2), scene_bound)
    if ts_provider is not None:
        ts = ts_provider(bundle, rng)
    else:
        ts = stratified_ts(bundle.t_near, bundle.t_far, n_samples, rng)
    out = render_rays(field, bundle, ts, codes, background, quantity)[0]
    return Patch(pixels=np.clip(out, 0.0, 1.0).reshape(k, k, 3).astype(np.float32))
