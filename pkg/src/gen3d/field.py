"""Conditional neural field: position + view direction + latent codes in,
color and occupancy out.

Geometry is a function of (x, z_s) only; the color head additionally sees
the view direction and the appearance code z_a, so occupancy is independent
of appearance by construction.  Occupancy goes through a sigmoid and the 0.5
level set is the implicit surface.

The network is a two-branch coordinate MLP.  The trunk input is
[x, |x|, positional encoding of x, z_s]; including the radial distance lets
initialization realize an exact sphere: one "carry" unit per trunk layer
transports |x| unchanged, the occupancy head starts as
logit = sharpness * (radius - |x|), and every other path into the logit
starts at zero.  All z_s input weights start at zero as well, so the initial
surface is the same sphere for every shape code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import tape
from .diffcore.params import ParameterStore
from .diffcore.shaping import ShapedParams
from .errors import ContractError, EvaluationError

_RADIAL_EPS = 1e-12  # keeps d|x|/dx finite at the origin


@dataclass(frozen=True)
class FieldConfig:
    d_s: int = 64
    d_a: int = 64
    trunk_width: int = 128
    trunk_depth: int = 4
    head_width: int = 128
    head_depth: int = 1
    x_freqs: int = 8
    d_freqs: int = 4
    init_sphere_radius: float = 0.5
    init_sharpness: float = 10.0

    def __post_init__(self):
        if self.d_s < 1 or self.d_a < 1:
            raise ContractError("latent dims must be >= 1")
        if self.init_sphere_radius <= 0:
            raise ContractError("init_sphere_radius must be positive")
        if self.trunk_depth < 1 or self.head_depth < 1:
            raise ContractError("branch depth must be >= 1")
        if self.trunk_width < 2:
            raise ContractError("trunk_width must be >= 2")

    @property
    def x_enc_dim(self):
        return 4 + 6 * self.x_freqs  # x, |x|, sin/cos stack

    @property
    def d_enc_dim(self):
        return 3 + 6 * self.d_freqs

    @property
    def trunk_in(self):
        return self.x_enc_dim + self.d_s

    @property
    def head_in(self):
        return self.trunk_width + self.d_enc_dim + self.d_a


@dataclass(frozen=True)
class LatentCodes:
    z_s: np.ndarray
    z_a: np.ndarray

    def __post_init__(self):
        for name, z in (("z_s", self.z_s), ("z_a", self.z_a)):
            z = np.asarray(z)
            if z.ndim != 1 or not np.all(np.isfinite(z)):
                raise ContractError(f"{name} must be a finite vector")


@dataclass(frozen=True)
class FieldInput:
    x: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        d = np.asarray(self.d, dtype=float)
        if x.shape != (3,) or d.shape != (3,):
            raise ContractError("x and d must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ContractError("view direction must be unit length")


@dataclass(frozen=True)
class FieldSample:
    color: np.ndarray
    occupancy: float


def field_layout(cfg: FieldConfig):
    """Segment name -> shape map for a field parameter store."""
    layout = {}
    w = cfg.trunk_width
    in_dim = cfg.trunk_in
    for l in range(cfg.trunk_depth):
        layout[f"trunk.w{l}"] = (in_dim, w)
        layout[f"trunk.b{l}"] = (w,)
        in_dim = w
    layout["occ.w"] = (w, 1)
    layout["occ.b"] = (1,)
    in_dim = cfg.head_in
    for l in range(cfg.head_depth):
        layout[f"head.w{l}"] = (in_dim, cfg.head_width)
        layout[f"head.b{l}"] = (cfg.head_width,)
        in_dim = cfg.head_width
    layout["rgb.w"] = (cfg.head_width, 3)
    layout["rgb.b"] = (3,)
    return layout


def geometric_sphere_init(cfg: FieldConfig, rng_seed) -> ParameterStore:
    """Parameters whose initial occupancy is sigmoid(s * (r - |x|)).

    The sphere holds exactly for every shape code: the occupancy head reads
    only the carry unit, and all z_s input weights are zero.
    """
    rng = np.random.default_rng(rng_seed)
    layout = field_layout(cfg)
    names, values = [], []

    def he(shape):
        fan_in = shape[0] if len(shape) == 2 else shape[0]
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(np.float32)

    mats = {}
    for name, shape in layout.items():
        mats[name] = he(shape) if len(shape) == 2 else np.zeros(shape, dtype=np.float32)

    w0 = mats["trunk.w0"]
    w0[cfg.x_enc_dim:, :] = 0.0        # z_s conditioning starts silent
    w0[:, 0] = 0.0
    w0[3, 0] = 1.0                     # carry unit reads the radial feature
    for l in range(1, cfg.trunk_depth):
        wl = mats[f"trunk.w{l}"]
        wl[:, 0] = 0.0
        wl[0, 0] = 1.0
    occ_w = np.zeros(layout["occ.w"], dtype=np.float32)
    occ_w[0, 0] = -cfg.init_sharpness
    mats["occ.w"] = occ_w
    mats["occ.b"] = np.array([cfg.init_sharpness * cfg.init_sphere_radius], dtype=np.float32)

    for name in layout:
        names.append(name)
        values.append(mats[name].reshape(-1))
    return ParameterStore(names, values)


def sample_latents(rng, d_s, d_a) -> LatentCodes:
    """Draw (z_s, z_a) from the standard normal prior."""
    if d_s < 1 or d_a < 1:
        raise ContractError("latent dims must be >= 1")
    return LatentCodes(
        z_s=rng.standard_normal(d_s).astype(np.float32),
        z_a=rng.standard_normal(d_a).astype(np.float32),
    )


def sigma_to_alpha(sigma, delta):
    """alpha = 1 - exp(-sigma * delta); density-to-opacity bridge."""
    sigma = np.asarray(sigma, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(sigma < 0):
        raise ContractError("sigma must be nonnegative")
    if np.any(delta <= 0):
        raise ContractError("delta must be positive")
    out = -np.expm1(-sigma * delta)
    return out if out.ndim else float(out)


def sigma_to_alpha_t(sigma_t, delta_t):
    one = tape.constant(np.asarray(1.0, dtype=sigma_t.dtype))
    return tape.sub(one, tape.exp(tape.neg(tape.mul(sigma_t, delta_t))))


# ---------------------------------------------------------------------------
# forward passes (tensor graph; numpy callers wrap with constants)


def _encode(v_t, freqs, with_radial):
    dt = v_t.dtype
    parts = [v_t]
    if with_radial:
        sq = tape.sum_(tape.square(v_t), axis=1, keepdims=True)
        parts.append(tape.sqrt(tape.add(sq, tape.constant(np.asarray(_RADIAL_EPS, dtype=dt)))))
    for k in range(freqs):
        s = tape.constant(np.asarray(np.pi * (2.0**k), dtype=dt))
        scaled = tape.mul(v_t, s)
        parts.append(tape.sin(scaled))
        parts.append(tape.cos(scaled))
    return tape.concat(parts, axis=1)


def _broadcast_code(z_t, m):
    if z_t.ndim == 1:
        z_t = tape.reshape(z_t, (1, z_t.shape[0]))
    if z_t.shape[0] != m:
        z_t = tape.broadcast_to(z_t, (m, z_t.shape[1]))
    return z_t


def _mlp(h, pt, prefix, depth, slope=0.0):
    for l in range(depth):
        h = tape.add(tape.matmul(h, pt[f"{prefix}.w{l}"]), pt[f"{prefix}.b{l}"])
        h = tape.leaky_relu(h, slope)
    return h


def trunk_features_t(cfg, pt, x_t, zs_t):
    m = x_t.shape[0]
    h = tape.concat([_encode(x_t, cfg.x_freqs, with_radial=True), _broadcast_code(zs_t, m)], axis=1)
    return _mlp(h, pt, "trunk", cfg.trunk_depth)


def occupancy_logit_t(cfg, pt, x_t, zs_t):
    feat = trunk_features_t(cfg, pt, x_t, zs_t)
    logit = tape.add(tape.matmul(feat, pt["occ.w"]), pt["occ.b"])
    return tape.reshape(logit, (x_t.shape[0],)), feat


def forward_alpha_t(cfg, pt, x_t, zs_t):
    logit, _ = occupancy_logit_t(cfg, pt, x_t, zs_t)
    return tape.sigmoid(logit)


def forward_sigma_t(cfg, pt, x_t, zs_t):
    logit, _ = occupancy_logit_t(cfg, pt, x_t, zs_t)
    return tape.softplus(logit)


def forward_rgb_alpha_t(cfg, pt, x_t, d_t, zs_t, za_t, quantity="occupancy"):
    logit, feat = occupancy_logit_t(cfg, pt, x_t, zs_t)
    val = tape.sigmoid(logit) if quantity == "occupancy" else tape.softplus(logit)
    m = x_t.shape[0]
    h = tape.concat(
        [feat, _encode(d_t, cfg.d_freqs, with_radial=False), _broadcast_code(za_t, m)], axis=1
    )
    h = _mlp(h, pt, "head", cfg.head_depth)
    rgb = tape.sigmoid(tape.add(tape.matmul(h, pt["rgb.w"]), pt["rgb.b"]))
    return rgb, val


# ---------------------------------------------------------------------------


class NeuralField:
    """Config + parameter store, with numpy-facing evaluation helpers.

    The duck-typed surface used elsewhere in the package:
      alpha(x, z_s)          -> (M,) occupancy
      alpha_and_grad(x, z_s) -> occupancy and its spatial gradient
      sample_batch(x, d, codes, quantity) -> (rgb, value) arrays
    Analytic stand-in fields in the tests implement the same methods.
    """

    def __init__(self, config: FieldConfig, params: ParameterStore):
        self.config = config
        self.params = params
        self.layout = field_layout(config)

    def shaped(self, trainable=True):
        return ShapedParams(self.params, self.layout, trainable=trainable)

    def _const_pt(self):
        return ShapedParams(self.params, self.layout, trainable=False).t

    def alpha(self, x, z_s):
        x = np.atleast_2d(np.asarray(x, dtype=self.params.dtype))
        out = forward_alpha_t(
            self.config, self._const_pt(), tape.constant(x), tape.constant(np.asarray(z_s, dtype=x.dtype))
        )
        return out.data

    def sigma(self, x, z_s):
        x = np.atleast_2d(np.asarray(x, dtype=self.params.dtype))
        out = forward_sigma_t(
            self.config, self._const_pt(), tape.constant(x), tape.constant(np.asarray(z_s, dtype=x.dtype))
        )
        return out.data

    def alpha_and_grad(self, x, z_s):
        x = np.atleast_2d(np.asarray(x, dtype=self.params.dtype))
        x_t = tape.variable(x)
        alpha = forward_alpha_t(
            self.config, self._const_pt(), x_t, tape.constant(np.asarray(z_s, dtype=x.dtype))
        )
        (g,) = tape.grad(tape.sum_(alpha), [x_t])
        return alpha.data, g.data

    def sample_batch(self, x, d, codes: LatentCodes, quantity="occupancy"):
        dt = self.params.dtype
        x = np.atleast_2d(np.asarray(x, dtype=dt))
        d = np.atleast_2d(np.asarray(d, dtype=dt))
        rgb, val = forward_rgb_alpha_t(
            self.config,
            self._const_pt(),
            tape.constant(x),
            tape.constant(d),
            tape.constant(np.asarray(codes.z_s, dtype=dt)),
            tape.constant(np.asarray(codes.z_a, dtype=dt)),
            quantity=quantity,
        )
        return rgb.data, val.data

    def evaluate(self, inp: FieldInput, codes: LatentCodes) -> FieldSample:
        return evaluate_field(self.config, self.params, inp, codes)


def evaluate_field(cfg, params, inp: FieldInput, codes: LatentCodes) -> FieldSample:
    """Single-point field query with contract validation."""
    if codes.z_s.shape != (cfg.d_s,) or codes.z_a.shape != (cfg.d_a,):
        raise ContractError("latent code dims do not match config")
    field = NeuralField(cfg, params)
    rgb, alpha = field.sample_batch(inp.x, inp.d, codes)
    if not (np.all(np.isfinite(rgb)) and np.all(np.isfinite(alpha))):
        raise EvaluationError("field produced non-finite output")
    return FieldSample(color=rgb[0], occupancy=float(alpha[0]))
