"""Explicit voxel radiance field with ray-marched volume rendering.

The grid stores unconstrained parameters on a lattice of nodes spanning the
field extent.  Density decodes through softplus and colour through the
logistic function; both are trilinearly interpolated after decoding.
Rendering returns, per ray, the composited colour, the beta variance
propagated from the per-sample compositing weights, and the residual
transmittance.  Gradients of the photometric loss are derived by hand.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"VXFIELD1"
EMPTY_DENSITY_PARAM = -40.0


class NumericError(ArithmeticError):
    """Non-finite loss or runaway training."""

    def __init__(self, message: str, ray_id: int | None = None):
        super().__init__(message)
        self.ray_id = ray_id


class CheckpointError(ValueError):
    pass


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30, y, np.log(np.expm1(np.clip(y, 1e-300, 30.0))))


# ---------------------------------------------------------------------------
# Field
# ---------------------------------------------------------------------------

@dataclass
class VoxelField:
    """Trainable voxel grid.

    Node ``(i, j, k)`` sits at ``lo + (i, j, k) * spacing`` so the lattice
    covers the extent exactly; every axis needs at least two nodes.
    """

    density_params: np.ndarray
    color_params: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.density_params = np.asarray(self.density_params, dtype=np.float64)
        self.color_params = np.asarray(self.color_params, dtype=np.float64)
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if self.density_params.ndim != 3 or min(self.density_params.shape) < 2:
            raise ValueError("density grid must be 3D with >= 2 nodes per axis")
        if self.color_params.shape != self.density_params.shape + (3,):
            raise ValueError("color grid must match density grid with 3 channels")
        if self.lo.shape != (3,) or self.hi.shape != (3,) or np.any(self.hi <= self.lo):
            raise ValueError("extent must be a non-empty 3D box")

    @classmethod
    def empty(cls, dims, lo=(-1, -1, -1), hi=(1, 1, 1)) -> "VoxelField":
        dims = tuple(int(d) for d in dims)
        return cls(np.full(dims, EMPTY_DENSITY_PARAM), np.zeros(dims + (3,)), lo, hi)

    @classmethod
    def random(cls, dims, lo=(-1, -1, -1), hi=(1, 1, 1), seed=0,
               density_mean=-2.0, scale=0.1) -> "VoxelField":
        rng = np.random.default_rng(seed)
        dims = tuple(int(d) for d in dims)
        return cls(density_mean + scale * rng.standard_normal(dims),
                   scale * rng.standard_normal(dims + (3,)), lo, hi)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.density_params.shape)

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.dims) - 1)

    def copy(self) -> "VoxelField":
        return VoxelField(self.density_params.copy(), self.color_params.copy(),
                          self.lo.copy(), self.hi.copy())

    def node_position(self, index) -> np.ndarray:
        return self.lo + np.asarray(index, dtype=np.float64) * self.spacing

    def decoded_table(self) -> np.ndarray:
        """Flat ``(n_nodes, 4)`` table of decoded ``[sigma, r, g, b]``."""
        sig = softplus(self.density_params).reshape(-1, 1)
        col = sigmoid(self.color_params).reshape(-1, 3)
        return np.hstack([sig, col])


def save_checkpoint(fld: VoxelField, path) -> None:
    """Write magic, dims (3 x uint32), extent (6 x float64), then float32 data."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<3I", *fld.dims))
        fh.write(struct.pack("<6d", *fld.lo, *fld.hi))
        fh.write(fld.density_params.astype("<f4").tobytes(order="C"))
        fh.write(fld.color_params.astype("<f4").tobytes(order="C"))


def load_checkpoint(path) -> VoxelField:
    raw = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC)
    if raw[:head] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a voxel field checkpoint")
    dims = struct.unpack_from("<3I", raw, head)
    extent = struct.unpack_from("<6d", raw, head + 12)
    n = int(np.prod(dims))
    offset = head + 12 + 48
    if len(raw) != offset + 16 * n:
        raise CheckpointError(f"{path}: truncated or oversized payload")
    dens = np.frombuffer(raw, "<f4", n, offset).reshape(dims)
    col = np.frombuffer(raw, "<f4", 3 * n, offset + 4 * n).reshape(dims + (3,))
    return VoxelField(dens.astype(np.float64), col.astype(np.float64), extent[:3], extent[3:])


# ---------------------------------------------------------------------------
# Cameras and rays
# ---------------------------------------------------------------------------

@dataclass
class Camera:
    position: np.ndarray
    forward: np.ndarray
    up: np.ndarray
    width: int
    height: int
    vfov: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        f = np.asarray(self.forward, dtype=np.float64)
        f = f / np.linalg.norm(f)
        u = np.asarray(self.up, dtype=np.float64)
        u = u - (u @ f) * f
        norm = np.linalg.norm(u)
        if norm < 1e-12:
            raise ValueError("camera up vector is parallel to forward")
        self.forward, self.up = f, u / norm
        if not 0.0 < self.vfov < math.pi:
            raise ValueError("vertical field of view must lie in (0, pi)")
        self.width, self.height = int(self.width), int(self.height)

    @classmethod
    def look_at(cls, position, target, width, height, vfov,
                world_up=(0.0, 0.0, 1.0)) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        world_up = np.asarray(world_up, dtype=np.float64)
        if np.linalg.norm(np.cross(forward, world_up)) < 1e-9 * np.linalg.norm(forward):
            world_up = np.array([0.0, 1.0, 0.0])
        return cls(position, forward, world_up, width, height, vfov)

    @property
    def right(self) -> np.ndarray:
        return np.cross(self.forward, self.up)

    def with_size(self, width: int, height: int) -> "Camera":
        return replace(self, width=width, height=height)

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions through pixel centres, row-major from the top."""
        half_h = math.tan(self.vfov / 2.0)
        half_w = half_h * self.width / self.height
        xs = ((np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0) * half_w
        ys = (1.0 - (np.arange(self.height) + 0.5) / self.height * 2.0) * half_h
        gx, gy = np.meshgrid(xs, ys)
        d = (self.forward[None, :] + gx.reshape(-1, 1) * self.right[None, :]
             + gy.reshape(-1, 1) * self.up[None, :])
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.broadcast_to(self.position, d.shape).copy(), d


def ray_box(origins, dirs, lo, hi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab intersection; returns ``t_near, t_far, hit`` with ``t_near >= 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    t_near = np.maximum(tmin.max(axis=1), 0.0)
    t_far = tmax.min(axis=1)
    hit = t_far > t_near
    return t_near, np.where(hit, t_far, t_near), hit


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------

_CORNERS = np.array(list(np.ndindex(2, 2, 2)))


def _interp_setup(fld: VoxelField, points: np.ndarray):
    """Corner indices ``(M, 8)`` and trilinear weights ``(M, 8)``.

    Points outside the extent get zero weights (empty space).
    """
    dims = np.array(fld.dims)
    u = (points - fld.lo) / fld.spacing
    inside = np.all((u >= 0.0) & (u <= dims - 1), axis=1)
    base = np.clip(np.floor(u), 0, dims - 2).astype(np.int64)
    frac = u - base
    strides = np.array([dims[1] * dims[2], dims[2], 1])
    idx = (base[:, 0] * strides[0] + base[:, 1] * strides[1] + base[:, 2])[:, None] \
        + (_CORNERS @ strides)[None, :]
    # per-axis [1 - f, f] factors; corner order matches _CORNERS (z fastest)
    f = np.stack([1.0 - frac, frac], axis=2)
    f[:, 0, :] *= inside[:, None]
    w = (f[:, 0, :, None, None] * f[:, 1, None, :, None] * f[:, 2, None, None, :]).reshape(-1, 8)
    return idx, w


def sample_field(fld: VoxelField, points) -> tuple[np.ndarray, np.ndarray]:
    """Decoded density and colour at arbitrary points, shape ``(M,)`` and ``(M, 3)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    idx, w = _interp_setup(fld, pts)
    vals = np.einsum("mk,mkc->mc", w, fld.decoded_table()[idx])
    return vals[:, 0], vals[:, 1:]


# ---------------------------------------------------------------------------
# Compositing
# ---------------------------------------------------------------------------

def ray_weights(sigmas, deltas) -> np.ndarray:
    """Compositing weights ``alpha_i = T_i (1 - exp(-sigma_i delta_i))``.

    Works on a single ray (1D) or a batch (last axis = samples).
    """
    s = np.asarray(sigmas, dtype=np.float64) * np.asarray(deltas, dtype=np.float64)
    excl = np.cumsum(s, axis=-1) - s
    return np.exp(-excl) * -np.expm1(-s)


def beta_variance(alphas) -> np.ndarray:
    """Per-sample variance ``-P log P`` with ``P = alpha / sum(alpha)``.

    Rows with no weight get zeros; the caller decides the empty-ray value.
    """
    a = np.asarray(alphas, dtype=np.float64)
    total = a.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(total > 0, a / total, 0.0)
        ent = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return ent


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 32
    term_tau: float = 1e-4
    empty_variance: float = 1.0 / math.e
    empty_eps: float = 1e-8
    background: tuple = (0.0, 0.0, 0.0)
    jitter: bool = False
    seed: int = 0
    chunk: int = 8192


@dataclass
class RayRender:
    """Per-ray outputs; arrays have a leading ray axis for batches."""

    mean: np.ndarray
    variance: np.ndarray
    transmittance_final: np.ndarray
    samples_used: np.ndarray


@dataclass
class _MarchCache:
    idx: np.ndarray
    w: np.ndarray
    colors: np.ndarray
    alphas: np.ndarray
    t_after: np.ndarray
    deltas: np.ndarray
    used: np.ndarray


def _march(fld, table, origins, dirs, t_near, t_far, cfg, rng, keep=False):
    r = len(origins)
    n = int(cfg.n_samples)
    width = (t_far - t_near) / n
    offs = rng.random((r, n)) if (cfg.jitter and rng is not None) else np.full((r, n), 0.5)
    t = t_near[:, None] + (np.arange(n)[None, :] + offs) * width[:, None]
    deltas = np.broadcast_to(width[:, None], (r, n))
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    idx, w = _interp_setup(fld, pts.reshape(-1, 3))
    vals = np.einsum("mk,mkc->mc", w, table[idx]).reshape(r, n, 4)
    sig, col = vals[..., 0], vals[..., 1:]

    s = sig * deltas
    cum = np.cumsum(s, axis=1)
    t_before = np.exp(-(cum - s))
    # stop marching once transmittance has dropped below term_tau
    used = t_before >= cfg.term_tau
    s = np.where(used, s, 0.0)
    cum = np.cumsum(s, axis=1)
    t_after = np.exp(-cum)
    alphas = np.where(used, np.exp(-(cum - s)) * -np.expm1(-s), 0.0)
    t_final = t_after[:, -1]

    bg = np.asarray(cfg.background, dtype=np.float64)
    total = alphas.sum(axis=1)
    empty = total <= cfg.empty_eps
    mean = np.einsum("rn,rnc->rc", alphas, col) + t_final[:, None] * bg[None, :]
    var = np.einsum("rn,rn->r", alphas ** 2, beta_variance(alphas))
    var = np.where(empty, cfg.empty_variance, var)
    mean = np.where(empty[:, None], bg[None, :], np.clip(mean, 0.0, 1.0))
    out = RayRender(mean, var, t_final, used.sum(axis=1))
    cache = _MarchCache(idx, w, col, alphas, t_after, deltas, used) if keep else None
    return out, cache


def render_rays(fld: VoxelField, origins, dirs, cfg: RenderConfig = RenderConfig(),
                rng=None, table=None) -> RayRender:
    """Render a batch of rays, sampling only the span inside the field extent."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    if table is None:
        table = fld.decoded_table()
    if rng is None and cfg.jitter:
        rng = np.random.default_rng(cfg.seed)
    t_near, t_far, _ = ray_box(origins, dirs, fld.lo, fld.hi)
    parts = []
    for start in range(0, len(origins), cfg.chunk):
        sl = slice(start, start + cfg.chunk)
        parts.append(_march(fld, table, origins[sl], dirs[sl], t_near[sl], t_far[sl], cfg, rng)[0])
    if not parts:
        return RayRender(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))
    return RayRender(*(np.concatenate([getattr(p, k) for p in parts])
                       for k in ("mean", "variance", "transmittance_final", "samples_used")))


def render_ray(fld: VoxelField, origin, direction, n_samples: int, t_near: float,
               t_far: float, term_tau: float = 1e-4, **cfg_kwargs) -> RayRender:
    """Render one ray over an explicit ``[t_near, t_far]`` interval."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not t_near < t_far:
        raise ValueError("t_near must be smaller than t_far")
    if not 0.0 <= term_tau < 1.0:
        raise ValueError("term_tau must lie in [0, 1)")
    cfg = RenderConfig(n_samples=n_samples, term_tau=term_tau, **cfg_kwargs)
    rng = np.random.default_rng(cfg.seed) if cfg.jitter else None
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    out, _ = _march(fld, fld.decoded_table(), np.asarray(origin, dtype=np.float64)[None],
                    d[None], np.array([t_near], dtype=np.float64),
                    np.array([t_far], dtype=np.float64), cfg, rng)
    return RayRender(out.mean[0], float(out.variance[0]),
                     float(out.transmittance_final[0]), int(out.samples_used[0]))


@dataclass
class RenderedView:
    mean_image: np.ndarray
    variance_image: np.ndarray
    transmittance: np.ndarray


def render_view(fld: VoxelField, camera: Camera, cfg: RenderConfig = RenderConfig()) -> RenderedView:
    origins, dirs = camera.rays()
    out = render_rays(fld, origins, dirs, cfg)
    h, w = camera.height, camera.width
    return RenderedView(out.mean.reshape(h, w, 3), out.variance.reshape(h, w),
                        out.transmittance_final.reshape(h, w))


# ---------------------------------------------------------------------------
# Loss, gradients, training
# ---------------------------------------------------------------------------

def _loss_grad_rays(fld, origins, dirs, targets, cfg, rng, table=None):
    """Summed squared error over rays and its gradient w.r.t. both parameter grids."""
    if table is None:
        table = fld.decoded_table()
    n_nodes = table.shape[0]
    g_table = np.zeros((n_nodes, 4))
    t_near, t_far, _ = ray_box(origins, dirs, fld.lo, fld.hi)
    loss = 0.0
    for start in range(0, len(origins), cfg.chunk):
        sl = slice(start, start + cfg.chunk)
        out, c = _march(fld, table, origins[sl], dirs[sl], t_near[sl], t_far[sl], cfg, rng, keep=True)
        # gradient flows through the unclamped composite, which already lies in [0, 1]
        bg = np.asarray(cfg.background, dtype=np.float64)
        pred = np.einsum("rn,rnc->rc", c.alphas, c.colors) + c.t_after[:, -1:] * bg
        resid = pred - targets[sl]
        per_ray = np.sum(resid ** 2, axis=1)
        bad = ~np.isfinite(per_ray)
        if np.any(bad):
            raise NumericError("non-finite photometric loss", ray_id=int(start + np.argmax(bad)))
        loss += float(per_ray.sum())
        g = 2.0 * resid
        ac = c.alphas[..., None] * c.colors
        suffix = np.cumsum(ac[:, ::-1], axis=1)[:, ::-1] - ac
        suffix += c.t_after[:, -1, None, None] * bg
        d_s = np.einsum("rnc,rc->rn", c.t_after[..., None] * c.colors - suffix, g)
        d_sigma = np.where(c.used, d_s * c.deltas, 0.0).reshape(-1)
        d_color = (c.alphas[..., None] * g[:, None, :]).reshape(-1, 3)
        flat_idx = c.idx.reshape(-1)
        flat_w = c.w.reshape(-1)
        g_table[:, 0] += np.bincount(flat_idx, flat_w * np.repeat(d_sigma, 8), n_nodes)
        for ch in range(3):
            g_table[:, 1 + ch] += np.bincount(flat_idx, flat_w * np.repeat(d_color[:, ch], 8), n_nodes)
    g_density = (g_table[:, 0] * sigmoid(fld.density_params).reshape(-1)).reshape(fld.dims)
    col = table[:, 1:]
    g_color = (g_table[:, 1:] * col * (1.0 - col)).reshape(fld.dims + (3,))
    return loss, g_density, g_color


def view_rays(views) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack ``(Camera, image)`` pairs into flat origin, direction and colour arrays."""
    os_, ds, cs = [], [], []
    for cam, img in views:
        o, d = cam.rays()
        img = np.asarray(img, dtype=np.float64)
        if img.shape != (cam.height, cam.width, 3):
            raise ValueError("ground-truth image does not match camera size")
        os_.append(o)
        ds.append(d)
        cs.append(img.reshape(-1, 3))
    return np.concatenate(os_), np.concatenate(ds), np.concatenate(cs)


def photometric_loss_and_grad(fld: VoxelField, views, cfg: RenderConfig = RenderConfig(),
                              ray_ids=None):
    """Loss ``sum_r ||C(r) - C_hat(r)||^2`` over all (or selected) rays of ``views``.

    Returns ``(loss, grad_density, grad_color)``.
    """
    if not views:
        raise ValueError("at least one view is required")
    origins, dirs, targets = view_rays(views)
    if ray_ids is not None:
        ray_ids = np.asarray(ray_ids)
        if ray_ids.size == 0:
            raise ValueError("ray batch must hold at least one ray")
        origins, dirs, targets = origins[ray_ids], dirs[ray_ids], targets[ray_ids]
    rng = np.random.default_rng(cfg.seed) if cfg.jitter else None
    return _loss_grad_rays(fld, origins, dirs, targets, cfg, rng)


@dataclass
class TrainConfig:
    iterations: int = 300
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_rays: int = 1024
    seed: int = 0
    optimizer: str = "adam"
    beta2: float = 0.999
    divergence_factor: float = 1e3
    render: RenderConfig = dc_field(default_factory=lambda: RenderConfig(jitter=True))


@dataclass
class OptimizerState:
    """Moment buffers carried across warm-started training calls."""

    m_density: np.ndarray | None = None
    m_color: np.ndarray | None = None
    v_density: np.ndarray | None = None
    v_color: np.ndarray | None = None
    step: int = 0


def train(fld: VoxelField, views, cfg: TrainConfig = TrainConfig(),
          state: OptimizerState | None = None, rays=None) -> list[float]:
    """Fit ``fld`` in place to ``views`` by stochastic first-order descent.

    Each iteration draws ``batch_rays`` pixels uniformly from all views.
    ``optimizer`` is ``"momentum"`` (heavy-ball gradient descent) or
    ``"adam"``; both use the batch-mean gradient.  Returns the per-iteration
    summed batch loss.  Raises :class:`NumericError` when the loss exceeds
    ``divergence_factor`` times its first value.
    """
    if cfg.iterations < 0:
        raise ValueError("iterations must be non-negative")
    if cfg.iterations == 0:
        return []
    if cfg.optimizer not in ("momentum", "adam"):
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    origins, dirs, targets = rays if rays is not None else view_rays(views)
    rng = np.random.default_rng(cfg.seed)
    state = state if state is not None else OptimizerState()
    if state.m_density is None:
        state.m_density = np.zeros_like(fld.density_params)
        state.m_color = np.zeros_like(fld.color_params)
        state.v_density = np.zeros_like(fld.density_params)
        state.v_color = np.zeros_like(fld.color_params)
    batch = min(cfg.batch_rays, len(origins))
    trace = []
    first = None
    for _ in range(cfg.iterations):
        ids = rng.integers(0, len(origins), size=batch)
        loss, gd, gc = _loss_grad_rays(fld, origins[ids], dirs[ids], targets[ids],
                                       cfg.render, rng)
        if first is None:
            first = max(loss, 1e-12)
        if loss > cfg.divergence_factor * first:
            raise NumericError(f"training diverged: loss {loss:.4g} vs initial {first:.4g}")
        trace.append(loss)
        gd /= batch
        gc /= batch
        state.step += 1
        if cfg.optimizer == "momentum":
            state.m_density = cfg.momentum * state.m_density - cfg.learning_rate * gd
            state.m_color = cfg.momentum * state.m_color - cfg.learning_rate * gc
            fld.density_params += state.m_density
            fld.color_params += state.m_color
        else:
            b1, b2 = cfg.momentum, cfg.beta2
            state.m_density = b1 * state.m_density + (1 - b1) * gd
            state.m_color = b1 * state.m_color + (1 - b1) * gc
            state.v_density = b2 * state.v_density + (1 - b2) * gd * gd
            state.v_color = b2 * state.v_color + (1 - b2) * gc * gc
            c1 = 1 - b1 ** state.step
            c2 = 1 - b2 ** state.step
            fld.density_params -= cfg.learning_rate * (state.m_density / c1) / (
                np.sqrt(state.v_density / c2) + 1e-8)
            fld.color_params -= cfg.learning_rate * (state.m_color / c1) / (
                np.sqrt(state.v_color / c2) + 1e-8)
    return trace
