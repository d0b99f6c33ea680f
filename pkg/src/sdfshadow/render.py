"""Reference renderer: G-buffer ray casting, deferred shading with
sphere-traced soft shadows, and a distributed ray-traced ground truth.

Primary visibility is ray cast against the BVH (one exact code path instead
of a rasterizer).  Shading is Lambertian direct light times (1 - occlusion).
Shadow-ray jitter streams are keyed per pixel, not per frame, so a static
camera over a static field renders stably frame to frame.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit, prange

from .field import DistanceField, trilinear
from .geometry import _bvh_ray
from .raymarch import MarchParams, _shadow_one
from .rng import stream_key, uniform


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple
    up: tuple = (0.0, 1.0, 0.0)
    vfov_deg: float = 45.0
    width: int = 320
    height: int = 240

    def basis(self):
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return pos, fwd, right, up


@dataclass(frozen=True)
class DirectionalLight:
    """Directional light; `direction` points from the scene toward the light."""

    direction: tuple
    angular_radius: float = 0.1

    def unit(self):
        d = np.asarray(self.direction, dtype=np.float64)
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class DiscLight:
    center: tuple
    radius: float
    normal: tuple = (0.0, -1.0, 0.0)


@dataclass
class GBuffer:
    position: np.ndarray  # (H, W, 3) float64
    normal: np.ndarray    # (H, W, 3) float64
    albedo: np.ndarray    # (H, W, 3) float32
    coverage: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.coverage.shape


@njit(cache=True, parallel=True)
def _gbuffer_kernel(node_lo, node_hi, node_left, node_right, order,
                    tri_a, tri_e1, tri_e2, tri_n,
                    normals_orig, albedo_orig,
                    pos, fwd, right, up, half_w, half_h, width, height,
                    out_pos, out_nrm, out_alb, out_cov):
    for py in prange(height):
        stack = np.empty(128, dtype=np.int32)
        sy = 1.0 - 2.0 * (py + 0.5) / height
        for px in range(width):
            sx = 2.0 * (px + 0.5) / width - 1.0
            dx = fwd[0] + sx * half_w * right[0] + sy * half_h * up[0]
            dy = fwd[1] + sx * half_w * right[1] + sy * half_h * up[1]
            dz = fwd[2] + sx * half_w * right[2] + sy * half_h * up[2]
            inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
            dx *= inv
            dy *= inv
            dz *= inv
            t, tid, facing = _bvh_ray(node_lo, node_hi, node_left, node_right,
                                      order, tri_a, tri_e1, tri_e2, tri_n,
                                      pos[0], pos[1], pos[2], dx, dy, dz,
                                      np.inf, stack)
            if tid < 0:
                out_cov[py, px] = False
            else:
                out_cov[py, px] = True
                out_pos[py, px, 0] = pos[0] + t * dx
                out_pos[py, px, 1] = pos[1] + t * dy
                out_pos[py, px, 2] = pos[2] + t * dz
                out_nrm[py, px, 0] = normals_orig[tid, 0]
                out_nrm[py, px, 1] = normals_orig[tid, 1]
                out_nrm[py, px, 2] = normals_orig[tid, 2]
                out_alb[py, px, 0] = albedo_orig[tid, 0]
                out_alb[py, px, 1] = albedo_orig[tid, 1]
                out_alb[py, px, 2] = albedo_orig[tid, 2]


def rasterize_gbuffer(view, camera: Camera) -> GBuffer:
    """Primary visibility by closest-hit ray casting; deterministic."""
    bvh = view.bvh
    h, w = camera.height, camera.width
    pos, fwd, right, up = camera.basis()
    half_h = math.tan(math.radians(camera.vfov_deg) * 0.5)
    half_w = half_h * w / h
    out_pos = np.zeros((h, w, 3), dtype=np.float64)
    out_nrm = np.zeros((h, w, 3), dtype=np.float64)
    out_alb = np.zeros((h, w, 3), dtype=np.float32)
    out_cov = np.zeros((h, w), dtype=np.bool_)
    _gbuffer_kernel(bvh.node_lo, bvh.node_hi, bvh.node_left, bvh.node_right,
                    bvh.order, bvh.tri_a, bvh.tri_e1, bvh.tri_e2, bvh.tri_n,
                    bvh.mesh.normals, view.albedo,
                    pos, fwd, right, up, half_w, half_h, w, h,
                    out_pos, out_nrm, out_alb, out_cov)
    return GBuffer(out_pos, out_nrm, out_alb, out_cov)


@njit(cache=True, parallel=True)
def _occlusion_kernel(data, lox, loy, loz, hx, hy, hz,
                      g_pos, g_nrm, g_cov, lx, ly, lz,
                      eps, max_iter, max_step, t_max, k, jitter,
                      offset, draws, seed, out_occ):
    height, width = g_cov.shape
    for py in prange(height):
        for px in range(width):
            if not g_cov[py, px]:
                out_occ[py, px] = 0.0
                continue
            ox = g_pos[py, px, 0] + offset * g_nrm[py, px, 0]
            oy = g_pos[py, px, 1] + offset * g_nrm[py, px, 1]
            oz = g_pos[py, px, 2] + offset * g_nrm[py, px, 2]
            key = stream_key(seed, py * width + px, 0)
            total = 0.0
            for j in range(draws):
                total += _shadow_one(data, lox, loy, loz, hx, hy, hz,
                                     ox, oy, oz, lx, ly, lz,
                                     eps, max_iter, max_step, t_max, k,
                                     jitter, key, j)
            out_occ[py, px] = total / draws


def occlusion_image(gbuffer: GBuffer, fld: DistanceField, light: DirectionalLight,
                    params: MarchParams, draws=1, seed=0) -> np.ndarray:
    """Per-pixel soft-shadow occlusion toward the light, averaged over draws.

    Shadow origins sit off the surface by epsilon + one epsilon of clearance
    plus the field's cumulative bias, along the geometric normal, keeping the
    first march sample out of the thickened surface band.
    """
    h = fld.cell_size
    l = light.unit()
    offset = 2.0 * params.epsilon + fld.bias
    out = np.zeros(gbuffer.shape, dtype=np.float64)
    _occlusion_kernel(fld.data, fld.lo[0], fld.lo[1], fld.lo[2],
                      h[0], h[1], h[2],
                      gbuffer.position, gbuffer.normal, gbuffer.coverage,
                      l[0], l[1], l[2],
                      float(params.epsilon), int(params.max_iterations),
                      float(params.max_step), float(params.t_max),
                      params.cone_k, float(params.jitter),
                      offset, max(1, int(draws)), int(seed), out)
    return out


def shade(gbuffer: GBuffer, fld: DistanceField, light: DirectionalLight,
          params: MarchParams, draws=1, seed=0,
          background=(0.05, 0.07, 0.10)) -> np.ndarray:
    """Lambertian direct light x (1 - occlusion); sky pixels get background."""
    occ = occlusion_image(gbuffer, fld, light, params, draws=draws, seed=seed)
    return compose(gbuffer, occ, light, background)


def compose(gbuffer: GBuffer, occlusion: np.ndarray, light: DirectionalLight,
            background=(0.05, 0.07, 0.10)) -> np.ndarray:
    l = light.unit()
    lambert = np.clip(np.einsum("hwc,c->hw", gbuffer.normal, l), 0.0, None)
    img = gbuffer.albedo.astype(np.float64) * (lambert * (1.0 - occlusion))[..., None]
    img[~gbuffer.coverage] = np.asarray(background, dtype=np.float64)
    return img.astype(np.float32)


@njit(cache=True, parallel=True)
def _reference_kernel(node_lo, node_hi, node_left, node_right, order,
                      tri_a, tri_e1, tri_e2, tri_n,
                      g_pos, g_nrm, g_cov,
                      lx, ly, lz, t1x, t1y, t1z, t2x, t2y, t2z,
                      tan_r, spp, seed, out_vis):
    height, width = g_cov.shape
    for py in prange(height):
        stack = np.empty(128, dtype=np.int32)
        for px in range(width):
            if not g_cov[py, px]:
                out_vis[py, px] = 1.0
                continue
            ox = g_pos[py, px, 0] + 1e-4 * g_nrm[py, px, 0]
            oy = g_pos[py, px, 1] + 1e-4 * g_nrm[py, px, 1]
            oz = g_pos[py, px, 2] + 1e-4 * g_nrm[py, px, 2]
            key = stream_key(seed, py * width + px, 1)
            open_count = 0
            for s in range(spp):
                u = uniform(key, 2 * s)
                v = uniform(key, 2 * s + 1)
                r = tan_r * math.sqrt(u)
                phi = 2.0 * math.pi * v
                dx = lx + r * (math.cos(phi) * t1x + math.sin(phi) * t2x)
                dy = ly + r * (math.cos(phi) * t1y + math.sin(phi) * t2y)
                dz = lz + r * (math.cos(phi) * t1z + math.sin(phi) * t2z)
                inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
                t, tid, facing = _bvh_ray(
                    node_lo, node_hi, node_left, node_right, order,
                    tri_a, tri_e1, tri_e2, tri_n,
                    ox, oy, oz, dx * inv, dy * inv, dz * inv, np.inf, stack)
                if tid < 0:
                    open_count += 1
            out_vis[py, px] = open_count / spp


def reference_visibility(view, gbuffer: GBuffer, light: DirectionalLight,
                         spp=256, seed=0) -> np.ndarray:
    """Fraction of unoccluded cone-sampled shadow rays per pixel."""
    if spp < 1:
        raise ValueError("spp must be >= 1")
    bvh = view.bvh
    l = light.unit()
    up = np.array([0.0, 1.0, 0.0]) if abs(l[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(l, up)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(l, t1)
    out = np.ones(gbuffer.shape, dtype=np.float64)
    _reference_kernel(bvh.node_lo, bvh.node_hi, bvh.node_left, bvh.node_right,
                      bvh.order, bvh.tri_a, bvh.tri_e1, bvh.tri_e2, bvh.tri_n,
                      gbuffer.position, gbuffer.normal, gbuffer.coverage,
                      l[0], l[1], l[2], t1[0], t1[1], t1[2], t2[0], t2[1], t2[2],
                      math.tan(light.angular_radius), int(spp), int(seed), out)
    return out


def reference_render(view, camera: Camera, light: DirectionalLight,
                     spp=256, seed=0, background=(0.05, 0.07, 0.10)):
    """Distributed ray-traced ground truth with the same Lambert shading."""
    gb = rasterize_gbuffer(view, camera)
    vis = reference_visibility(view, gb, light, spp=spp, seed=seed)
    return compose(gb, 1.0 - vis, light, background)


def compare(image_a, image_b, mask=None) -> dict:
    """RMSE / MAE / max error in linear radiance over masked (or all) pixels."""
    a = np.asarray(image_a, dtype=np.float64)
    b = np.asarray(image_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    diff = a - b
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != a.shape[: m.ndim]:
            raise ValueError("mask dims do not match image")
        diff = diff[m]
    if diff.size == 0:
        raise ValueError("empty comparison region")
    return {
        "rmse": float(np.sqrt(np.mean(diff ** 2))),
        "mae": float(np.mean(np.abs(diff))),
        "max": float(np.max(np.abs(diff))),
    }


# ---------------------------------------------------------------------------
# image IO: linear-light PFM plus 8-bit tonemapped PPM previews
# ---------------------------------------------------------------------------

def write_pfm(path, image):
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        header = b"Pf\n"
        img = img[:, :, None]
    elif img.ndim == 3 and img.shape[2] == 3:
        header = b"PF\n"
    else:
        raise ValueError("PFM supports (H, W) or (H, W, 3) images")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")  # little endian
        fh.write(np.flipud(img).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ValueError(f"not a PFM file: {kind!r}")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        count = w * h * (3 if kind == b"PF" else 1)
        data = np.frombuffer(fh.read(count * 4),
                             dtype="<f4" if scale < 0 else ">f4")
        if data.size != count:
            raise ValueError("truncated PFM payload")
    img = data.reshape((h, w, 3) if kind == b"PF" else (h, w))
    return np.ascontiguousarray(np.flipud(img)).astype(np.float32)


def write_ppm(path, image, gamma=2.2):
    """8-bit tonemapped preview (gamma 2.2); accepts (H, W) or (H, W, 3)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    img = np.clip(img, 0.0, 1.0) ** (1.0 / gamma)
    data = (img * 255.0 + 0.5).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())
