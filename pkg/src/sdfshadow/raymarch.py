"""Sphere tracing and soft-shadow occlusion over a sampled distance field.

The march steps by min(sampled distance, max_step) and terminates on a sample
<= epsilon (hit), on leaving the scene (t > t_max) or at the iteration cap.
The occlusion estimate keeps the minimum cone term over the march; between
consecutive samples D_prev and D the closest approach is triangulated as

    y = D^2 / (2 * D_prev),  D_est = sqrt(D^2 - y^2),  t_est = t - y

with a plain D/t fallback when the construction is invalid (first sample,
non-decreasing D, or degenerate denominators).  The cone hardness is
k = 1 / tan(light_angle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit, prange

from .field import DistanceField, trilinear
from .rng import stream_key, uniform

STATUS_HIT = 0
STATUS_EXITED = 1
STATUS_MAX_ITER = 2

_STATUS_NAMES = {STATUS_HIT: "hit", STATUS_EXITED: "miss-exited",
                 STATUS_MAX_ITER: "miss-max-iter"}


@dataclass(frozen=True)
class MarchParams:
    epsilon: float = 0.01          # surface threshold, >= one fine voxel
    max_iterations: int = 256
    max_step: float = 0.05         # step cap; inf disables
    t_max: float = math.inf        # scene-bounds exit distance
    jitter: float = 1.0            # start offset amplitude in [0, 1) steps
    light_angle: float = 0.1       # penumbra cone half-angle (radians)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.max_step <= 0:
            raise ValueError("max_step must be > 0")
        if not 0.0 <= self.jitter <= 1.0:
            raise ValueError("jitter must be in [0, 1]")
        if not 0.0 < self.light_angle < math.pi / 2:
            raise ValueError("light_angle must be in (0, pi/2)")

    @property
    def cone_k(self) -> float:
        return 1.0 / math.tan(self.light_angle)

    @classmethod
    def for_field(cls, fine: DistanceField, **kw):
        """Defaults tied to a field: epsilon = one voxel (floor asserted)."""
        voxel = float(max(fine.cell_size))
        eps = kw.pop("epsilon", voxel)
        if eps < voxel:
            raise ValueError(
                f"epsilon {eps} below one voxel {voxel}; self-occlusion guard requires epsilon >= voxel")
        t_max = kw.pop("t_max", float(np.linalg.norm(fine.hi - fine.lo)))
        return cls(epsilon=eps, t_max=t_max, **kw)


@dataclass(frozen=True)
class MarchResult:
    status: str          # 'hit' | 'miss-exited' | 'miss-max-iter'
    t: float
    iterations: int
    occlusion: float     # 1.0 on hit; 1 - min cone term otherwise

    @property
    def hit(self):
        return self.status == "hit"


@njit(cache=True)
def _march(data, lox, loy, loz, hx, hy, hz,
           ox, oy, oz, dx, dy, dz,
           eps, max_iter, max_step, t_max, t0, k):
    """Shared march loop; returns (status, t, iterations, min cone term)."""
    t = t0
    min_term = 1.0
    prev_d = -1.0
    it = 0
    while it < max_iter:
        px = ox + t * dx
        py = oy + t * dy
        pz = oz + t * dz
        dist = trilinear(data, lox, loy, loz, hx, hy, hz, px, py, pz)
        it += 1
        if dist <= eps:
            return STATUS_HIT, t, it, 0.0
        if t > 0.0:
            term = k * dist / t
            if prev_d > 0.0 and dist < prev_d:
                y = dist * dist / (2.0 * prev_d)
                den = dist * dist - y * y
                te = t - y
                if den > 0.0 and te > 0.0:
                    term = k * math.sqrt(den) / te
            if term < min_term:
                min_term = max(term, 0.0)
        prev_d = dist
        step = dist if dist < max_step else max_step
        t += step
        if t > t_max:
            return STATUS_EXITED, t, it, min_term
    return STATUS_MAX_ITER, t, it, min_term


def sphere_trace(fld: DistanceField, origin, direction, params: MarchParams) -> MarchResult:
    """March from origin; origin outside the field bounds is an immediate miss."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"direction must be unit length, |d| = {norm}")
    if np.any(o < fld.lo) or np.any(o > fld.hi):
        return MarchResult("miss-exited", 0.0, 0, 0.0)
    h = fld.cell_size
    status, t, it, min_term = _march(
        fld.data, fld.lo[0], fld.lo[1], fld.lo[2], h[0], h[1], h[2],
        o[0], o[1], o[2], d[0], d[1], d[2],
        float(params.epsilon), int(params.max_iterations),
        float(params.max_step), float(params.t_max), 0.0, params.cone_k)
    occ = 1.0 if status == STATUS_HIT else 1.0 - min_term
    return MarchResult(_STATUS_NAMES[status], float(t), int(it), float(occ))


@njit(cache=True)
def _shadow_one(data, lox, loy, loz, hx, hy, hz,
                ox, oy, oz, dx, dy, dz,
                eps, max_iter, max_step, t_max, k, jitter, key, draw):
    t0 = jitter * max_step * uniform(key, draw)
    status, t, it, min_term = _march(
        data, lox, loy, loz, hx, hy, hz, ox, oy, oz, dx, dy, dz,
        eps, max_iter, max_step, t_max, t0, k)
    if status == STATUS_HIT:
        return 1.0
    return 1.0 - min_term


def soft_shadow(fld: DistanceField, point, light_dir, params: MarchParams,
                seed=0, stream=0, draws=1) -> float:
    """Occlusion in [0, 1] toward the light; mean over `draws` jittered starts.

    The caller is responsible for offsetting `point` off its surface (see
    render.shade: epsilon + cumulative bias along the normal plus one epsilon
    of clearance keeps the first sample out of the thickened surface band).
    """
    p = np.asarray(point, dtype=np.float64)
    l = np.asarray(light_dir, dtype=np.float64)
    l = l / np.linalg.norm(l)
    h = fld.cell_size
    key = stream_key(seed, stream, 0)
    total = 0.0
    for j in range(max(1, int(draws))):
        total += _shadow_one(
            fld.data, fld.lo[0], fld.lo[1], fld.lo[2], h[0], h[1], h[2],
            p[0], p[1], p[2], l[0], l[1], l[2],
            float(params.epsilon), int(params.max_iterations),
            float(params.max_step), float(params.t_max),
            params.cone_k, float(params.jitter), key, j)
    return total / max(1, int(draws))


def simulate_umbra(fld: DistanceField, point, light_center, light_radius,
                   params: MarchParams, samples=1, seed=0, stream=0) -> float:
    """Average occlusion over rays toward random points on a light disc.

    Experimental partial-umbra estimator, off by default in the pipeline.
    samples=1 marches straight at the light center.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    p = np.asarray(point, dtype=np.float64)
    c = np.asarray(light_center, dtype=np.float64)
    axis = c - p
    dist = np.linalg.norm(axis)
    if dist == 0:
        raise ValueError("light center coincides with the shaded point")
    axis = axis / dist
    if samples == 1:
        return soft_shadow(fld, p, axis, params, seed=seed, stream=stream, draws=1)
    # orthonormal frame around the axis
    up = np.array([0.0, 1.0, 0.0]) if abs(axis[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(axis, up)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(axis, t1)
    key = stream_key(seed, stream, 1)
    total = 0.0
    for s in range(samples):
        u = uniform(key, 2 * s)
        v = uniform(key, 2 * s + 1)
        r = light_radius * math.sqrt(u)
        phi = 2.0 * math.pi * v
        target = c + r * math.cos(phi) * t1 + r * math.sin(phi) * t2
        d = target - p
        d /= np.linalg.norm(d)
        total += soft_shadow(fld, p, d, params, seed=seed,
                             stream=stream * np.int64(1024) + s + 1, draws=1)
    return total / samples
