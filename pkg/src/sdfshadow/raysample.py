"""Fine-field construction: ray mask, random-direction sampling, sign voting
and temporal decay.

Only texels whose coarse sample is within the mask distance d are ray traced;
everywhere else the fine field takes the freshly flooded coarse value, which
is what kills ghosting outside the mask band.  Inside the band the value
follows the decay recurrence

    f_t = min(alpha * f_{t-1} + (1 - alpha) * c_t, r_t)   for c_t <= d
    f_t = c_t                                             for c_t >  d

applied to distance magnitudes; the sign comes from the accumulated
front/back hit vote.  r_t is the current frame's ray minimum, so stale values
decay toward the coarse blend target at rate alpha instead of sticking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from numba import njit, prange

from .field import DistanceField, make_field, trilinear
from .geometry import BvhIndex, _bvh_ray
from .rng import stream_key, unit_sphere_dir

INF = np.float32(np.inf)


@dataclass(frozen=True)
class SamplingParams:
    """Tunable constants for the fine-field update.

    rays_per_frame is x in the sweeps; mask_distance is d; decay_alpha is the
    previous-frame decay.  t_max caps ray length (scene diagonal when None).
    """

    rays_per_frame: int = 5
    mask_distance: float = 0.1
    decay_alpha: float = 0.95
    seed: int = 0
    t_max: float | None = None

    def __post_init__(self):
        if self.rays_per_frame < 0:
            raise ValueError("rays_per_frame must be >= 0")
        if self.mask_distance <= 0:
            raise ValueError("mask_distance must be > 0")
        if not 0.0 <= self.decay_alpha < 1.0:
            raise ValueError("decay_alpha must be in [0, 1)")


@dataclass
class AccumulatorField:
    """Per-texel running state: min hit distance, vote tallies, mask flag.

    min_dist uses +inf as the explicit "no hit yet" sentinel and is finite
    iff front + back > 0.  State resets whenever a texel's coarse value
    crosses the mask distance between frames, so vacated texels cannot keep
    stale votes forever.
    """

    min_dist: np.ndarray  # (fx, fy, fz) float32, +inf sentinel
    front: np.ndarray     # int32
    back: np.ndarray      # int32
    mask: np.ndarray      # bool, current frame
    frames_seen: int = 0

    @classmethod
    def empty(cls, fine_dims):
        fine_dims = tuple(int(n) for n in fine_dims)
        return cls(
            min_dist=np.full(fine_dims, INF, dtype=np.float32),
            front=np.zeros(fine_dims, dtype=np.int32),
            back=np.zeros(fine_dims, dtype=np.int32),
            mask=np.zeros(fine_dims, dtype=bool),
        )


def _check_fine_dims(coarse: DistanceField, fine_dims):
    fine_dims = tuple(int(n) for n in fine_dims)
    for f, c in zip(fine_dims, coarse.dims):
        if f % c != 0:
            raise ValueError(
                f"fine dims {fine_dims} must be integer multiples of coarse dims {coarse.dims}")
    return fine_dims


@njit(cache=True, parallel=True)
def _coarse_at_fine_kernel(cdata, clo_x, clo_y, clo_z, chx, chy, chz,
                           flo_x, flo_y, flo_z, fhx, fhy, fhz, d,
                           out, out_mask):
    nx, ny, nz = out.shape
    for i in prange(nx):
        px = flo_x + (i + 0.5) * fhx
        for j in range(ny):
            py = flo_y + (j + 0.5) * fhy
            for k in range(nz):
                pz = flo_z + (k + 0.5) * fhz
                v = trilinear(cdata, clo_x, clo_y, clo_z,
                              chx, chy, chz, px, py, pz)
                out[i, j, k] = v
                out_mask[i, j, k] = v <= d


def _resample_and_mask(coarse: DistanceField, fine_dims, d: float):
    fine_dims = _check_fine_dims(coarse, fine_dims)
    ch = coarse.cell_size
    fh = (coarse.hi - coarse.lo) / np.array(fine_dims, dtype=np.float64)
    out = np.empty(fine_dims, dtype=np.float32)
    mask = np.empty(fine_dims, dtype=np.bool_)
    _coarse_at_fine_kernel(coarse.data,
                           coarse.lo[0], coarse.lo[1], coarse.lo[2],
                           ch[0], ch[1], ch[2],
                           coarse.lo[0], coarse.lo[1], coarse.lo[2],
                           fh[0], fh[1], fh[2], float(d), out, mask)
    return out, mask


def coarse_at_fine(coarse: DistanceField, fine_dims) -> np.ndarray:
    """Trilinear resample of the coarse field at every fine texel center."""
    return _resample_and_mask(coarse, fine_dims, np.inf)[0]


def ray_mask(coarse: DistanceField, fine_dims, d: float) -> np.ndarray:
    """Boolean mask of fine texels whose coarse sample is <= d."""
    return _resample_and_mask(coarse, fine_dims, d)[1]


@njit(cache=True)
def _sample_rays(node_lo, node_hi, node_left, node_right, order,
                 tri_a, tri_e1, tri_e2, tri_n,
                 px, py, pz, x, key, t_max, stack):
    """Shoot x uniform-sphere rays from one point; (min_dist, front, back)."""
    best = np.inf
    front = 0
    back = 0
    for r in range(x):
        dx, dy, dz = unit_sphere_dir(key, r)
        t, tid, facing = _bvh_ray(node_lo, node_hi, node_left, node_right, order,
                                  tri_a, tri_e1, tri_e2, tri_n,
                                  px, py, pz, dx, dy, dz, t_max, stack)
        if tid >= 0:
            if t < best:
                best = t
            if facing == 1:
                front += 1
            else:
                back += 1
    return best, front, back


@njit(cache=True, parallel=True)
def _sample_masked_kernel(node_lo, node_hi, node_left, node_right, order,
                          tri_a, tri_e1, tri_e2, tri_n,
                          idx, lo_x, lo_y, lo_z, hx, hy, hz, ny, nz,
                          x, seed, frame, t_max, out_min, out_front, out_back):
    nyz = ny * nz
    for n in prange(idx.shape[0]):
        stack = np.empty(128, dtype=np.int32)
        lin = idx[n]
        i = lin // nyz
        j = (lin // nz) % ny
        k = lin % nz
        px = lo_x + (i + 0.5) * hx
        py = lo_y + (j + 0.5) * hy
        pz = lo_z + (k + 0.5) * hz
        key = stream_key(seed, lin, frame)
        best, front, back = _sample_rays(
            node_lo, node_hi, node_left, node_right, order,
            tri_a, tri_e1, tri_e2, tri_n, px, py, pz, x, key, t_max, stack)
        out_min[n] = best
        out_front[n] = front
        out_back[n] = back


def sample_texel(bvh: BvhIndex, center, x: int, seed=0, stream=0, frame=0):
    """Ray-sample one texel: (min hit distance or None, front hits, back hits).

    Directions are uniform on the unit sphere from the stream keyed by
    (seed, stream, frame); misses are ignored.
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    c = np.asarray(center, dtype=np.float64)
    key = stream_key(seed, stream, frame)
    stack = np.empty(128, dtype=np.int32)
    best, front, back = _sample_rays(
        bvh.node_lo, bvh.node_hi, bvh.node_left, bvh.node_right, bvh.order,
        bvh.tri_a, bvh.tri_e1, bvh.tri_e2, bvh.tri_n,
        c[0], c[1], c[2], int(x), key, np.inf, stack)
    return (None if math.isinf(best) else float(best)), int(front), int(back)


def resolve_sign(min_dist, front: int, back: int):
    """Negative iff back hits outnumber front hits; sentinel passes through."""
    if min_dist is None:
        return None
    if math.isinf(min_dist):
        return min_dist
    return -min_dist if back > front else min_dist


def accumulate(f_prev: float, c_t: float, r_t, params: SamplingParams) -> float:
    """One decay step; r_t of None (no hit this frame) acts as +inf."""
    r = math.inf if r_t is None else float(r_t)
    if c_t <= params.mask_distance:
        a = params.decay_alpha
        return min(a * float(f_prev) + (1.0 - a) * float(c_t), r)
    return float(c_t)


@njit(cache=True, parallel=True)
def _update_masked_kernel(prev, c_fine, mask_old,
                          run_min, front, back,
                          samp_idx, samp_min, samp_front, samp_back,
                          alpha, out):
    """Decay recurrence on masked texels only; out already holds c_fine."""
    ny = out.shape[1]
    nz = out.shape[2]
    nyz = ny * nz
    for n in prange(samp_idx.shape[0]):
        lin = samp_idx[n]
        i = lin // nyz
        j = (lin // nz) % ny
        k = lin % nz
        if not mask_old[i, j, k]:  # entered the band: stale state resets
            run_min[i, j, k] = np.inf
            front[i, j, k] = 0
            back[i, j, k] = 0
        m = samp_min[n]
        if m < run_min[i, j, k]:
            run_min[i, j, k] = np.float32(m)
        front[i, j, k] += samp_front[n]
        back[i, j, k] += samp_back[n]
        c = c_fine[i, j, k]
        blend = alpha * abs(prev[i, j, k]) + (1.0 - alpha) * c
        mag = blend if blend < m else m
        if back[i, j, k] > front[i, j, k]:
            out[i, j, k] = np.float32(-mag)
        else:
            out[i, j, k] = np.float32(mag)


def update_fine(prev: DistanceField, coarse: DistanceField, bvh: BvhIndex,
                params: SamplingParams, frame: int,
                accum: AccumulatorField | None = None):
    """One frame of fine-field refinement.

    Returns (fine DistanceField, AccumulatorField).  `prev` must share bounds
    with `coarse` and is typically the previous frame's output (or the coarse
    field resampled, for frame 0).  Deterministic for fixed (seed, frame)
    regardless of worker count.
    """
    fine_dims = _check_fine_dims(coarse, prev.dims)
    if accum is None:
        accum = AccumulatorField.empty(fine_dims)
    if not np.allclose(prev.lo, coarse.lo) or not np.allclose(prev.hi, coarse.hi):
        raise ValueError("prev and coarse fields must share world bounds")

    c_fine, mask_new = _resample_and_mask(coarse, fine_dims, params.mask_distance)
    mask_old = accum.mask

    masked_idx = np.flatnonzero(mask_new.ravel()).astype(np.int64)
    x = int(params.rays_per_frame)
    t_max = params.t_max
    if t_max is None:
        t_max = float(np.linalg.norm(coarse.hi - coarse.lo))

    samp_min = np.empty(len(masked_idx), dtype=np.float64)
    samp_front = np.zeros(len(masked_idx), dtype=np.int32)
    samp_back = np.zeros(len(masked_idx), dtype=np.int32)
    if x > 0 and len(masked_idx):
        fh = (coarse.hi - coarse.lo) / np.array(fine_dims, dtype=np.float64)
        _sample_masked_kernel(
            bvh.node_lo, bvh.node_hi, bvh.node_left, bvh.node_right, bvh.order,
            bvh.tri_a, bvh.tri_e1, bvh.tri_e2, bvh.tri_n,
            masked_idx,
            coarse.lo[0], coarse.lo[1], coarse.lo[2],
            fh[0], fh[1], fh[2], fine_dims[1], fine_dims[2],
            x, params.seed, int(frame), t_max,
            samp_min, samp_front, samp_back)
    else:
        samp_min.fill(np.inf)

    # unmasked texels take the fresh coarse value; any that just left the
    # band lose their stale votes and running minimum
    out = c_fine.copy()
    left = mask_old & ~mask_new
    if left.any():
        accum.min_dist[left] = INF
        accum.front[left] = 0
        accum.back[left] = 0
    _update_masked_kernel(prev.data, c_fine, mask_old,
                          accum.min_dist, accum.front, accum.back,
                          masked_idx, samp_min, samp_front, samp_back,
                          float(params.decay_alpha), out)

    accum.mask = mask_new
    accum.frames_seen += 1
    fine = make_field(out, coarse.lo, coarse.hi, beta=coarse.beta,
                      bias=prev.bias, frame=int(frame))
    return fine, accum


def fine_from_coarse(coarse: DistanceField, fine_dims) -> DistanceField:
    """Frame-0 initialization: the coarse field resampled at fine resolution."""
    data = coarse_at_fine(coarse, fine_dims)
    return make_field(data, coarse.lo, coarse.hi, beta=coarse.beta, frame=0)


def masked_count(coarse: DistanceField, fine_dims, d: float) -> int:
    return int(ray_mask(coarse, fine_dims, d).sum())
