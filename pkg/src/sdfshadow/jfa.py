"""3D jump flooding over voxel seeds, producing the coarse distance field.

Each pass queries the 27-point stencil (self plus +-offset per axis) and
adopts any strictly closer seed, with offsets n/2, n/4, ..., 1 where n is the
smallest power of two covering the largest grid dimension.  Distances are
measured between cell centers in world units so non-cubic grids and cells
work uniformly.  Passes are double-buffered pure functions, so results do not
depend on evaluation order or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .field import DistanceField, make_field

EMPTY = np.int32(-1)


class NoSeedsError(ValueError):
    pass


@dataclass(frozen=True)
class SeedGrid:
    """Per-cell closest-seed record; seeds are stored as linear cell indices."""

    seed: np.ndarray  # (nx, ny, nz) int32 linear index of best seed, EMPTY if none
    lo: np.ndarray
    hi: np.ndarray

    @property
    def dims(self):
        return self.seed.shape

    @property
    def cell_size(self):
        return (self.hi - self.lo) / np.array(self.seed.shape, dtype=np.float64)

    def seed_count(self):
        return int((self.seed != EMPTY).sum())


def jfa_init(voxels) -> SeedGrid:
    """Self-seed every occupied cell; error when the grid has no seeds."""
    occ = voxels.occupancy
    if not occ.any():
        raise NoSeedsError("voxel grid has no occupied cells")
    nx, ny, nz = occ.shape
    lin = np.arange(nx * ny * nz, dtype=np.int32).reshape(nx, ny, nz)
    seed = np.where(occ != 0, lin, EMPTY).astype(np.int32)
    return SeedGrid(seed=seed, lo=voxels.lo, hi=voxels.hi)


def jfa_offsets(dims):
    """Offset schedule n/2 ... 1 for n = smallest power of two >= max(dims)."""
    n = 1
    while n < max(dims):
        n *= 2
    offsets = []
    step = n // 2
    while step >= 1:
        offsets.append(step)
        step //= 2
    return offsets


@njit(cache=True, inline="always")
def _center_d2(i, j, k, si, sj, sk, hx, hy, hz):
    dx = (i - si) * hx
    dy = (j - sj) * hy
    dz = (k - sk) * hz
    return dx * dx + dy * dy + dz * dz


@njit(cache=True, parallel=True)
def _jfa_step_kernel(src, dst, offset, hx, hy, hz):
    nx, ny, nz = src.shape
    nyz = ny * nz
    for i in prange(nx):
        for j in range(ny):
            for k in range(nz):
                best = src[i, j, k]
                if best != EMPTY:
                    bi = best // nyz
                    bj = (best // nz) % ny
                    bk = best % nz
                    best_d2 = _center_d2(i, j, k, bi, bj, bk, hx, hy, hz)
                else:
                    bi = bj = bk = -1
                    best_d2 = 1e300
                for di in range(-1, 2):
                    qi = i + di * offset
                    if qi < 0 or qi >= nx:
                        continue
                    for dj in range(-1, 2):
                        qj = j + dj * offset
                        if qj < 0 or qj >= ny:
                            continue
                        for dk in range(-1, 2):
                            if di == 0 and dj == 0 and dk == 0:
                                continue
                            qk = k + dk * offset
                            if qk < 0 or qk >= nz:
                                continue
                            cand = src[qi, qj, qk]
                            if cand == EMPTY or cand == best:
                                continue
                            ci = cand // nyz
                            cj = (cand // nz) % ny
                            ck = cand % nz
                            d2 = _center_d2(i, j, k, ci, cj, ck, hx, hy, hz)
                            if d2 < best_d2:
                                best = cand
                                bi, bj, bk = ci, cj, ck
                                best_d2 = d2
                            elif d2 == best_d2 and best != EMPTY:
                                # tie: lexicographically smaller seed coordinate
                                if ci < bi or (ci == bi and (cj < bj or (cj == bj and ck < bk))):
                                    best = cand
                                    bi, bj, bk = ci, cj, ck
                dst[i, j, k] = best


def jfa_step(seeds: SeedGrid, offset: int) -> SeedGrid:
    """One flooding pass at `offset`; pure function of its input."""
    dims = seeds.dims
    # the schedule for non-power-of-two grids starts above max(dims)/2
    if not 1 <= offset <= jfa_offsets(dims)[0]:
        raise ValueError(f"offset {offset} out of range for dims {dims}")
    h = seeds.cell_size
    dst = np.empty_like(seeds.seed)
    _jfa_step_kernel(seeds.seed, dst, int(offset), h[0], h[1], h[2])
    return SeedGrid(seed=dst, lo=seeds.lo, hi=seeds.hi)


def jfa_run(voxels) -> SeedGrid:
    """Full schedule over a voxel grid; every cell ends with a seed record."""
    seeds = jfa_init(voxels)
    for offset in jfa_offsets(seeds.dims):
        seeds = jfa_step(seeds, offset)
    return seeds


@njit(cache=True, parallel=True)
def _seed_distance_kernel(seed, out, hx, hy, hz, beta):
    nx, ny, nz = seed.shape
    nyz = ny * nz
    for i in prange(nx):
        for j in range(ny):
            for k in range(nz):
                s = seed[i, j, k]
                si = s // nyz
                sj = (s // nz) % ny
                sk = s % nz
                out[i, j, k] = np.float32(
                    np.sqrt(_center_d2(i, j, k, si, sj, sk, hx, hy, hz)) - beta)


def seeds_to_sdf(seeds: SeedGrid, beta: float = 0.0, bounds=None) -> DistanceField:
    """World-unit distance to the recorded seed center, minus beta.

    Seed cells read exactly -beta; the surface is effectively thickened by
    beta.  `bounds`, when given, must match the grid the seeds were flooded on.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if bounds is not None:
        lo = np.asarray(bounds[0], dtype=np.float64)
        hi = np.asarray(bounds[1], dtype=np.float64)
        if not (np.allclose(lo, seeds.lo) and np.allclose(hi, seeds.hi)):
            raise ValueError("bounds differ from the seed grid's world box")
    if (seeds.seed == EMPTY).any():
        raise NoSeedsError("seed grid incomplete: flood before converting")
    h = seeds.cell_size
    out = np.empty(seeds.dims, dtype=np.float32)
    _seed_distance_kernel(seeds.seed, out, h[0], h[1], h[2], float(beta))
    return make_field(out, seeds.lo, seeds.hi, beta=beta)


def default_beta(voxels_or_seeds) -> float:
    """Half the coarse cell diagonal; opt-in thickening for the coarse field."""
    h = voxels_or_seeds.cell_size
    return 0.5 * float(np.linalg.norm(h))
