"""Conservative surface voxelization via exact separating-axis triangle/box tests.

A cell is occupied iff at least one triangle geometrically overlaps its box,
so every surface point is guaranteed to lie inside an occupied cell even for
surfaces much thinner than a cell.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numba import njit, prange


class VoxelizeError(ValueError):
    pass


class OutOfBoundsError(VoxelizeError):
    def __init__(self, triangle_ids):
        ids = list(triangle_ids)
        shown = ", ".join(str(i) for i in ids[:16])
        more = "" if len(ids) <= 16 else f" (+{len(ids) - 16} more)"
        super().__init__(f"triangles outside voxel bounds: {shown}{more}")
        self.triangle_ids = ids


@dataclass(frozen=True)
class VoxelGrid:
    occupancy: np.ndarray  # (nx, ny, nz) uint8, 1 = occupied
    lo: np.ndarray         # (3,) float64
    hi: np.ndarray         # (3,) float64

    @property
    def dims(self):
        return self.occupancy.shape

    @property
    def cell_size(self):
        return (self.hi - self.lo) / np.array(self.occupancy.shape, dtype=np.float64)

    @property
    def count(self):
        return int(self.occupancy.sum())


@njit(cache=True, inline="always")
def _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z,
               ax, ay, az, ex, ey, ez):
    """Project triangle and box extents on one axis; True if separated."""
    p0 = v0x * ax + v0y * ay + v0z * az
    p1 = v1x * ax + v1y * ay + v1z * az
    p2 = v2x * ax + v2y * ay + v2z * az
    r = ex * abs(ax) + ey * abs(ay) + ez * abs(az)
    mn = min(p0, min(p1, p2))
    mx = max(p0, max(p1, p2))
    return mn > r or mx < -r


@njit(cache=True)
def tri_box_overlap(v0, v1, v2, center, half):
    """Exact SAT triangle/AABB overlap (13 axes)."""
    v0x = v0[0] - center[0]
    v0y = v0[1] - center[1]
    v0z = v0[2] - center[2]
    v1x = v1[0] - center[0]
    v1y = v1[1] - center[1]
    v1z = v1[2] - center[2]
    v2x = v2[0] - center[0]
    v2y = v2[1] - center[1]
    v2z = v2[2] - center[2]
    ex, ey, ez = half[0], half[1], half[2]

    # box face normals: plain AABB overlap
    if min(v0x, min(v1x, v2x)) > ex or max(v0x, max(v1x, v2x)) < -ex:
        return False
    if min(v0y, min(v1y, v2y)) > ey or max(v0y, max(v1y, v2y)) < -ey:
        return False
    if min(v0z, min(v1z, v2z)) > ez or max(v0z, max(v1z, v2z)) < -ez:
        return False

    e0x, e0y, e0z = v1x - v0x, v1y - v0y, v1z - v0z
    e1x, e1y, e1z = v2x - v1x, v2y - v1y, v2z - v1z
    e2x, e2y, e2z = v0x - v2x, v0y - v2y, v0z - v2z

    # 9 edge cross-product axes
    if _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, 0.0, -e0z, e0y, ex, ey, ez):
        return False
    if _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, 0.0, -e1z, e1y, ex, ey, ez):
        return False
    if _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, 0.0, -e2z, e2y, ex, ey, ez):
        return False
    if _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, e0z, 0.0, -e0x, ex, ey, ez):
        return False
    if _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, e1z, 0.0, -e1x, ex, ey, ez):
        return False
    if _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, e2z, 0.0, -e2x, ex, ey, ez):
        return False
    if _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, -e0y, e0x, 0.0, ex, ey, ez):
        return False
    if _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, -e1y, e1x, 0.0, ex, ey, ez):
        return False
    if _axis_test(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, -e2y, e2x, 0.0, ex, ey, ez):
        return False

    # triangle plane vs box
    nx = e0y * e1z - e0z * e1y
    ny = e0z * e1x - e0x * e1z
    nz = e0x * e1y - e0y * e1x
    d = nx * v0x + ny * v0y + nz * v0z
    r = ex * abs(nx) + ey * abs(ny) + ez * abs(nz)
    return abs(d) <= r


@njit(cache=True, parallel=True)
def _voxelize_kernel(p0, p1, p2, lo, hx, hy, hz, nx, ny, nz, occ):
    # all concurrent writers store 1, so the result is order-independent
    for t in prange(p0.shape[0]):
        tlo_x = min(p0[t, 0], min(p1[t, 0], p2[t, 0]))
        tlo_y = min(p0[t, 1], min(p1[t, 1], p2[t, 1]))
        tlo_z = min(p0[t, 2], min(p1[t, 2], p2[t, 2]))
        thi_x = max(p0[t, 0], max(p1[t, 0], p2[t, 0]))
        thi_y = max(p0[t, 1], max(p1[t, 1], p2[t, 1]))
        thi_z = max(p0[t, 2], max(p1[t, 2], p2[t, 2]))
        i0 = max(int(np.floor((tlo_x - lo[0]) / hx)), 0)
        j0 = max(int(np.floor((tlo_y - lo[1]) / hy)), 0)
        k0 = max(int(np.floor((tlo_z - lo[2]) / hz)), 0)
        i1 = min(int(np.floor((thi_x - lo[0]) / hx)), nx - 1)
        j1 = min(int(np.floor((thi_y - lo[1]) / hy)), ny - 1)
        k1 = min(int(np.floor((thi_z - lo[2]) / hz)), nz - 1)
        center = np.empty(3)
        half = np.empty(3)
        half[0] = 0.5 * hx
        half[1] = 0.5 * hy
        half[2] = 0.5 * hz
        for i in range(i0, i1 + 1):
            center[0] = lo[0] + (i + 0.5) * hx
            for j in range(j0, j1 + 1):
                center[1] = lo[1] + (j + 0.5) * hy
                for k in range(k0, k1 + 1):
                    if occ[i, j, k] != 0:
                        continue
                    center[2] = lo[2] + (k + 0.5) * hz
                    if tri_box_overlap(p0[t], p1[t], p2[t], center, half):
                        occ[i, j, k] = 1


def voxelize(mesh, dims, bounds) -> VoxelGrid:
    """Conservative occupancy of `mesh` over a dims-cell grid covering `bounds`.

    `mesh` may be a TriangleMesh or a (vertices, triangles) pair of arrays.
    Raises OutOfBoundsError when any triangle pokes outside the bounds.
    """
    if hasattr(mesh, "vertices"):
        verts, tris = mesh.vertices, mesh.triangles
    else:
        verts, tris = mesh
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or min(dims) < 2:
        raise VoxelizeError(f"dims must be >= 2 per axis, got {dims}")
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    if np.any(hi <= lo):
        raise VoxelizeError("bounds must have positive extent")

    p0 = np.ascontiguousarray(verts[tris[:, 0]], dtype=np.float64)
    p1 = np.ascontiguousarray(verts[tris[:, 1]], dtype=np.float64)
    p2 = np.ascontiguousarray(verts[tris[:, 2]], dtype=np.float64)
    tlo = np.minimum(np.minimum(p0, p1), p2)
    thi = np.maximum(np.maximum(p0, p1), p2)
    bad = np.any(tlo < lo, axis=1) | np.any(thi > hi, axis=1)
    if bad.any():
        raise OutOfBoundsError(np.nonzero(bad)[0].tolist())

    occ = np.zeros(dims, dtype=np.uint8)
    h = (hi - lo) / np.array(dims, dtype=np.float64)
    _voxelize_kernel(p0, p1, p2, lo, h[0], h[1], h[2],
                     dims[0], dims[1], dims[2], occ)
    return VoxelGrid(occupancy=occ, lo=lo, hi=hi)


_DUMP_HEADER = struct.Struct("<3I6f")


def save_voxels(grid: VoxelGrid, path):
    """Raw occupancy dump: dims + bounds header, then packed bits (x-fastest)."""
    header = _DUMP_HEADER.pack(
        grid.dims[0], grid.dims[1], grid.dims[2],
        float(grid.lo[0]), float(grid.lo[1]), float(grid.lo[2]),
        float(grid.hi[0]), float(grid.hi[1]), float(grid.hi[2]),
    )
    bits = np.packbits(grid.occupancy.ravel(order="F"))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bits.tobytes())


def load_voxels(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _DUMP_HEADER.size:
        raise VoxelizeError("truncated voxel dump")
    nx, ny, nz, lox, loy, loz, hix, hiy, hiz = _DUMP_HEADER.unpack_from(blob)
    count = nx * ny * nz
    bits = np.frombuffer(blob[_DUMP_HEADER.size:], dtype=np.uint8)
    occ = np.unpackbits(bits, count=count).reshape((nx, ny, nz), order="F")
    return VoxelGrid(
        occupancy=np.ascontiguousarray(occ),
        lo=np.array([lox, loy, loz]), hi=np.array([hix, hiy, hiz]),
    )
