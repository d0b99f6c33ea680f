"""Triangle meshes, BVH construction, ray queries and exact distance queries.

The BVH is a median-split tree over triangle centroids.  Exactness, not build
speed, is the contract: traversal must agree with brute-force intersection,
and the closest-point query is the oracle every generated field is judged
against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12

# facing codes
FACING_NONE = 0
FACING_FRONT = 1
FACING_BACK = 2


class MeshError(ValueError):
    pass


class MeshParseError(MeshError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyMeshError(MeshError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    """Immutable triangle soup with per-face geometric normals."""

    vertices: np.ndarray   # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int32
    normals: np.ndarray    # (T, 3) float64, unit, right-hand winding
    dropped: int = 0       # degenerate triangles removed at load

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def num_triangles(self):
        return len(self.triangles)

    def transformed(self, transform):
        """Apply an affine 3x4 transform; normals are recomputed."""
        m = np.asarray(transform, dtype=np.float64)
        if m.shape != (3, 4):
            raise MeshError(f"transform must be 3x4, got {m.shape}")
        verts = self.vertices @ m[:, :3].T + m[:, 3]
        return make_mesh(verts, self.triangles, dropped=self.dropped)


def _face_normals(vertices, triangles):
    a = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - a
    e2 = vertices[triangles[:, 2]] - a
    n = np.cross(e1, e2)
    lengths = np.linalg.norm(n, axis=1)
    return n, lengths


def make_mesh(vertices, triangles, dropped=0):
    """Build a TriangleMesh, dropping degenerate faces (area < 1e-12)."""
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int32)
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must be (T, 3)")
    if len(triangles) and triangles.max() >= len(vertices):
        raise MeshError("triangle index out of range")
    n, lengths = _face_normals(vertices, triangles)
    keep = lengths * 0.5 >= DEGENERATE_AREA
    n_dropped = int((~keep).sum()) + dropped
    triangles = triangles[keep]
    if len(triangles) == 0:
        raise EmptyMeshError("no non-degenerate triangles")
    normals = n[keep] / lengths[keep][:, None]
    return TriangleMesh(vertices, triangles, normals, n_dropped)


def load_mesh(source, transform=None):
    """Parse an OBJ subset (v/f records, polygons fan-triangulated).

    `source` may be bytes, str, or a filesystem path.  Materials, texture
    coords and file normals are ignored; normals are recomputed after the
    optional affine 3x4 transform.  Emits a load report on the module logger.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8", errors="replace")
    elif isinstance(source, str) and "\n" not in source and source.endswith(".obj"):
        with open(source, "r") as fh:
            text = fh.read()
    elif hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8", errors="replace")
    else:
        text = str(source)

    verts = []
    faces = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshParseError(line_no, f"vertex needs 3 coordinates: {raw!r}")
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise MeshParseError(line_no, f"bad vertex coordinate: {exc}") from None
        elif tag == "f":
            if len(parts) < 4:
                raise MeshParseError(line_no, f"face needs >= 3 vertices: {raw!r}")
            idx = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise MeshParseError(line_no, f"bad face index {tok!r}") from None
                if i < 0:
                    i = len(verts) + i
                else:
                    i = i - 1
                if i < 0 or i >= len(verts):
                    raise MeshParseError(line_no, f"face index {tok!r} out of range")
                idx.append(i)
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append([idx[0], idx[k], idx[k + 1]])
        # vn/vt/usemtl/o/g/s/mtllib ignored

    if not faces:
        raise EmptyMeshError("OBJ contains no faces")
    vertices = np.array(verts, dtype=np.float64)
    triangles = np.array(faces, dtype=np.int32)
    if transform is not None:
        m = np.asarray(transform, dtype=np.float64)
        if m.shape != (3, 4):
            raise MeshError(f"transform must be 3x4, got {m.shape}")
        vertices = vertices @ m[:, :3].T + m[:, 3]
    mesh = make_mesh(vertices, triangles)
    log.info(
        "loaded mesh: %d triangles kept, %d degenerate dropped, %d vertices",
        mesh.num_triangles, mesh.dropped, len(mesh.vertices),
    )
    return mesh


def identity_transform():
    return np.hstack([np.eye(3), np.zeros((3, 1))])


# ---------------------------------------------------------------------------
# BVH
# ---------------------------------------------------------------------------

_LEAF_SIZE = 4


@dataclass(frozen=True)
class BvhIndex:
    """Flat BVH over a TriangleMesh.

    Internal nodes store child indices; leaves store (start, count) into the
    triangle permutation `order`.  Triangle data is pre-gathered in permuted
    order for traversal kernels.
    """

    mesh: TriangleMesh
    node_lo: np.ndarray     # (N, 3) float64
    node_hi: np.ndarray     # (N, 3) float64
    node_left: np.ndarray   # (N,) int32; leaf: -(start+1)
    node_right: np.ndarray  # (N,) int32; leaf: count
    order: np.ndarray       # (T,) int32 permutation into mesh.triangles
    tri_a: np.ndarray       # (T, 3) float64 permuted vertex 0
    tri_e1: np.ndarray      # (T, 3) permuted edge 1
    tri_e2: np.ndarray      # (T, 3) permuted edge 2
    tri_n: np.ndarray       # (T, 3) permuted unit normals

    @property
    def num_nodes(self):
        return len(self.node_left)


def build_bvh(mesh: TriangleMesh) -> BvhIndex:
    """Median split over the longest centroid axis, stable tie handling."""
    if mesh.num_triangles == 0:
        raise EmptyMeshError("cannot build BVH over empty mesh")
    tris = mesh.triangles
    v = mesh.vertices
    p0, p1, p2 = v[tris[:, 0]], v[tris[:, 1]], v[tris[:, 2]]
    tri_lo = np.minimum(np.minimum(p0, p1), p2)
    tri_hi = np.maximum(np.maximum(p0, p1), p2)
    centroids = (tri_lo + tri_hi) * 0.5

    node_lo, node_hi, node_left, node_right = [], [], [], []
    order = np.arange(mesh.num_triangles, dtype=np.int64)

    def emit(idx):
        node_lo.append(tri_lo[idx].min(axis=0))
        node_hi.append(tri_hi[idx].max(axis=0))
        node_left.append(0)
        node_right.append(0)
        return len(node_left) - 1

    out_order = []

    def build(idx):
        me = emit(idx)
        if len(idx) <= _LEAF_SIZE:
            start = len(out_order)
            out_order.extend(idx.tolist())
            node_left[me] = -(start + 1)
            node_right[me] = len(idx)
            return me
        extent = node_hi[me] - node_lo[me]
        axis = int(np.argmax(extent))
        keys = centroids[idx, axis]
        half = len(idx) // 2
        part = np.argsort(keys, kind="stable")
        left_idx = idx[part[:half]]
        right_idx = idx[part[half:]]
        left = build(left_idx)
        right = build(right_idx)
        node_left[me] = left
        node_right[me] = right
        return me

    import sys
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 10000))
    try:
        build(order)
    finally:
        sys.setrecursionlimit(old_limit)

    order_arr = np.array(out_order, dtype=np.int32)
    a = p0[order_arr]
    return BvhIndex(
        mesh=mesh,
        node_lo=np.array(node_lo, dtype=np.float64),
        node_hi=np.array(node_hi, dtype=np.float64),
        node_left=np.array(node_left, dtype=np.int32),
        node_right=np.array(node_right, dtype=np.int32),
        order=order_arr,
        tri_a=np.ascontiguousarray(a),
        tri_e1=np.ascontiguousarray(p1[order_arr] - a),
        tri_e2=np.ascontiguousarray(p2[order_arr] - a),
        tri_n=np.ascontiguousarray(mesh.normals[order_arr]),
    )


@dataclass(frozen=True)
class RayHit:
    hit: bool
    t: float = 0.0
    triangle: int = -1
    facing: int = FACING_NONE  # FACING_FRONT if dot(dir, normal) < 0


_T_MIN = 1e-12


@njit(cache=True, inline="always")
def _ray_box_entry(node_lo, node_hi, node, ox, oy, oz, ix, iy, iz, t_best):
    """Slab test; entry distance into the box, or -1 when outside [0, t_best]."""
    t0 = (node_lo[node, 0] - ox) * ix
    t1 = (node_hi[node, 0] - ox) * ix
    tmin = min(t0, t1)
    tmax = max(t0, t1)
    t0 = (node_lo[node, 1] - oy) * iy
    t1 = (node_hi[node, 1] - oy) * iy
    tmin = max(tmin, min(t0, t1))
    tmax = min(tmax, max(t0, t1))
    t0 = (node_lo[node, 2] - oz) * iz
    t1 = (node_hi[node, 2] - oz) * iz
    tmin = max(tmin, min(t0, t1))
    tmax = min(tmax, max(t0, t1))
    entry = max(tmin, 0.0)
    if tmax >= entry and tmin <= t_best:
        return entry
    return -1.0


@njit(cache=True, inline="always")
def _ray_tri(ox, oy, oz, dx, dy, dz, ax, ay, az,
             e1x, e1y, e1z, e2x, e2y, e2z):
    """Moller-Trumbore; returns t or -1.0 on miss."""
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if -1e-14 < det < 1e-14:
        return -1.0
    inv = 1.0 / det
    tx = ox - ax
    ty = oy - ay
    tz = oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t < _T_MIN:
        return -1.0
    return t


@njit(cache=True)
def _bvh_ray(node_lo, node_hi, node_left, node_right, order,
             tri_a, tri_e1, tri_e2, tri_n,
             ox, oy, oz, dx, dy, dz, t_max, stack):
    """Closest hit.  Returns (t, original triangle id, facing) or t < 0.

    `stack` is caller-provided scratch (int32, >= 128 entries) so bulk
    callers do not allocate per ray.  Children are visited near to far with
    best-t pruning; t ties break toward the smaller original triangle id so
    traversal matches brute-force iteration order exactly.
    """
    ix = 1.0 / dx if dx != 0.0 else (1e300 if dx >= 0 else -1e300)
    iy = 1.0 / dy if dy != 0.0 else (1e300 if dy >= 0 else -1e300)
    iz = 1.0 / dz if dz != 0.0 else (1e300 if dz >= 0 else -1e300)
    best_t = t_max
    best_id = -1
    best_facing = 0
    if _ray_box_entry(node_lo, node_hi, 0, ox, oy, oz, ix, iy, iz, best_t) < 0.0:
        return -1.0, -1, 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        left = node_left[node]
        if left < 0:  # leaf
            start = -left - 1
            count = node_right[node]
            for k in range(start, start + count):
                t = _ray_tri(ox, oy, oz, dx, dy, dz,
                             tri_a[k, 0], tri_a[k, 1], tri_a[k, 2],
                             tri_e1[k, 0], tri_e1[k, 1], tri_e1[k, 2],
                             tri_e2[k, 0], tri_e2[k, 1], tri_e2[k, 2])
                if t >= 0.0 and t <= best_t:
                    orig = order[k]
                    if t < best_t or best_id < 0 or orig < best_id:
                        best_t = t
                        best_id = orig
                        dot = (dx * tri_n[k, 0] + dy * tri_n[k, 1] + dz * tri_n[k, 2])
                        best_facing = 1 if dot < 0.0 else 2
        else:
            right = node_right[node]
            tl = _ray_box_entry(node_lo, node_hi, left, ox, oy, oz, ix, iy, iz, best_t)
            tr = _ray_box_entry(node_lo, node_hi, right, ox, oy, oz, ix, iy, iz, best_t)
            if tl >= 0.0:
                if tr >= 0.0:
                    if tl <= tr:  # near child on top of the stack
                        stack[sp] = right
                        stack[sp + 1] = left
                    else:
                        stack[sp] = left
                        stack[sp + 1] = right
                    sp += 2
                else:
                    stack[sp] = left
                    sp += 1
            elif tr >= 0.0:
                stack[sp] = right
                sp += 1
    if best_id < 0:
        return -1.0, -1, 0
    return best_t, best_id, best_facing


def ray_query(bvh: BvhIndex, origin, direction, t_max=np.inf) -> RayHit:
    """Nearest intersection with t <= t_max; facing from dot(dir, normal)."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"direction must be unit length, |d| = {norm}")
    stack = np.empty(128, dtype=np.int32)
    t, tid, facing = _bvh_ray(
        bvh.node_lo, bvh.node_hi, bvh.node_left, bvh.node_right, bvh.order,
        bvh.tri_a, bvh.tri_e1, bvh.tri_e2, bvh.tri_n,
        o[0], o[1], o[2], d[0], d[1], d[2], float(t_max), stack,
    )
    if t < 0.0:
        return RayHit(False)
    return RayHit(True, float(t), int(tid), int(facing))


# ---------------------------------------------------------------------------
# Exact point-to-mesh distance
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _point_tri_d2(px, py, pz, ax, ay, az, e1x, e1y, e1z, e2x, e2y, e2z):
    """Squared distance point-to-triangle via barycentric region tests."""
    dx = ax - px
    dy = ay - py
    dz = az - pz
    a = e1x * e1x + e1y * e1y + e1z * e1z
    b = e1x * e2x + e1y * e2y + e1z * e2z
    c = e2x * e2x + e2y * e2y + e2z * e2z
    d = e1x * dx + e1y * dy + e1z * dz
    e = e2x * dx + e2y * dy + e2z * dz
    f = dx * dx + dy * dy + dz * dz
    det = a * c - b * b
    s = b * e - c * d
    t = b * d - a * e
    if s + t <= det:
        if s < 0.0:
            if t < 0.0:  # region 4
                if d < 0.0:
                    t = 0.0
                    s = 1.0 if -d >= a else -d / a
                else:
                    s = 0.0
                    if e >= 0.0:
                        t = 0.0
                    elif -e >= c:
                        t = 1.0
                    else:
                        t = -e / c
            else:  # region 3
                s = 0.0
                if e >= 0.0:
                    t = 0.0
                elif -e >= c:
                    t = 1.0
                else:
                    t = -e / c
        elif t < 0.0:  # region 5
            t = 0.0
            if d >= 0.0:
                s = 0.0
            elif -d >= a:
                s = 1.0
            else:
                s = -d / a
        else:  # region 0
            inv = 1.0 / det
            s *= inv
            t *= inv
    else:
        if s < 0.0:  # region 2
            tmp0 = b + d
            tmp1 = c + e
            if tmp1 > tmp0:
                numer = tmp1 - tmp0
                denom = a - 2.0 * b + c
                s = 1.0 if numer >= denom else numer / denom
                t = 1.0 - s
            else:
                s = 0.0
                if tmp1 <= 0.0:
                    t = 1.0
                elif e >= 0.0:
                    t = 0.0
                else:
                    t = -e / c
        elif t < 0.0:  # region 6
            tmp0 = b + e
            tmp1 = a + d
            if tmp1 > tmp0:
                numer = tmp1 - tmp0
                denom = a - 2.0 * b + c
                t = 1.0 if numer >= denom else numer / denom
                s = 1.0 - t
            else:
                t = 0.0
                if tmp1 <= 0.0:
                    s = 1.0
                elif d >= 0.0:
                    s = 0.0
                else:
                    s = -d / a
        else:  # region 1
            numer = (c + e) - (b + d)
            if numer <= 0.0:
                s = 0.0
            else:
                denom = a - 2.0 * b + c
                s = 1.0 if numer >= denom else numer / denom
            t = 1.0 - s
    qx = dx + s * e1x + t * e2x
    qy = dy + s * e1y + t * e2y
    qz = dz + s * e1z + t * e2z
    return qx * qx + qy * qy + qz * qz


@njit(cache=True, inline="always")
def _point_box_d2(px, py, pz, lox, loy, loz, hix, hiy, hiz):
    dx = max(max(lox - px, 0.0), px - hix)
    dy = max(max(loy - py, 0.0), py - hiy)
    dz = max(max(loz - pz, 0.0), pz - hiz)
    return dx * dx + dy * dy + dz * dz


@njit(cache=True)
def _bvh_closest_d2(node_lo, node_hi, node_left, node_right,
                    tri_a, tri_e1, tri_e2, px, py, pz, stack):
    """Min squared distance to any triangle, box-distance pruned."""
    best = 1e300
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        d2 = _point_box_d2(px, py, pz,
                           node_lo[node, 0], node_lo[node, 1], node_lo[node, 2],
                           node_hi[node, 0], node_hi[node, 1], node_hi[node, 2])
        if d2 >= best:
            continue
        left = node_left[node]
        if left < 0:
            start = -left - 1
            count = node_right[node]
            for k in range(start, start + count):
                d2 = _point_tri_d2(px, py, pz,
                                   tri_a[k, 0], tri_a[k, 1], tri_a[k, 2],
                                   tri_e1[k, 0], tri_e1[k, 1], tri_e1[k, 2],
                                   tri_e2[k, 0], tri_e2[k, 1], tri_e2[k, 2])
                if d2 < best:
                    best = d2
        else:
            right = node_right[node]
            dl = _point_box_d2(px, py, pz,
                               node_lo[left, 0], node_lo[left, 1], node_lo[left, 2],
                               node_hi[left, 0], node_hi[left, 1], node_hi[left, 2])
            dr = _point_box_d2(px, py, pz,
                               node_lo[right, 0], node_lo[right, 1], node_lo[right, 2],
                               node_hi[right, 0], node_hi[right, 1], node_hi[right, 2])
            if dl < dr:  # nearer child popped first
                stack[sp] = right
                sp += 1
                stack[sp] = left
                sp += 1
            else:
                stack[sp] = left
                sp += 1
                stack[sp] = right
                sp += 1
    return best


@njit(cache=True, parallel=True)
def _closest_many(node_lo, node_hi, node_left, node_right,
                  tri_a, tri_e1, tri_e2, points, out):
    for i in prange(points.shape[0]):
        stack = np.empty(128, dtype=np.int32)
        out[i] = np.sqrt(_bvh_closest_d2(
            node_lo, node_hi, node_left, node_right,
            tri_a, tri_e1, tri_e2,
            points[i, 0], points[i, 1], points[i, 2], stack))


def exact_distance(bvh: BvhIndex, point) -> float:
    """Exact unsigned point-to-mesh distance (face/edge/vertex cases)."""
    p = np.asarray(point, dtype=np.float64)
    stack = np.empty(128, dtype=np.int32)
    return float(np.sqrt(_bvh_closest_d2(
        bvh.node_lo, bvh.node_hi, bvh.node_left, bvh.node_right,
        bvh.tri_a, bvh.tri_e1, bvh.tri_e2, p[0], p[1], p[2], stack)))


def exact_distance_many(bvh: BvhIndex, points) -> np.ndarray:
    """Vectorized exact_distance over an (N, 3) point array."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    out = np.empty(len(pts), dtype=np.float64)
    _closest_many(bvh.node_lo, bvh.node_hi, bvh.node_left, bvh.node_right,
                  bvh.tri_a, bvh.tri_e1, bvh.tri_e2, pts, out)
    return out
