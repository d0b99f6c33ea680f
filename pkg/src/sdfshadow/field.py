"""Scalar field container: trilinear sampling, bias, slices, (de)serialization.

Values live at cell centers; sampling outside the bounds clamps to the border
so raymarching near scene edges never sees phantom surfaces.

File format (little endian):
  magic "RSDF", version u32, dims 3*u32, bounds 6*f32 (lo, hi),
  beta f32, bias f32, frame u64, then nx*ny*nz f32 values, x-fastest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from numba import njit, prange

MAGIC = b"RSDF"
VERSION = 1
_HEADER = struct.Struct("<4sI3I6fffQ")


class FieldFormatError(ValueError):
    pass


class FieldVersionError(FieldFormatError):
    pass


@dataclass(frozen=True)
class FieldSample:
    value: float
    in_bounds: bool


@dataclass(frozen=True)
class DistanceField:
    """Uniform 3D scalar field with a world mapping."""

    data: np.ndarray  # (nx, ny, nz) float32
    lo: np.ndarray    # (3,) float64
    hi: np.ndarray    # (3,) float64
    beta: float = 0.0
    bias: float = 0.0
    frame: int = 0

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("field data must be 3D")
        if np.any(self.hi <= self.lo):
            raise ValueError("bounds must have positive extent")

    @property
    def dims(self):
        return self.data.shape

    @property
    def cell_size(self):
        return (self.hi - self.lo) / np.array(self.data.shape, dtype=np.float64)

    @property
    def cell_diagonal(self):
        return float(np.linalg.norm(self.cell_size))

    def cell_centers_axis(self, axis):
        n = self.data.shape[axis]
        h = (self.hi[axis] - self.lo[axis]) / n
        return self.lo[axis] + (np.arange(n) + 0.5) * h

    def sample(self, point) -> FieldSample:
        p = np.asarray(point, dtype=np.float64)
        v, inside = _sample_one(self.data, self.lo, self.hi, p[0], p[1], p[2])
        return FieldSample(float(v), bool(inside))

    def sample_many(self, points) -> np.ndarray:
        pts = np.ascontiguousarray(points, dtype=np.float64)
        out = np.empty(len(pts), dtype=np.float64)
        _sample_many(self.data, self.lo, self.hi, pts, out)
        return out


def make_field(data, lo, hi, beta=0.0, bias=0.0, frame=0):
    return DistanceField(
        data=np.ascontiguousarray(data, dtype=np.float32),
        lo=np.asarray(lo, dtype=np.float64),
        hi=np.asarray(hi, dtype=np.float64),
        beta=float(beta),
        bias=float(bias),
        frame=int(frame),
    )


@njit(cache=True, inline="always")
def trilinear(data, lox, loy, loz, hx, hy, hz, px, py, pz):
    """Trilinear interpolation of cell-center values with border clamp."""
    nx, ny, nz = data.shape
    gx = (px - lox) / hx - 0.5
    gy = (py - loy) / hy - 0.5
    gz = (pz - loz) / hz - 0.5
    gx = min(max(gx, 0.0), nx - 1.0)
    gy = min(max(gy, 0.0), ny - 1.0)
    gz = min(max(gz, 0.0), nz - 1.0)
    ix = min(int(gx), nx - 2) if nx > 1 else 0
    iy = min(int(gy), ny - 2) if ny > 1 else 0
    iz = min(int(gz), nz - 2) if nz > 1 else 0
    fx = gx - ix
    fy = gy - iy
    fz = gz - iz
    jx = ix + 1 if nx > 1 else ix
    jy = iy + 1 if ny > 1 else iy
    jz = iz + 1 if nz > 1 else iz
    c000 = data[ix, iy, iz]
    c100 = data[jx, iy, iz]
    c010 = data[ix, jy, iz]
    c110 = data[jx, jy, iz]
    c001 = data[ix, iy, jz]
    c101 = data[jx, iy, jz]
    c011 = data[ix, jy, jz]
    c111 = data[jx, jy, jz]
    c00 = c000 * (1.0 - fx) + c100 * fx
    c10 = c010 * (1.0 - fx) + c110 * fx
    c01 = c001 * (1.0 - fx) + c101 * fx
    c11 = c011 * (1.0 - fx) + c111 * fx
    c0 = c00 * (1.0 - fy) + c10 * fy
    c1 = c01 * (1.0 - fy) + c11 * fy
    return c0 * (1.0 - fz) + c1 * fz


@njit(cache=True)
def _sample_one(data, lo, hi, px, py, pz):
    hx = (hi[0] - lo[0]) / data.shape[0]
    hy = (hi[1] - lo[1]) / data.shape[1]
    hz = (hi[2] - lo[2]) / data.shape[2]
    inside = (lo[0] <= px <= hi[0]) and (lo[1] <= py <= hi[1]) and (lo[2] <= pz <= hi[2])
    v = trilinear(data, lo[0], lo[1], lo[2], hx, hy, hz, px, py, pz)
    return v, inside


@njit(cache=True, parallel=True)
def _sample_many(data, lo, hi, points, out):
    hx = (hi[0] - lo[0]) / data.shape[0]
    hy = (hi[1] - lo[1]) / data.shape[1]
    hz = (hi[2] - lo[2]) / data.shape[2]
    for i in prange(points.shape[0]):
        out[i] = trilinear(data, lo[0], lo[1], lo[2], hx, hy, hz,
                           points[i, 0], points[i, 1], points[i, 2])


def sample_trilinear(field: DistanceField, point) -> FieldSample:
    return field.sample(point)


def apply_bias(field: DistanceField, bias: float) -> DistanceField:
    """Shift every value down by `bias` to thicken surfaces; cumulative."""
    if bias < 0:
        raise ValueError("bias must be >= 0")
    if bias == 0.0:
        return field
    return replace(field, data=field.data - np.float32(bias), bias=field.bias + bias)


def slice_field(field: DistanceField, axis, index) -> np.ndarray:
    """Extract the plane of values at `index` along `axis` ('x', 'y' or 'z')."""
    ax = {"x": 0, "y": 1, "z": 2}.get(axis, axis)
    if ax not in (0, 1, 2):
        raise ValueError(f"axis must be x, y or z, got {axis!r}")
    if not (0 <= index < field.data.shape[ax]):
        raise IndexError(f"slice index {index} out of range for axis {axis}")
    return np.take(field.data, index, axis=ax).astype(np.float64)


def slice_to_rgb(plane: np.ndarray, vmax=None) -> np.ndarray:
    """Signed-color mapping: negative values one hue, positive a ramp."""
    if vmax is None:
        vmax = float(np.abs(plane).max()) or 1.0
    t = np.clip(plane / vmax, -1.0, 1.0)
    rgb = np.zeros(plane.shape + (3,), dtype=np.float64)
    pos = t >= 0
    # positive: dark blue-black ramp to white; negative: orange hue
    rgb[pos, 0] = t[pos]
    rgb[pos, 1] = t[pos]
    rgb[pos, 2] = np.sqrt(t[pos])
    rgb[~pos, 0] = np.sqrt(-t[~pos])
    rgb[~pos, 1] = 0.4 * -t[~pos]
    return rgb


def save_field(field: DistanceField, path):
    header = _HEADER.pack(
        MAGIC, VERSION,
        field.data.shape[0], field.data.shape[1], field.data.shape[2],
        float(field.lo[0]), float(field.lo[1]), float(field.lo[2]),
        float(field.hi[0]), float(field.hi[1]), float(field.hi[2]),
        float(field.beta), float(field.bias), int(field.frame),
    )
    payload = field.data.astype("<f4").ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_field(path) -> DistanceField:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FieldFormatError("truncated field file (short header)")
    (magic, version, nx, ny, nz,
     lox, loy, loz, hix, hiy, hiz, beta, bias, frame) = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FieldVersionError(f"unsupported field file version {version}")
    count = nx * ny * nz
    body = blob[_HEADER.size:]
    if len(body) < count * 4:
        raise FieldFormatError("truncated field file (short payload)")
    data = np.frombuffer(body[: count * 4], dtype="<f4").reshape((nx, ny, nz), order="F")
    return DistanceField(
        data=np.ascontiguousarray(data),
        lo=np.array([lox, loy, loz], dtype=np.float64),
        hi=np.array([hix, hiy, hiz], dtype=np.float64),
        beta=float(beta), bias=float(bias), frame=int(frame),
    )
