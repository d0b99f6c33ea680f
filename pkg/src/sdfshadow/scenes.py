"""Procedural test scenes: meshes, animation tracks and per-frame world views.

Scenes are small, deterministic stand-ins: a sphere over a ground plane for
penumbra work, a thin-slat "plant" for hole behavior, and an orbiting blob
(bundled OBJ) for ghosting.  A SceneView merges all instances into one
world-space mesh + BVH for a given frame; views are memoized on the exact
instance transforms, so static scenes build their BVH once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from importlib import resources

import numpy as np

from .geometry import TriangleMesh, build_bvh, exact_distance_many, load_mesh, make_mesh
from .render import Camera, DirectionalLight, DiscLight


@dataclass(frozen=True)
class Instance:
    mesh: TriangleMesh
    albedo: tuple = (0.8, 0.8, 0.8)
    track: object = None  # callable frame -> 3x4 affine, or None for static

    def transform_at(self, frame):
        if self.track is None:
            return np.hstack([np.eye(3), np.zeros((3, 1))])
        return np.asarray(self.track(frame), dtype=np.float64)


@dataclass(frozen=True)
class Scene:
    name: str
    instances: tuple
    lo: np.ndarray
    hi: np.ndarray
    light: DirectionalLight
    camera: Camera
    disc_light: DiscLight | None = None

    @property
    def bounds(self):
        return self.lo, self.hi

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def animated(self):
        return any(inst.track is not None for inst in self.instances)

    def view(self, frame: int) -> "SceneView":
        key = tuple(inst.transform_at(frame).tobytes() for inst in self.instances)
        cached = _VIEW_CACHE.get(self.name)
        if cached is not None and cached[0] == key:
            return cached[1]
        view = SceneView(self, frame)
        _VIEW_CACHE[self.name] = (key, view)
        return view


_VIEW_CACHE: dict = {}


class SceneView:
    """World-space geometry of one frame: merged mesh, BVH, per-tri albedo."""

    def __init__(self, scene: Scene, frame: int):
        self.scene = scene
        self.frame = frame
        verts = []
        tris = []
        albedo = []
        base = 0
        for inst in scene.instances:
            m = inst.transform_at(frame)
            v = inst.mesh.vertices @ m[:, :3].T + m[:, 3]
            verts.append(v)
            tris.append(inst.mesh.triangles + base)
            albedo.append(np.tile(np.asarray(inst.albedo, dtype=np.float32),
                                  (inst.mesh.num_triangles, 1)))
            base += len(v)
        self.mesh = make_mesh(np.vstack(verts), np.vstack(tris))
        self.albedo = np.ascontiguousarray(np.vstack(albedo))
        self.bvh = build_bvh(self.mesh)
        mlo, mhi = self.mesh.bounds
        if np.any(mlo < scene.lo) or np.any(mhi > scene.hi):
            raise ValueError(
                f"scene {scene.name!r} geometry leaves its bounds at frame {frame}")

    def exact_distance(self, points) -> np.ndarray:
        return exact_distance_many(self.bvh, points)


# ---------------------------------------------------------------------------
# mesh builders
# ---------------------------------------------------------------------------

def make_quad(center, right, up) -> TriangleMesh:
    """Two-triangle quad; face normal along cross(up, right)."""
    c = np.asarray(center, dtype=np.float64)
    r = np.asarray(right, dtype=np.float64)
    u = np.asarray(up, dtype=np.float64)
    verts = np.array([c - r - u, c + r - u, c + r + u, c - r + u])
    tris = np.array([[0, 2, 1], [0, 3, 2]], dtype=np.int32)
    return make_mesh(verts, tris)


def make_box(center, half) -> TriangleMesh:
    c = np.asarray(center, dtype=np.float64)
    h = np.asarray(half, dtype=np.float64)
    sx, sy, sz = h
    corners = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    verts = corners + c
    # outward winding per face
    faces = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for a, b, cc, d in faces:
        tris.append([a, b, cc])
        tris.append([a, cc, d])
    return make_mesh(verts, np.array(tris, dtype=np.int32))


def make_icosphere(radius=1.0, center=(0.0, 0.0, 0.0), subdivisions=4) -> TriangleMesh:
    """Subdivided icosahedron; 20 * 4^s triangles, vertices on the sphere."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts[0])
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key in cache:
                return cache[key]
            a = np.asarray(verts[i])
            b = np.asarray(verts[j])
            m = (a + b) * 0.5
            m /= np.linalg.norm(m)
            verts.append(tuple(m))
            cache[key] = len(verts) - 1
            return cache[key]

        for (a, b, c) in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts, dtype=np.float64) * radius + np.asarray(center, dtype=np.float64)
    return make_mesh(v, np.asarray(faces, dtype=np.int32))


def make_slat_panel(center, width, height, thickness, slats, gap_ratio=0.55,
                    bar_height_ratio=0.18) -> TriangleMesh:
    """Vertical slatted panel: a top crossbar with thin teeth hanging off it.

    The true shadow is one connected comb shape; the teeth are thin in two
    axes so a low-resolution field struggles to keep their shadows solid.
    """
    c = np.asarray(center, dtype=np.float64)
    bar_h = height * bar_height_ratio
    tooth_h = height - bar_h
    pitch = width / slats
    tooth_w = pitch * (1.0 - gap_ratio)
    parts = []
    bar_center = c + np.array([0.0, tooth_h / 2.0, 0.0])
    parts.append(make_box(bar_center, (width / 2.0, bar_h / 2.0, thickness / 2.0)))
    x0 = -width / 2.0 + pitch / 2.0
    for s in range(slats):
        tc = c + np.array([x0 + s * pitch, -bar_h / 2.0, 0.0])
        parts.append(make_box(tc, (tooth_w / 2.0, tooth_h / 2.0, thickness / 2.0)))
    return merge_meshes(parts)


def merge_meshes(meshes) -> TriangleMesh:
    verts = []
    tris = []
    base = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        base += len(m.vertices)
    return make_mesh(np.vstack(verts), np.vstack(tris))


def load_blob_mesh() -> TriangleMesh:
    """The bundled ~1k-triangle blob used as the orbiting occluder."""
    data = resources.files("sdfshadow").joinpath("data/blob.obj").read_bytes()
    return load_mesh(data)


def orbit_track(radius, height, deg_per_frame, phase_deg=0.0, scale=1.0):
    """Circular orbit around the +y axis through the origin."""

    def track(frame):
        a = math.radians(phase_deg + deg_per_frame * frame)
        rot = np.array([
            [math.cos(a), 0.0, math.sin(a)],
            [0.0, 1.0, 0.0],
            [-math.sin(a), 0.0, math.cos(a)],
        ]) * scale
        pos = np.array([radius * math.cos(a), height, radius * math.sin(a)])
        return np.hstack([rot, pos[:, None]])

    return track


# ---------------------------------------------------------------------------
# scene registry
# ---------------------------------------------------------------------------

def scene_sphere() -> Scene:
    """A lone sphere: the convergence workhorse (exact oracle everywhere)."""
    sphere = make_icosphere(radius=1.0, subdivisions=4)
    return Scene(
        name="sphere",
        instances=(Instance(sphere, albedo=(0.75, 0.72, 0.68)),),
        lo=np.array([-2.0, -2.0, -2.0]),
        hi=np.array([2.0, 2.0, 2.0]),
        light=DirectionalLight((0.3, 1.0, 0.25), angular_radius=0.08),
        camera=Camera((0.0, 0.6, -3.2), (0.0, 0.0, 0.0), width=240, height=180),
    )


def scene_sphere_plane() -> Scene:
    """Sphere floating over a ground plane; the penumbra test subject."""
    ground = make_quad((0.0, 0.0, 0.0), (1.55, 0.0, 0.0), (0.0, 0.0, 1.55))
    sphere = make_icosphere(radius=0.35, center=(0.0, 0.8, 0.0), subdivisions=3)
    return Scene(
        name="sphere_plane",
        instances=(
            Instance(ground, albedo=(0.78, 0.78, 0.78)),
            Instance(sphere, albedo=(0.75, 0.3, 0.25)),
        ),
        lo=np.array([-1.6, -0.1, -1.6]),
        hi=np.array([1.6, 3.1, 1.6]),
        light=DirectionalLight((0.35, 1.0, 0.15), angular_radius=0.08),
        camera=Camera((0.0, 2.3, -2.6), (0.0, 0.2, 0.2), width=240, height=180),
    )


def scene_thin_plate() -> Scene:
    """Slatted thin panel over the ground; exercises thin-surface holes."""
    ground = make_quad((0.0, 0.0, 0.0), (1.55, 0.0, 0.0), (0.0, 0.0, 1.55))
    panel = make_slat_panel(center=(0.0, 0.95, 0.0), width=1.5, height=0.7,
                            thickness=0.012, slats=6)
    return Scene(
        name="thin_plate",
        instances=(
            Instance(ground, albedo=(0.78, 0.78, 0.78)),
            Instance(panel, albedo=(0.35, 0.55, 0.3)),
        ),
        lo=np.array([-1.6, -0.1, -1.6]),
        hi=np.array([1.6, 3.1, 1.6]),
        light=DirectionalLight((0.05, 1.0, 0.3), angular_radius=0.05),
        camera=Camera((0.0, 2.6, -2.2), (0.0, 0.1, 0.1), width=240, height=180),
    )


def scene_orbit() -> Scene:
    """Bundled blob orbiting above the ground; the ghosting scenario."""
    ground = make_quad((0.0, 0.0, 0.0), (1.55, 0.0, 0.0), (0.0, 0.0, 1.55))
    blob = load_blob_mesh()
    return Scene(
        name="orbit",
        instances=(
            Instance(ground, albedo=(0.78, 0.78, 0.78)),
            Instance(blob, albedo=(0.3, 0.45, 0.7),
                     track=orbit_track(radius=0.75, height=0.85, deg_per_frame=6.0)),
        ),
        lo=np.array([-1.6, -0.1, -1.6]),
        hi=np.array([1.6, 3.1, 1.6]),
        light=DirectionalLight((0.2, 1.0, 0.1), angular_radius=0.08),
        camera=Camera((0.0, 2.4, -2.5), (0.0, 0.3, 0.0), width=240, height=180),
    )


SCENES = {
    "sphere": scene_sphere,
    "sphere_plane": scene_sphere_plane,
    "thin_plate": scene_thin_plate,
    "orbit": scene_orbit,
}


def get_scene(name: str) -> Scene:
    try:
        return SCENES[name]()
    except KeyError:
        raise KeyError(f"unknown scene {name!r}; available: {sorted(SCENES)}") from None
