"""Signed distance field generation and sphere-traced soft shadows on the CPU.

The per-frame pipeline voxelizes the scene, jump-floods a coarse distance
field, refines a masked band of a finer field by ray sampling with temporal
decay, and shades soft shadows by sphere tracing the result.
"""

import os

# must be set before numba initializes its threading runtime; workqueue is
# fork-safe and portable (TBB on this image is too old, OMP optional)
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"


def set_threads(n: int):
    """Pin the worker count for all parallel kernels (outputs are identical
    for any count; only timings change)."""
    import numba

    numba.set_num_threads(max(1, int(n)))


_env_threads = os.environ.get("SDFSHADOW_THREADS")
if _env_threads:
    set_threads(int(_env_threads))

from .field import (DistanceField, FieldSample, apply_bias, load_field, make_field,
                    sample_trilinear, save_field, slice_field)
from .geometry import (BvhIndex, RayHit, TriangleMesh, build_bvh, exact_distance,
                       exact_distance_many, load_mesh, make_mesh, ray_query)
from .jfa import SeedGrid, jfa_init, jfa_offsets, jfa_run, jfa_step, seeds_to_sdf
from .pipeline import FramePipeline, PipelineConfig
from .raymarch import MarchParams, MarchResult, simulate_umbra, soft_shadow, sphere_trace
from .raysample import (AccumulatorField, SamplingParams, accumulate, coarse_at_fine,
                        fine_from_coarse, ray_mask, resolve_sign, sample_texel, update_fine)
from .render import (Camera, DirectionalLight, DiscLight, GBuffer, compare,
                     occlusion_image, rasterize_gbuffer, read_pfm, reference_render,
                     reference_visibility, shade, write_pfm, write_ppm)
from .scenes import Instance, Scene, SceneView, get_scene
from .voxel import VoxelGrid, voxelize

__all__ = [name for name in dir() if not name.startswith("_")]
