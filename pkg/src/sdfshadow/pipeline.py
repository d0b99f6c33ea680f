"""Per-frame pipeline: voxelize -> jump flood -> ray refine -> deferred light.

FramePipeline owns the temporal state (previous fine field, vote/minimum
accumulator) and re-runs the coarse passes every frame exactly as a live
renderer would, so dynamic scenes behave honestly.  Pass timings use the
monotonic clock; with repeats > 1 each pass is re-executed on copies and the
median is reported (outputs are identical by determinism).
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import DistanceField, apply_bias
from .jfa import jfa_run, seeds_to_sdf
from .raymarch import MarchParams
from .raysample import AccumulatorField, SamplingParams, fine_from_coarse, update_fine
from .render import occlusion_image, rasterize_gbuffer, compose
from .scenes import Scene
from .voxel import voxelize

PASSES = ("V", "JF", "RT", "DL")


@dataclass(frozen=True)
class PipelineConfig:
    coarse_dims: tuple = (128, 128, 128)
    fine_dims: tuple = (256, 256, 256)
    sampling: SamplingParams = dc_field(default_factory=SamplingParams)
    beta: float = 0.0          # coarse thickening; 0 keeps the coarse unbiased
    bias: float = 0.01         # fine-field thickening applied for shading
    max_step: float = 0.05
    max_iterations: int = 256
    jitter: float = 1.0
    shade_draws: int = 1
    repeats: int = 1

    def __post_init__(self):
        for f, c in zip(self.fine_dims, self.coarse_dims):
            if f % c != 0:
                raise ValueError(
                    f"fine dims {self.fine_dims} must be multiples of coarse dims {self.coarse_dims}")


@dataclass
class FrameRecord:
    frame: int
    durations_ns: dict       # pass -> int
    masked_texels: int
    rays_traced: int

    @property
    def total_ns(self):
        return sum(self.durations_ns.values())


def _timed(fn, repeats):
    """Run fn() `repeats` times, return (last result, median duration ns)."""
    times = []
    result = None
    for _ in range(max(1, repeats)):
        t0 = time.monotonic_ns()
        result = fn()
        times.append(time.monotonic_ns() - t0)
    times.sort()
    return result, times[len(times) // 2]


class FramePipeline:
    def __init__(self, scene: Scene, config: PipelineConfig):
        self.scene = scene
        self.cfg = config
        self.frame = 0
        self.coarse: DistanceField | None = None
        self.fine: DistanceField | None = None
        self.accum: AccumulatorField | None = None
        self.records: list[FrameRecord] = []

    def march_params(self, **kw) -> MarchParams:
        fine = self.fine if self.fine is not None else self._fine_placeholder()
        kw.setdefault("max_step", self.cfg.max_step)
        kw.setdefault("max_iterations", self.cfg.max_iterations)
        kw.setdefault("jitter", self.cfg.jitter)
        kw.setdefault("light_angle", self.scene.light.angular_radius)
        return MarchParams.for_field(fine, **kw)

    def _fine_placeholder(self):
        from .field import make_field
        return make_field(np.zeros((2, 2, 2), np.float32) + 1.0,
                          self.scene.lo, self.scene.hi)

    @property
    def fine_for_shading(self) -> DistanceField:
        """Current fine field thickened by the configured bias."""
        if self.fine is None:
            raise RuntimeError("advance() at least one frame first")
        return apply_bias(self.fine, self.cfg.bias)

    @property
    def coarse_for_shading(self) -> DistanceField:
        if self.coarse is None:
            raise RuntimeError("advance() at least one frame first")
        return apply_bias(self.coarse, self.cfg.bias)

    def advance(self, render=False, camera=None) -> FrameRecord:
        """Run one frame of V -> JF -> RT (-> DL when render=True)."""
        cfg = self.cfg
        frame = self.frame
        view = self.scene.view(frame)
        durations = {}

        vox, durations["V"] = _timed(
            lambda: voxelize(view.mesh, cfg.coarse_dims, self.scene.bounds),
            cfg.repeats)

        def run_jf():
            seeds = jfa_run(vox)
            return seeds_to_sdf(seeds, beta=cfg.beta)

        self.coarse, durations["JF"] = _timed(run_jf, cfg.repeats)

        if self.fine is None:
            self.fine = fine_from_coarse(self.coarse, cfg.fine_dims)
            self.accum = AccumulatorField.empty(cfg.fine_dims)

        def run_rt():
            acc = copy.deepcopy(self.accum) if cfg.repeats > 1 else self.accum
            out, acc = update_fine(self.fine, self.coarse, view.bvh,
                                   cfg.sampling, frame, acc)
            return out, acc

        (new_fine, new_accum), durations["RT"] = _timed(run_rt, cfg.repeats)
        self.fine = new_fine
        self.accum = new_accum
        masked = int(new_accum.mask.sum())
        rays = masked * cfg.sampling.rays_per_frame

        durations["DL"] = 0
        self.last_image = None
        if render:
            cam = camera or self.scene.camera

            def run_dl():
                gb = rasterize_gbuffer(view, cam)
                occ = occlusion_image(gb, self.fine_for_shading, self.scene.light,
                                      self.march_params(), draws=cfg.shade_draws,
                                      seed=cfg.sampling.seed)
                return compose(gb, occ, self.scene.light)

            self.last_image, durations["DL"] = _timed(run_dl, cfg.repeats)

        rec = FrameRecord(frame=frame, durations_ns=durations,
                          masked_texels=masked, rays_traced=rays)
        self.records.append(rec)
        self.frame += 1
        return rec

    def run(self, frames: int, render_last=False, camera=None):
        for i in range(frames):
            self.advance(render=render_last and i == frames - 1, camera=camera)
        return self.records
