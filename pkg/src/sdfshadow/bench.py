"""Scenario-driven benchmark harness: resolution / ray-count / mask-distance
sweeps with CSV output, monotonic-trend reporting, and the ghosting decay
experiment.

Timings are wall-clock relative measurements; assertions downstream are on
orderings and ratios, never on absolute milliseconds.  All non-timing CSV
columns are reproducible exactly for a fixed seed.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
import yaml

from .field import save_field
from .pipeline import PASSES, FramePipeline, PipelineConfig
from .raysample import SamplingParams
from .render import write_pfm, write_ppm
from .scenes import Scene, get_scene

# named resolutions: coarse / fine
SIZES = {
    "S": ((64, 64, 64), (128, 128, 128)),
    "M": ((128, 128, 128), (256, 256, 256)),
    "L": ((256, 256, 256), (512, 512, 512)),
}

CSV_FIELDS = ("scenario_id", "frame", "pass", "duration_ns",
              "masked_texels", "rays_traced")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    scene: str = "sphere_plane"
    size: str = "M"
    coarse_dims: tuple | None = None   # override the named size
    fine_dims: tuple | None = None
    x: int = 5
    d: float = 0.1
    alpha: float = 0.95
    frames: int = 8
    animate: bool = True
    seed: int = 0
    beta: float = 0.0
    bias: float = 0.01
    repeats: int = 5
    render_last: bool = False
    out_dir: str | None = None

    def resolved_dims(self):
        if self.coarse_dims and self.fine_dims:
            return tuple(self.coarse_dims), tuple(self.fine_dims)
        if self.size not in SIZES:
            raise ScenarioError(
                f"unknown size {self.size!r}; expected one of {sorted(SIZES)} "
                "or explicit coarse_dims/fine_dims")
        return SIZES[self.size]

    def build(self) -> tuple[Scene, PipelineConfig]:
        try:
            scene = get_scene(self.scene)
        except KeyError as exc:
            raise ScenarioError(str(exc)) from None
        if not self.animate:
            scene = replace_tracks_static(scene)
        coarse, fine = self.resolved_dims()
        mask_d = math.inf if self.d == float("inf") else self.d
        cfg = PipelineConfig(
            coarse_dims=coarse, fine_dims=fine,
            sampling=SamplingParams(rays_per_frame=self.x, mask_distance=mask_d,
                                    decay_alpha=self.alpha, seed=self.seed),
            beta=self.beta, bias=self.bias, repeats=self.repeats)
        return scene, cfg


def replace_tracks_static(scene: Scene) -> Scene:
    """Freeze every instance at its frame-0 transform."""
    from dataclasses import replace as dc_replace

    from .scenes import Instance

    frozen = []
    for inst in scene.instances:
        m = inst.transform_at(0)
        frozen.append(Instance(mesh=inst.mesh.transformed(m), albedo=inst.albedo))
    return dc_replace(scene, name=scene.name + "-static", instances=tuple(frozen))


def scenario_from_yaml(path) -> Scenario:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return scenario_from_dict(doc, default_id=os.path.splitext(os.path.basename(path))[0])


def scenario_from_dict(doc: dict, default_id="scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario config must be a mapping")
    doc = dict(doc)
    doc.setdefault("scenario_id", default_id)
    if isinstance(doc.get("d"), str):
        if doc["d"].lower() in ("inf", "infinity"):
            doc["d"] = float("inf")
        else:
            doc["d"] = float(doc["d"])
    known = {f for f in Scenario.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    for tup in ("coarse_dims", "fine_dims"):
        if doc.get(tup) is not None:
            doc[tup] = tuple(int(v) for v in doc[tup])
    try:
        return Scenario(**doc)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None


@dataclass
class ScenarioResult:
    scenario: Scenario
    records: list            # FrameRecord per frame
    csv_rows: list
    pipeline: FramePipeline

    def rows_for(self, pass_name):
        return [r for r in self.csv_rows if r["pass"] == pass_name]

    def median_pass_ns(self, pass_name):
        vals = sorted(r["duration_ns"] for r in self.rows_for(pass_name))
        return vals[len(vals) // 2] if vals else 0

    def rays_per_frame(self):
        return self.records[-1].rays_traced if self.records else 0


def run_scenario(scenario: Scenario) -> ScenarioResult:
    """Execute V->JF->RT->DL for the configured frame count; write artifacts."""
    scene, cfg = scenario.build()
    pipe = FramePipeline(scene, cfg)
    rows = []
    for i in range(scenario.frames):
        render = scenario.render_last and i == scenario.frames - 1
        rec = pipe.advance(render=render)
        for pass_name in PASSES:
            rows.append({
                "scenario_id": scenario.scenario_id,
                "frame": rec.frame,
                "pass": pass_name,
                "duration_ns": int(rec.durations_ns[pass_name]),
                "masked_texels": rec.masked_texels,
                "rays_traced": rec.rays_traced,
            })
    result = ScenarioResult(scenario, pipe.records, rows, pipe)
    if scenario.out_dir:
        os.makedirs(scenario.out_dir, exist_ok=True)
        write_csv(os.path.join(scenario.out_dir, f"{scenario.scenario_id}.csv"), rows)
        save_field(pipe.coarse, os.path.join(scenario.out_dir, "coarse.rsdf"))
        save_field(pipe.fine_for_shading, os.path.join(scenario.out_dir, "fine.rsdf"))
        if pipe.last_image is not None:
            write_pfm(os.path.join(scenario.out_dir, "frame.pfm"), pipe.last_image)
            write_ppm(os.path.join(scenario.out_dir, "frame.ppm"), pipe.last_image)
    return result


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        w.writerows(rows)


def format_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS)
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# trend report
# ---------------------------------------------------------------------------

_KNOBS = ("x", "d", "size")


@dataclass
class TrendReport:
    knob: str
    points: list        # (knob value, dict of metrics)
    verdicts: dict      # name -> bool
    notes: list

    @property
    def ok(self):
        return all(self.verdicts.values())

    def to_text(self) -> str:
        lines = [f"trend report: varying {self.knob}"]
        for value, metrics in self.points:
            parts = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in metrics.items())
            lines.append(f"  {self.knob}={value}: {parts}")
        for name, ok in self.verdicts.items():
            lines.append(f"  [{'ok' if ok else 'FAIL'}] {name}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


def _scenario_knobs(s: Scenario):
    return {"x": s.x, "d": s.d, "size": s.size,
            "scene": s.scene, "alpha": s.alpha, "frames": s.frames,
            "seed": s.seed, "beta": s.beta, "bias": s.bias}


def trend_report(results: list[ScenarioResult]) -> TrendReport:
    """Monotonicity verdicts over scenarios that vary exactly one knob."""
    if len(results) < 2:
        raise ScenarioError("trend report needs at least two scenarios")
    knob_sets = {k: {repr(_scenario_knobs(r.scenario)[k]) for r in results}
                 for k in _scenario_knobs(results[0].scenario)}
    varying = [k for k, vals in knob_sets.items() if len(vals) > 1]
    if len(varying) != 1 or varying[0] not in _KNOBS:
        raise ScenarioError(
            f"scenarios must vary exactly one of {_KNOBS}, got varying={varying}")
    knob = varying[0]

    def keyval(r):
        v = _scenario_knobs(r.scenario)[knob]
        if knob == "size":
            return "SML".index(v)
        return v

    results = sorted(results, key=keyval)
    points = []
    for r in results:
        metrics = {
            "rt_ns": r.median_pass_ns("RT"),
            "jf_ns": r.median_pass_ns("JF"),
            "v_ns": r.median_pass_ns("V"),
            "rays": r.rays_per_frame(),
            "masked": r.records[-1].masked_texels,
        }
        points.append((_scenario_knobs(r.scenario)[knob], metrics))

    verdicts = {}
    notes = []
    rt = [m["rt_ns"] for _, m in points]
    jf = [m["jf_ns"] for _, m in points]
    rays = [m["rays"] for _, m in points]
    if knob == "d":
        verdicts["rays traced strictly increasing with d"] = all(
            b > a for a, b in zip(rays, rays[1:]))
        verdicts["RT time increasing with d"] = all(
            b > a for a, b in zip(rt, rt[1:]))
    elif knob == "x":
        xs = [v for v, _ in points]
        pairs = [(xa, xb, ta, tb) for (xa, ta), (xb, tb) in
                 zip(zip(xs, rt), list(zip(xs, rt))[1:]) if xa > 0]
        lin_ok = True
        for xa, xb, ta, tb in pairs:
            expect = xb / xa
            actual = tb / ta if ta else float("inf")
            if not (0.7 * expect <= actual <= 1.3 * expect):
                lin_ok = False
                notes.append(
                    f"RT({xb})/RT({xa}) = {actual:.2f}, expected ~{expect:.2f}")
        verdicts["RT time ~ linear in x (+-30%)"] = lin_ok
        verdicts["RT time increasing with x"] = all(
            b > a for a, b in zip(rt, rt[1:]))
    elif knob == "size":
        verdicts["JF time increasing with resolution"] = all(
            b > a for a, b in zip(jf, jf[1:]))
        cells = {"S": 64 ** 3, "M": 128 ** 3, "L": 256 ** 3}
        vals = [v for v, _ in points]
        per_cell = [j / cells[v] for v, j in zip(vals, jf)]
        verdicts["JF grows superlinearly in cell count"] = all(
            b > a for a, b in zip(per_cell, per_cell[1:]))
    return TrendReport(knob=knob, points=points, verdicts=verdicts, notes=notes)


# ---------------------------------------------------------------------------
# ghosting experiment
# ---------------------------------------------------------------------------

@dataclass
class GhostingResult:
    frames: list              # frame indices after the vacate event
    envelope: list            # alpha^k * initial residual per frame
    residual_in_band: list    # median |mag - c| over tracked c<=d texels
    max_ratio: float          # worst residual / envelope over the window
    outside_exact: bool       # c>d texels equal coarse immediately
    tracked: int

    def decays_within(self, slack=1.1):
        return self.max_ratio <= slack


def ghosting_experiment(scenario: Scenario, warmup=10, window=14,
                        band_lo=0.035) -> GhostingResult:
    """Track texels vacated by the mover and check the decay envelope.

    After `warmup` frames the mover advances one step; texels that were close
    to its old surface split into a c<=d group (must decay like alpha^k) and a
    c>d group (must equal the coarse value immediately).
    """
    scene, cfg = scenario.build()
    if not scene.animated:
        raise ScenarioError("ghosting experiment needs an animated scene")
    from .raysample import coarse_at_fine

    pipe = FramePipeline(scene, cfg)
    for _ in range(warmup):
        pipe.advance()
    d = cfg.sampling.mask_distance
    c_before = coarse_at_fine(pipe.coarse, cfg.fine_dims)
    fine_before = np.abs(pipe.fine.data)

    pipe.advance()  # the vacate event
    c_after = coarse_at_fine(pipe.coarse, cfg.fine_dims)

    vacated = (fine_before < band_lo) & (c_after > c_before + 0.02)
    in_band = vacated & (c_after <= d)
    out_band = vacated & (c_after > d)

    outside_exact = bool(np.array_equal(pipe.fine.data[out_band], c_after[out_band]))

    # keep only texels whose coarse value stays put, so the recurrence target
    # is constant and alpha^k is exact
    idx = np.nonzero(in_band)
    r0 = np.abs(np.abs(pipe.fine.data[idx]) - c_after[idx])
    alive = r0 > 1e-4
    frames = []
    env = []
    res = []
    ratios = []
    alpha = cfg.sampling.decay_alpha
    for k in range(1, window + 1):
        pipe.advance()
        c_now = coarse_at_fine(pipe.coarse, cfg.fine_dims)
        stable = alive & (np.abs(c_now[idx] - c_after[idx]) < 1e-3)
        if stable.sum() == 0:
            break
        residual = np.abs(np.abs(pipe.fine.data[idx]) - c_now[idx])[stable]
        envelope = (alpha ** k) * r0[stable]
        frames.append(pipe.frame - 1)
        env.append(float(np.median(envelope)))
        res.append(float(np.median(residual)))
        ratios.append(float(np.max(residual / np.maximum(envelope, 1e-9))))
    return GhostingResult(
        frames=frames, envelope=env, residual_in_band=res,
        max_ratio=max(ratios) if ratios else float("inf"),
        outside_exact=outside_exact, tracked=int(alive.sum()))
