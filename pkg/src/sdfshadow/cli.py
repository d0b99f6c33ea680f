"""Command-line entry point: generate fields, render, slice, bench, compare.

Exit codes: 0 success, 2 usage, 3 configuration, 4 I/O, 5 internal invariant
breach.  Every subcommand honors --seed and --threads; all outputs except
timings are independent of the thread count.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_INTERNAL = 5


class ConfigError(ValueError):
    pass


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="global RNG seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker count; outputs are identical for any value")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_field_knobs(p):
    p.add_argument("--size", default="M", choices=["S", "M", "L"],
                   help="named resolution (default M)")
    p.add_argument("--frames", type=int, default=8, help="frames to accumulate (default 8)")
    p.add_argument("--rays", type=int, default=5, help="rays per texel per frame x (default 5)")
    p.add_argument("--mask-d", type=float, default=0.1,
                   help="ray-mask distance d in world units (default 0.1; inf = trace all)")
    p.add_argument("--alpha", type=float, default=0.95,
                   help="temporal decay factor alpha (default 0.95)")
    p.add_argument("--beta", type=float, default=0.0,
                   help="coarse-field thickening subtracted after flooding (default 0)")
    p.add_argument("--bias", type=float, default=0.01,
                   help="fine-field thickening for shading (default 0.01)")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="sdfshadow",
        description=("Distance-field pipeline: voxelize + jump flood a coarse field, "
                     "ray-refine a fine field, sphere trace soft shadows. "
                     "Key defaults: alpha=0.95, d=0.1, max_step=0.05, bias=0.01."))
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="run V->JF->RT and write coarse/fine field files")
    g.add_argument("--scene", default="sphere_plane", help="scene name or scenario YAML path")
    _add_field_knobs(g)
    g.add_argument("--out", default="out", help="output directory")
    _add_common(g)

    r = sub.add_parser("render", help="render the scene with soft shadows")
    r.add_argument("--scene", default="sphere_plane")
    r.add_argument("--field", default="live",
                   help="fine field file, or 'live' to generate now")
    r.add_argument("--mode", default="fine", choices=["fine", "rtsdf", "coarse-only"],
                   help="field driving the shadows (rtsdf = fine two-level field)")
    r.add_argument("--reference", action="store_true",
                   help="distributed ray-traced ground truth instead of field shadows")
    r.add_argument("--spp", type=int, default=256, help="reference samples per pixel")
    r.add_argument("--draws", type=int, default=8, help="jitter draws averaged per pixel")
    r.add_argument("--out", default="render.pfm", help="output image (.pfm; .ppm preview added)")
    _add_field_knobs(r)
    _add_common(r)

    s = sub.add_parser("slice", help="export a 2D slice of a field file")
    s.add_argument("--field", required=True)
    s.add_argument("--axis", default="y", choices=["x", "y", "z"])
    s.add_argument("--index", type=int, required=True)
    s.add_argument("--out", default="slice.ppm")
    _add_common(s)

    b = sub.add_parser("bench", help="run a sweep and print the trend report")
    b.add_argument("--sweep", required=True, choices=["d", "x", "size"])
    b.add_argument("--scene", default="sphere_plane")
    b.add_argument("--size", default="S", help="resolution for d/x sweeps (default S)")
    b.add_argument("--frames", type=int, default=2)
    b.add_argument("--repeats", type=int, default=5,
                   help="timing repeats per pass, median reported (default 5)")
    b.add_argument("--x", type=int, default=5, help="rays per texel for d/size sweeps")
    b.add_argument("--d", type=float, default=0.1, help="mask distance for x/size sweeps")
    b.add_argument("--out", default=None, help="directory for CSV output")
    _add_common(b)

    c = sub.add_parser("compare", help="print rmse/mae/max between two PFM images")
    c.add_argument("image_a")
    c.add_argument("image_b")
    _add_common(c)
    return ap


def _setup(args):
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        from . import set_threads
        set_threads(args.threads)


def _scenario_for(args, scenario_id):
    from .bench import Scenario, ScenarioError, scenario_from_yaml

    if args.scene.endswith((".yaml", ".yml")):
        base = scenario_from_yaml(args.scene)
        return base
    try:
        return Scenario(
            scenario_id=scenario_id, scene=args.scene, size=args.size,
            x=args.rays, d=args.mask_d, alpha=args.alpha,
            frames=args.frames, seed=args.seed, beta=args.beta, bias=args.bias,
            repeats=1)
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from None


def cmd_generate(args) -> int:
    from .field import save_field

    if args.size == "L" and (args.threads or 1) < 4:
        logging.getLogger("sdfshadow").warning(
            "size L on few cores: this will be slow, not fatal")
    scenario = _scenario_for(args, "generate")
    scene, cfg = scenario.build()
    from .pipeline import FramePipeline

    pipe = FramePipeline(scene, cfg)
    for _ in range(scenario.frames):
        pipe.advance()
    os.makedirs(args.out, exist_ok=True)
    save_field(pipe.coarse, os.path.join(args.out, "coarse.rsdf"))
    save_field(pipe.fine_for_shading, os.path.join(args.out, "fine.rsdf"))
    print(f"wrote {args.out}/coarse.rsdf and {args.out}/fine.rsdf "
          f"({scenario.frames} frames, seed {args.seed})")
    return EXIT_OK


def cmd_render(args) -> int:
    from .field import load_field
    from .render import (occlusion_image, compose, rasterize_gbuffer,
                         reference_visibility, write_pfm, write_ppm)
    from .raymarch import MarchParams
    from .scenes import get_scene

    scenario = _scenario_for(args, "render")
    scene, cfg = scenario.build()
    view = scene.view(0)
    gb = rasterize_gbuffer(view, scene.camera)
    if args.reference:
        vis = reference_visibility(view, gb, scene.light, spp=args.spp, seed=args.seed)
        img = compose(gb, 1.0 - vis, scene.light)
    else:
        if args.field == "live":
            from .pipeline import FramePipeline

            pipe = FramePipeline(scene, cfg)
            for _ in range(scenario.frames):
                pipe.advance()
            fld = pipe.coarse_for_shading if args.mode == "coarse-only" else pipe.fine_for_shading
        else:
            fld = load_field(args.field)
        params = MarchParams.for_field(fld, light_angle=scene.light.angular_radius)
        occ = occlusion_image(gb, fld, scene.light, params,
                              draws=args.draws, seed=args.seed)
        img = compose(gb, occ, scene.light)
    write_pfm(args.out, img)
    preview = os.path.splitext(args.out)[0] + ".ppm"
    write_ppm(preview, img)
    print(f"wrote {args.out} and {preview}")
    return EXIT_OK


def cmd_slice(args) -> int:
    from .field import load_field, slice_field, slice_to_rgb
    from .render import write_ppm

    fld = load_field(args.field)
    try:
        plane = slice_field(fld, args.axis, args.index)
    except IndexError as exc:
        raise ConfigError(str(exc)) from None
    write_ppm(args.out, slice_to_rgb(plane), gamma=1.0)
    print(f"wrote {args.out} (slice {args.axis}={args.index}, "
          f"range [{plane.min():.4f}, {plane.max():.4f}])")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import Scenario, run_scenario, trend_report, write_csv

    base = dict(scene=args.scene, frames=args.frames, seed=args.seed,
                repeats=args.repeats)
    scenarios = []
    if args.sweep == "d":
        for d in (0.01, 0.05, 0.1, 0.5, float("inf")):
            scenarios.append(Scenario(scenario_id=f"d={d}", size=args.size,
                                      x=args.x, d=d, **base))
    elif args.sweep == "x":
        for x in (0, 1, 5, 10, 15):
            scenarios.append(Scenario(scenario_id=f"x={x}", size=args.size,
                                      x=x, d=args.d, **base))
    else:
        for size in ("S", "M", "L"):
            scenarios.append(Scenario(scenario_id=f"size={size}", size=size,
                                      x=args.x, d=args.d, **base))
    results = []
    all_rows = []
    for sc in scenarios:
        res = run_scenario(sc)
        results.append(res)
        all_rows.extend(res.csv_rows)
        print(f"ran {sc.scenario_id}: RT median "
              f"{res.median_pass_ns('RT') / 1e6:.1f} ms, rays/frame {res.rays_per_frame()}")
    report = trend_report(results)
    print(report.to_text())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"sweep_{args.sweep}.csv")
        write_csv(path, all_rows)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .render import compare, read_pfm

    a = read_pfm(args.image_a)
    b = read_pfm(args.image_b)
    m = compare(a, b)
    print(f"rmse {m['rmse']:.6f}  mae {m['mae']:.6f}  max {m['max']:.6f}")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "render": cmd_render,
    "slice": cmd_slice,
    "bench": cmd_bench,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    from .bench import ScenarioError
    from .field import FieldFormatError

    try:
        _setup(args)
        return _COMMANDS[args.command](args)
    except (ConfigError, ScenarioError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FieldFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception:  # invariant breach or bug
        logging.getLogger("sdfshadow").exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
