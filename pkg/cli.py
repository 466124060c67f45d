"""
Command-line entry point for the simulation, reconstruction and design pipeline.

    python cli.py gen-scene --kind polar-target --out scenes/target.stokes
    python cli.py psf --profile design/profile.prof --config run.toml --out psf/stack.psf
    python cli.py encode --scene scenes/target.stokes --psf psf/stack.psf --out meas --four
    python cli.py decode --manifest meas --psf psf/stack.psf --out recon/target.stokes

Exit codes: 0 success, 1 runtime or numerical error, 2 configuration error.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError
from scipy import fft as sfft

from config import LOG_LEVEL, PROFILE_LENGTH, DEPTH_MAX
from datamodel.errors import ConfigurationError, DPSEError
from datamodel.types import SpectralCube
from datamodel.validation import validate_cube
from design.optimizer import check_gradient, optimize
from evaluation.metrics import evaluate
from optics.doe import HeightProfile, rasterize
from optics.psf import psf
from processing.decoder import reconstruct, reconstruct_polarimetric
from processing.encoder import NoiseKind, acquire_four, encode
from processing.polarimetry import PolarizedScene, dolp_aolp
from run_config import RunConfig, load_run_config
from storage import export, formats, scenes

logger = logging.getLogger("dpse")

DEFAULT_DECODE_BAND_NM = 590.0


def _load(args) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None))
    if getattr(args, "threads", None) is not None:
        cfg = cfg.model_copy(update={"threads": args.threads})
    return cfg


def _response(cfg: RunConfig, args, grid):
    if getattr(args, "response", None):
        return formats.read_response(args.response)
    return cfg.response_table(grid)


def cmd_psf(args) -> int:
    cfg = _load(args)
    profile = formats.read_profile(args.profile)
    crop = args.crop if args.crop is not None else cfg.optics.crop
    height_map = rasterize(profile, cfg.optics.grid_size, cfg.optics.pixel_pitch)
    stack = psf(cfg.optical_config(), height_map, cfg.wavelength_grid(), crop,
                widen=cfg.optics.widen, max_workers=cfg.threads)

    formats.write_psf(stack, args.out)
    previews = export.export_psf_previews(stack, Path(str(args.out) + "_previews"))
    print(f"Wrote {stack.grid.count} kernels ({stack.k}x{stack.k}) to {args.out}, previews in {previews[0].parent}")
    for wavelength, fraction in zip(stack.grid.wavelengths, stack.energy_fraction):
        print(f"  {wavelength:6.1f} nm  energy in crop {fraction:.4f}")
    return 0


def cmd_encode(args) -> int:
    cfg = _load(args)
    stack = formats.read_psf(args.psf)
    response = _response(cfg, args, stack.grid)
    noise = cfg.noise_model()
    if args.noise:
        noise = replace(noise, kind=NoiseKind(args.noise))
    if args.sigma is not None:
        noise = replace(noise, sigma=args.sigma)
    if args.seed is not None:
        noise = noise.with_seed(args.seed)

    if args.four:
        scene = PolarizedScene(formats.read_stokes(args.scene))
        measurements = acquire_four(scene, stack, response, noise)
        manifest = formats.write_measurement_set(measurements, args.out, response, str(args.psf))
        print(f"Wrote M1..M4 and {manifest}")
    else:
        cube = formats.read_cube(args.scene)
        image = encode(cube, stack, response, noise)
        formats.write_rgb(image, args.out)
        print(f"Wrote {image.height}x{image.width} measurement to {args.out}")
    return 0


def cmd_decode(args) -> int:
    cfg = _load(args)
    stack = formats.read_psf(args.psf)
    deconv = cfg.deconv_config()
    if args.epsilon is not None or args.iterations is not None:
        deconv = replace(
            deconv,
            epsilon=deconv.epsilon if args.epsilon is None else args.epsilon,
            iterations=deconv.iterations if args.iterations is None else args.iterations,
        )

    if args.manifest:
        band = stack.grid.index_of(DEFAULT_DECODE_BAND_NM) if args.band is None else args.band
        if not 0 <= band < stack.grid.count:
            raise ConfigurationError(f"Band {band} out of range 0..{stack.grid.count - 1}")
        measurements = formats.read_measurement_set(args.manifest)
        response = formats.read_response(args.response) if args.response else (
            formats.manifest_response(args.manifest) or cfg.response_table(stack.grid))
        stokes, cubes = reconstruct_polarimetric(measurements, stack, response, deconv)
        formats.write_stokes(stokes, args.out)

        maps = dolp_aolp(stokes, band)
        export.export_dolp_png(maps, str(args.out) + "_dolp.png")
        export.export_aolp_png(maps, str(args.out) + "_aolp.png")
        for name, cube in zip(("P1", "P2", "P3", "P4"), cubes):
            print(f"{name}: {validate_cube(cube).summary()}")
        print(f"Wrote Stokes cube to {args.out}; DoLP/AoLP maps at {stack.grid.wavelengths[band]:.0f} nm")
    elif args.measurement:
        image = formats.read_rgb(args.measurement)
        response = _response(cfg, args, stack.grid)
        cube = reconstruct(image, stack, response, deconv)
        formats.write_cube(cube, args.out)
        print(validate_cube(cube).summary())
        print(f"Wrote {cube.shape[0]}x{cube.shape[1]}x{cube.shape[2]} cube to {args.out}")
    else:
        raise ConfigurationError("decode needs --measurement or --manifest")
    return 0


def _training_scenes(directory: Optional[str]) -> List[SpectralCube]:
    if not directory:
        return []
    paths = sorted(Path(directory).glob("*.cube"))
    if not paths:
        raise ConfigurationError(f"No .cube files in {directory}")
    return [formats.read_cube(p) for p in paths]


def cmd_optimize(args) -> int:
    cfg = _load(args)
    if args.iterations is not None:
        cfg = cfg.model_copy(update={"design": cfg.design.model_copy(update={"iterations": args.iterations})})
    problem = cfg.design_problem(_training_scenes(args.scenes))
    initial = formats.read_profile(args.profile) if args.profile else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.check_gradient:
        start = initial or HeightProfile.random(cfg.seed, problem.profile_length, problem.depth_max)
        report = check_gradient(problem, start, cfg.design.probes, seed=cfg.seed)
        print(f"Gradient check: max relative error {report.max_rel_error:.3e} on {len(report.probe_indices)} probes")

    result = optimize(problem, initial)
    formats.write_profile(result.profile, out / "profile.prof")
    export.write_trajectory(out / "trajectory.csv", result.trajectory)

    every = cfg.design.snapshot_every
    if every:
        for i, w in enumerate(result.profiles):
            if i % every == 0:
                formats.write_profile(HeightProfile(w, result.profile.depth_max), out / "snapshots" / f"iter_{i:04d}.prof")

    summary = {
        "objective": problem.objective.value,
        "iterations": problem.iterations,
        "initial_objective": result.initial_objective,
        "final_objective": result.final_objective,
        "accepted_steps": sum(row.accepted for row in result.trajectory[1:]),
    }
    if result.quantized_profile is not None:
        formats.write_profile(result.quantized_profile, out / "profile_quantized.prof")
        summary["quantized_objective"] = result.quantized_objective
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"Objective {result.initial_objective:.6e} -> {result.final_objective:.6e}; results in {out}")
    return 0


def _read_any(path: str) -> np.ndarray:
    kind = formats.sniff_kind(path)
    if kind == "SpectralCube":
        return formats.read_cube(path).data
    if kind == "RGBImage":
        return formats.read_rgb(path).data
    if kind == "StokesCube":
        return formats.read_stokes(path).stacked()
    raise ConfigurationError(f"metrics cannot compare artifacts of kind {kind!r}")


def cmd_metrics(args) -> int:
    report = evaluate(_read_any(args.a), _read_any(args.b), args.peak)
    print(report.to_table() if args.table else report.to_json())
    return 0


def cmd_render(args) -> int:
    kind = formats.sniff_kind(args.cube)
    if kind == "SpectralCube":
        cube = formats.read_cube(args.cube)
        response = formats.read_response(args.response) if args.response else None
        export.export_rgb_png(cube, args.out, response, args.bits)
    elif kind == "RGBImage":
        export.export_rgb_png(formats.read_rgb(args.cube), args.out, bit_depth=args.bits)
    else:
        raise ConfigurationError(f"render expects a SpectralCube or RGBImage, got {kind!r}")
    print(f"Wrote {args.out}")
    return 0


def cmd_gen_scene(args) -> int:
    cfg = _load(args)
    grid = cfg.wavelength_grid()
    if args.kind == "checker":
        cube = scenes.color_checker(args.height, args.width, grid)
        if args.stokes:
            formats.write_stokes(scenes.unpolarized(cube), args.out)
        else:
            formats.write_cube(cube, args.out)
    elif args.kind == "polar-target":
        formats.write_stokes(scenes.polar_target(args.height, args.width, grid), args.out)
    else:
        formats.write_stokes(scenes.circular_target(args.height, args.width, grid), args.out)
    print(f"Wrote {args.kind} scene ({args.height}x{args.width}x{grid.count}) to {args.out}")
    return 0


def cmd_gen_profile(args) -> int:
    if args.kind == "flat":
        profile = HeightProfile.constant(args.height, args.length, args.depth)
    else:
        profile = HeightProfile.random(args.seed, args.length, args.depth)
    formats.write_profile(profile, args.out)
    print(f"Wrote {args.kind} profile ({profile.length} rings) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Diffractive spectro-polarimetric imaging toolkit")
    parser.add_argument("--threads", type=int, default=None, help="FFT and band workers (default: config)")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("psf", help="Compute the PSF stack of a height profile")
    p.add_argument("--profile", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--crop", type=int)
    p.set_defaults(handler=cmd_psf)

    p = sub.add_parser("encode", help="Simulate RGB measurements of a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--psf", required=True)
    p.add_argument("--response", help="Response table CSV")
    p.add_argument("--config")
    p.add_argument("--noise", choices=[k.value for k in NoiseKind])
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--four", action="store_true", help="Stokes scene -> M1..M4 and a manifest")
    p.set_defaults(handler=cmd_encode)

    p = sub.add_parser("decode", help="Reconstruct a spectral or Stokes cube")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--measurement")
    source.add_argument("--manifest")
    p.add_argument("--psf", required=True)
    p.add_argument("--response")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--band", type=int, help="Band index of the DoLP/AoLP maps")
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("optimize", help="Design a height profile")
    p.add_argument("--config")
    p.add_argument("--scenes", help="Directory of .cube training scenes")
    p.add_argument("--profile", help="Initial profile")
    p.add_argument("--iterations", type=int)
    p.add_argument("--check-gradient", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_optimize)

    p = sub.add_parser("metrics", help="Compare two artifacts")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--peak", type=float)
    p.add_argument("--table", action="store_true", help="Table instead of JSON")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("render", help="PNG of a cube (synthesized RGB) or RGB image")
    p.add_argument("--cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--response")
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser("gen-scene", help="Write a synthetic scene")
    p.add_argument("--kind", choices=sorted(scenes.SCENE_KINDS), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--stokes", action="store_true", help="checker as an unpolarized Stokes cube")
    p.set_defaults(handler=cmd_gen_scene)

    p = sub.add_parser("gen-profile", help="Write a flat or random height profile")
    p.add_argument("--kind", choices=("flat", "random"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=float, default=0.0, help="Flat profile height (m)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=PROFILE_LENGTH)
    p.add_argument("--depth", type=float, default=DEPTH_MAX)
    p.set_defaults(handler=cmd_gen_profile)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else LOG_LEVEL,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _load(args).threads
        if threads < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {threads}")
        with sfft.set_workers(threads):
            return args.handler(args)
    except ValidationError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return 2
    except DPSEError as e:
        kind = "Configuration error" if isinstance(e, ConfigurationError) else "Error"
        print(f"{kind}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
