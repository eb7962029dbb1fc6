"""Command-line front end.

Every command is deterministic given its flags; numbers are printed with
9 significant digits and any error gives a message and a nonzero exit code.
"""
from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, io, projector, raycast_oracle
from ._parallel import set_threads
from .metrics import residual_projection_error

log = logging.getLogger("meshtomo")


def data_path(name: str) -> Path:
    """Path of a file shipped in the package ``data`` directory."""
    return Path(str(resources.files("meshtomo") / "data" / name))


def _prepare(path) -> str:
    io.ensure_parent(path)
    return path


def cmd_simulate(args) -> int:
    scene = io.read_scene(args.scene)
    geom = io.read_geometry(args.geom)
    stack = raycast_oracle.cast_forward(scene.mesh, scene.materials, geom)
    if args.noise:
        stack = raycast_oracle.add_noise(stack, args.noise, args.seed)
    io.write_stack(stack, _prepare(args.out))
    print(f"ambiguous_rays {stack.diagnostics.get('ambiguous_rays', 0)}")
    return 0


def cmd_project(args) -> int:
    scene = io.read_scene(args.scene)
    geom = io.read_geometry(args.geom)
    stack = projector.forward(scene.mesh, scene.materials, geom)
    io.write_stack(stack, _prepare(args.out))
    print(f"artifact_pixels {stack.diagnostics['artifact_pixels']}")
    return 0


def cmd_reconstruct(args) -> int:
    from .shape_opt import reconstruct

    data = io.read_stack(args.data)
    scene = io.read_scene(args.scene)
    config = io.read_config(args.config)
    free = scene.mu_free | config.solve_mu
    free[0] = False
    result = reconstruct(data, scene.mesh, config, scene.materials, free)
    out_mesh = Path(_prepare(args.out_mesh))
    io.write_obj(result.mesh, out_mesh)
    io.write_scene(out_mesh.with_suffix(".scene.json"), out_mesh.name, result.mesh,
                   result.materials, free)
    io.write_history(result.history, _prepare(args.out_history))
    last = result.history[-1]
    print(f"iterations {len(result.history)}")
    print(f"E_data {io.fmt(last.e_data)}")
    print(f"E {io.fmt(last.e_total)}")
    for k in range(1, len(result.materials)):
        print(f"mu[{k}] {io.fmt(result.materials.mu[k])}")
    if "aborted" in result.diagnostics:
        print(f"error: aborted: {result.diagnostics['aborted']}", file=sys.stderr)
        return 1
    return 0


def cmd_sirt(args) -> int:
    from .baselines import sirt

    data = io.read_stack(args.data)
    res = sirt(data, args.iters, args.grid, return_residuals=True)
    io.write_volume(res.volume, _prepare(args.out))
    print(f"iterations {len(res.residuals)}")
    print(f"residual {io.fmt(res.residuals[-1])}")
    if res.stopped_early:
        print("stopped_early 1")
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    scene = io.read_scene(args.scene or data_path("tetrahedron_scene.json"))
    geom = io.read_geometry(args.geom or data_path("small_geometry.json"))
    report = gradcheck.run(scene.mesh, scene.materials, geom, args.seed)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def cmd_metric(args) -> int:
    a = io.read_stack(args.a)
    b = io.read_stack(args.b)
    print(io.fmt(residual_projection_error(a, b)))
    return 0


def cmd_render(args) -> int:
    stack = io.read_stack(args.stack)
    if not 0 <= args.angle < stack.geometry.n_angles:
        raise ValueError(f"angle index {args.angle} out of range 0..{stack.geometry.n_angles - 1}")
    img = np.where(stack.valid[args.angle], stack.data[args.angle], 0.0)
    io.write_pgm(img, _prepare(args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshtomo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=0, help="worker threads (0 = one per CPU)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="ray-cast projections of a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--geom", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--noise", type=float, default=0.0, help="relative Gaussian noise level")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("project", help="rasterized projections of a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--geom", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("reconstruct", help="deform a mesh to fit projection data")
    s.add_argument("--data", required=True)
    s.add_argument("--scene", required=True, help="initial scene")
    s.add_argument("--config", required=True)
    s.add_argument("--out-mesh", required=True)
    s.add_argument("--out-history", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("sirt", help="voxel SIRT reconstruction")
    s.add_argument("--data", required=True)
    s.add_argument("--grid", type=int, default=64)
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sirt)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--scene", help="defaults to the bundled tetrahedron")
    s.add_argument("--geom", help="defaults to a small bundled geometry")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("metric", help="residual projection error between two stacks")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.set_defaults(func=cmd_metric)

    s = sub.add_parser("render", help="write one projection as a 16-bit PGM")
    s.add_argument("--stack", required=True)
    s.add_argument("--angle", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(args.threads)
        return args.func(args)
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
