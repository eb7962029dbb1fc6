"""Compare the compiled and numpy kernel backends on typical workloads.

    python benchmarks/bench_kernels.py [--repeat N] [--size {small,medium}]
"""
import argparse
import time

import numpy as np

from meshtomo import kernels, projector, raycast_oracle
from meshtomo.baselines import VoxelVolume, voxel_backproject, voxel_forward
from meshtomo.geometry import MaterialTable, ScanGeometry, make_icosphere

SIZES = {
    "small": dict(subdiv=3, det=32, angles=8, grid=32),
    "medium": dict(subdiv=4, det=64, angles=32, grid=64),
}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(size):
    cfg = SIZES[size]
    mesh = make_icosphere(cfg["subdiv"], 0.6)
    mats = MaterialTable.single(1.0)
    geom = ScanGeometry.circular(cfg["angles"], cfg["det"], cfg["det"], 2.0 / cfg["det"])
    d_p = np.random.default_rng(0).standard_normal(geom.shape)
    vol = VoxelVolume.covering(geom, cfg["grid"])
    vol = vol.like(np.random.default_rng(1).random(vol.shape))
    stack = voxel_forward(vol, geom)
    label = f"{mesh.n_faces} faces, {cfg['angles']}x{cfg['det']}^2 px, {cfg['grid']}^3 voxels"
    return label, {
        "forward": lambda: projector.forward(mesh, mats, geom),
        "forward+backward": lambda: projector.backward(mesh, mats, geom, d_p),
        "ray cast": lambda: raycast_oracle.cast_forward(mesh, mats, geom),
        "voxel forward": lambda: voxel_forward(vol, geom),
        "voxel backproject": lambda: voxel_backproject(stack, vol),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--size", choices=sorted(SIZES), default="small")
    args = ap.parse_args()

    label, jobs = workloads(args.size)
    names = kernels.available()
    print(f"workload: {label}; best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for job, fn in jobs.items():
        t = {}
        for name in names:
            with kernels.backend(name):
                fn()  # warm up
                t[name] = best_of(fn, args.repeat)
        row = f"{job:<20}" + "".join(f"{t[n] * 1e3:>10.1f}ms" for n in names)
        if "cython" in t:
            row += f"{t['python'] / t['cython']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
