"""Time the numba kernel path against the pure-numpy fallback.

The package picks one backend at import time (MESHSTAB_NUMBA); this script
ignores that switch and calls both implementations directly so a single run
produces a side-by-side table.  The first numba call per kernel compiles,
so every kernel gets one untimed warmup.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from meshstab import kernels
from meshstab.frames import GrayFrame
from meshstab.mesh import build_frame_mesh
from meshstab.trajectory import FeatureTrajectory, TrajectorySet
from meshstab.warp import FrameWarp, triangle_affine


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _corner_inputs(rng, w, h):
    img = rng.uniform(0.0, 255.0, (h, w))
    gx, gy = kernels.gradients(img)
    return gx, gy


def _lk_inputs(rng, w, h, n_points):
    base = rng.uniform(0.0, 255.0, (h, w))
    # shift by a fixed subpixel amount so the solver has real work to do
    nxt = np.roll(base, (1, 2), axis=(0, 1))
    gx, gy = kernels.gradients(base)
    margin = 12.0
    pts = np.column_stack([
        rng.uniform(margin, w - 1 - margin, n_points),
        rng.uniform(margin, h - 1 - margin, n_points),
    ])
    return base, nxt, gx, gy, pts


def _raster_inputs(rng, w, h, n_features):
    pts = np.column_stack([
        rng.uniform(8.0, w - 9.0, n_features),
        rng.uniform(8.0, h - 9.0, n_features),
    ])
    trajs = tuple(
        FeatureTrajectory(id=i, start_frame=0, points=pts[i:i + 1].copy())
        for i in range(n_features)
    )
    ts = TrajectorySet(trajs, 1, (w, h))
    mesh = build_frame_mesh(ts, 0)
    src = mesh.points
    dst = src.copy()
    nf = mesh.n_features
    dst[:nf] += rng.uniform(-2.0, 2.0, (nf, 2))
    affines = np.array([
        triangle_affine(src[tri], dst[tri]) for tri in mesh.triangles
    ])
    fw = FrameWarp(triangles=mesh.triangles, src=src, dst=dst,
                   affines=affines, flipped=())
    img = rng.uniform(0.0, 255.0, (h, w))
    tris = dst[mesh.triangles]
    return img, tris, fw.inverse_affines()


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--width", type=int, default=320)
    ap.add_argument("--height", type=int, default=240)
    ap.add_argument("--points", type=int, default=200,
                    help="tracked points for the flow kernel")
    ap.add_argument("--features", type=int, default=60,
                    help="mesh features for the render kernel")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    w, h = args.width, args.height
    print(f"frame {w}x{h}, repeat {args.repeat}, numba available: {kernels.HAS_NUMBA}")

    jobs = []

    gx, gy = _corner_inputs(rng, w, h)
    jobs.append((
        "corner_min_eig",
        (lambda: kernels._corner_fast(gx, gy, 3)) if kernels.HAS_NUMBA else None,
        lambda: kernels._corner_numpy(gx, gy, 3),
    ))

    base, nxt, lgx, lgy, pts = _lk_inputs(rng, w, h, args.points)

    def run_lk(fn):
        disp = np.zeros_like(pts)
        status = np.ones(pts.shape[0], dtype=np.uint8)
        fn(base, nxt, lgx, lgy, pts, disp, status, 10, 30, 0.01, 1e-4, 1)
        return disp

    jobs.append((
        "lk_refine_level",
        (lambda: run_lk(kernels._lk_fast)) if kernels.HAS_NUMBA else None,
        lambda: run_lk(kernels._lk_numpy),
    ))

    img, tris, inv = _raster_inputs(rng, w, h, args.features)

    def run_raster(fn):
        out = np.zeros((h, w))
        owner = np.full((h, w), -1, dtype=np.int64)
        return fn(img, tris, inv, out, owner)

    jobs.append((
        "rasterize",
        (lambda: run_raster(kernels._raster_fast)) if kernels.HAS_NUMBA else None,
        lambda: run_raster(kernels._raster_numpy),
    ))

    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>9}")
    for name, fast, plain in jobs:
        t_plain = 1000.0 * _time(plain, args.repeat)
        if fast is None:
            print(f"{name:<18} {'n/a':>10} {t_plain:>10.2f} {'n/a':>9}")
            continue
        fast()  # warmup: the first call compiles
        t_fast = 1000.0 * _time(fast, args.repeat)
        print(f"{name:<18} {t_fast:>10.2f} {t_plain:>10.2f} "
              f"{t_plain / t_fast:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
