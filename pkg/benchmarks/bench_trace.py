"""Compare the compiled and pure-Python tracing kernels on the default stack.

    python3 benchmarks/bench_trace.py [--rays N] [--repeat K]

Rays start at the front of the stack with small random angles, mixed
polarisation and wavelengths in the signal/idler bands, and run through the
crystals, compensators and the asphere to the collection plane.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from spdcfid.harness import scenario as sc
from spdcfid.harness.config import build_config
from spdcfid.raytrace import backend
from spdcfid.raytrace.system import RayBatch
from spdcfid.raytrace.tracer import trace_batch


def make_rays(n: int, seed: int) -> RayBatch:
    rng = np.random.default_rng(seed)
    a = np.deg2rad(rng.uniform(-1.0, 1.0, n))
    lam = np.where(rng.random(n) < 0.5, rng.uniform(0.770, 0.790, n), rng.uniform(0.832, 0.852, n))
    return RayBatch(z=np.zeros(n), x=rng.uniform(-0.1, 0.1, n), dz=np.cos(a), dx=np.sin(a), lam_um=lam,
                    pol_h=rng.random(n) < 0.5, t=np.zeros(n), start=np.zeros(n, dtype=np.int64))


def time_backend(name: str, system, n: int, repeat: int) -> tuple[float, RayBatch]:
    best = np.inf
    out = None
    for _ in range(repeat):
        rays = make_rays(n, 1)
        t0 = time.perf_counter()
        out, _ = trace_batch(rays, system, backend_name=name)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cfg = build_config()
    params = sc.resolve_stack(cfg)
    system = sc.build_system(cfg, params, sc.lens_prescription(cfg))
    print(f"{len(system.surfaces)} surfaces, {args.rays} rays, best of {args.repeat}")

    results = {}
    for name in backend.AVAILABLE:
        dt, rays = time_backend(name, system, args.rays, args.repeat)
        results[name] = rays
        print(f"{name:>7}: {dt:8.4f} s  {args.rays / dt / 1e6:8.3f} Mrays/s")
    if "cython" in results:
        c, p = results["cython"], results["python"]
        ok = c.status == 0
        print(f"max |dt| {np.max(np.abs(c.t[ok] - p.t[ok])):.3e} fs, "
              f"max |dx| {np.max(np.abs(c.x[ok] - p.x[ok])):.3e} mm, "
              f"status agree {bool(np.all(c.status == p.status))}")
    else:
        print("compiled kernel not built; only the Python fallback was timed")


if __name__ == "__main__":
    main()
