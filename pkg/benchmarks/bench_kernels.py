#!/usr/bin/env python3
"""Compiled kernels against their plain fallbacks.

Two comparisons:

* grid scan of the closed-loop entries: numba kernel vs the vectorized numpy
  scan, in one process;
* closed-loop RK4 rollout: the same kernel compiled and as plain Python, the
  latter in a child process started with TRAILERLQ_DISABLE_NUMBA=1.

    python benchmarks/bench_kernels.py [--beta-step-deg 0.5] [--sim-seconds 20] [--json]
"""
import argparse
import json
import math
import os
import subprocess
import sys
import time

import numpy as np

RUNS = 3


def best_of(fn, runs=RUNS):
    fn()  # warmup / compile
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_grid(beta_step_deg, u0_step):
    from trailerlq import PathParameterSet, VehicleGeometry, synthesize
    from trailerlq._accel import NUMBA_ENABLED
    from trailerlq.ldi import grid_extremes

    geo = VehicleGeometry()
    K, _ = synthesize(geo)
    pset = PathParameterSet()
    step = math.radians(beta_step_deg)
    out = {}
    ref = None
    for backend in ("numba", "numpy") if NUMBA_ENABLED else ("numpy",):
        res = grid_extremes(pset, geo, K, step, u0_step, backend=backend)
        if ref is None:
            ref = res
        else:
            out["max_abs_diff"] = float(max(np.max(np.abs(ref[0] - res[0])),
                                            np.max(np.abs(ref[1] - res[1]))))
        out[backend] = best_of(lambda: grid_extremes(pset, geo, K, step, u0_step, backend=backend))
        out["points"] = int(res[4])
    return out


def bench_sim(seconds):
    from trailerlq import SimulationConfig, VehicleGeometry, eight_path, simulate_closed_loop, synthesize

    geo = VehicleGeometry()
    K, _ = synthesize(geo)
    path = eight_path(geo)
    cfg = SimulationConfig(path, K, (-4.2, -0.1, 0.1, -0.3), duration=seconds)
    tr = simulate_closed_loop(cfg)
    runs = RUNS if os.environ.get("TRAILERLQ_DISABLE_NUMBA") is None else 1
    return {"time": best_of(lambda: simulate_closed_loop(cfg), runs), "steps": len(tr),
            "final_errors": tr.errors[-1].tolist()}


def worker(args):
    from trailerlq._accel import NUMBA_ENABLED
    res = {"numba_enabled": NUMBA_ENABLED, "sim": bench_sim(args.sim_seconds)}
    if NUMBA_ENABLED:
        res["grid"] = bench_grid(args.beta_step_deg, args.u0_step)
    print(json.dumps(res))


def child(extra_env, args):
    env = dict(os.environ, **extra_env)
    cmd = [sys.executable, __file__, "--worker", "--sim-seconds", str(args.sim_seconds),
           "--beta-step-deg", str(args.beta_step_deg), "--u0-step", str(args.u0_step)]
    out = subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout
    return json.loads(out.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--beta-step-deg", type=float, default=0.5)
    ap.add_argument("--u0-step", type=float, default=2e-3)
    ap.add_argument("--sim-seconds", type=float, default=20.0)
    ap.add_argument("--json", action="store_true")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        return worker(args)

    fast = child({}, args)
    slow = child({"TRAILERLQ_DISABLE_NUMBA": "1"}, args)
    if not fast["numba_enabled"]:
        sys.exit("numba is not importable; nothing to compare")
    sim_err = float(np.max(np.abs(np.subtract(fast["sim"]["final_errors"], slow["sim"]["final_errors"]))))
    result = {
        "grid_points": fast["grid"]["points"],
        "grid_numba_s": fast["grid"]["numba"],
        "grid_numpy_s": fast["grid"]["numpy"],
        "grid_speedup": fast["grid"]["numpy"] / fast["grid"]["numba"],
        "grid_max_abs_diff": fast["grid"]["max_abs_diff"],
        "sim_steps": fast["sim"]["steps"],
        "sim_numba_s": fast["sim"]["time"],
        "sim_python_s": slow["sim"]["time"],
        "sim_speedup": slow["sim"]["time"] / fast["sim"]["time"],
        "sim_final_error_diff": sim_err,
    }
    if args.json:
        print(json.dumps(result, indent=2))
        return
    print(f"grid scan, {result['grid_points']} points")
    print(f"  numba  {result['grid_numba_s']:8.3f} s")
    print(f"  numpy  {result['grid_numpy_s']:8.3f} s   x{result['grid_speedup']:.1f}"
          f"   max |diff| {result['grid_max_abs_diff']:.1e}")
    print(f"closed-loop rollout, {result['sim_steps']} RK4 steps")
    print(f"  numba  {result['sim_numba_s']:8.3f} s")
    print(f"  python {result['sim_python_s']:8.3f} s   x{result['sim_speedup']:.1f}"
          f"   final-error diff {result['sim_final_error_diff']:.1e}")


if __name__ == "__main__":
    main()
