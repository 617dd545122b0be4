"""Compiled kernels and their plain-Python fallbacks give the same numbers."""
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from trailerlq import SimulationConfig, simulate_closed_loop
from trailerlq import _kernels as kern
from trailerlq._accel import DISABLE_ENV, NUMBA_ENABLED
from trailerlq.frenet import TOL_TUBE
from trailerlq.vehicle import TOL_C1, TOL_JOINT

needs_numba = pytest.mark.skipif(not NUMBA_ENABLED, reason="numba disabled or missing")

CHILD = r"""
import json, math, sys
import numpy as np
from trailerlq import PathParameterSet, SimulationConfig, VehicleGeometry, eight_path, synthesize
from trailerlq import simulate_closed_loop
from trailerlq._accel import NUMBA_ENABLED
from trailerlq.ldi import grid_extremes
geo = VehicleGeometry()
K, _ = synthesize(geo)
tr = simulate_closed_loop(SimulationConfig(eight_path(geo), K, (-4.2, -0.1, 0.1, -0.3), duration=5.0))
lo, hi, _, _, n = grid_extremes(PathParameterSet(), geo, K, math.radians(2.0), 0.02, backend="numba")
print(json.dumps({"numba": NUMBA_ENABLED, "E": tr.errors[-1].tolist(), "n": len(tr),
                  "lo": lo.tolist(), "hi": hi.tolist(), "points": int(n)}))
"""


def child(disable):
    env = dict(os.environ)
    env.pop(DISABLE_ENV, None)
    if disable:
        env[DISABLE_ENV] = "1"
    r = subprocess.run([sys.executable, "-c", CHILD], env=env, capture_output=True, text=True,
                       timeout=600)
    assert r.returncode == 0, r.stderr
    return json.loads(r.stdout.strip().splitlines()[-1])


@needs_numba
def test_flag_switches_to_the_fallback():
    fast, slow = child(False), child(True)
    assert fast["numba"] and not slow["numba"]
    assert fast["n"] == slow["n"] and fast["points"] == slow["points"]
    assert np.allclose(fast["E"], slow["E"], rtol=0, atol=1e-12)
    assert np.allclose(fast["lo"], slow["lo"], rtol=1e-13, atol=1e-15)
    assert np.allclose(fast["hi"], slow["hi"], rtol=1e-13, atol=1e-15)


@needs_numba
def test_kernel_py_funcs_agree(rng):
    L = (3.8, 2.8, 6.6, 0.72)
    for _ in range(200):
        args = (rng.uniform(-1, 1), rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2),
                rng.uniform(-0.2, 0.2), rng.uniform(-0.1, 0.1), rng.uniform(-0.6, 0.6),
                rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3))
        a = kern.jacobian_entries(*args, *L)
        b = kern.jacobian_entries.py_func(*args, *L)
        assert np.allclose(a, b, rtol=1e-14, atol=1e-15)
        a = kern.error_rhs(*args[:-1], args[-1], -1.0, *L)
        b = kern.error_rhs.py_func(*args[:-1], args[-1], -1.0, *L)
        assert np.allclose(a, b, rtol=1e-14, atol=1e-15)
    for a in (-7.0, -math.pi, math.pi, 0.3, 10.0):
        w = kern.wrap_angle(a)
        assert w == kern.wrap_angle.py_func(a) and -math.pi < w <= math.pi


@needs_numba
def test_simulation_kernel_py_func(eight, gain):
    cfg = SimulationConfig(eight, gain, (1.0, 0.05, -0.05, 0.1), duration=3.0)
    fast = simulate_closed_loop(cfg)
    p0 = fast.states[0]
    out = kern.simulate_closed_loop.py_func(
        eight.s, eight.X, eight.D, eight.U, p0, cfg.start_s, cfg.v3, cfg.K, cfg.dt, cfg.n_steps,
        cfg.window, -1.0, TOL_JOINT, TOL_C1, TOL_TUBE, *eight.geometry.lengths)
    n = out[0]
    assert n == len(fast) and out[1] == fast.status
    assert np.allclose(out[4][:n], fast.errors, rtol=0, atol=1e-12)
