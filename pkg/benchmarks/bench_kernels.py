"""Compare the numba and pure-numpy kernel paths.

Each path runs in its own interpreter because the dispatch is chosen at
import time from ``BERTHTRACK_DISABLE_NUMBA``::

    python3 benchmarks/bench_kernels.py            # both paths, side by side
    python3 benchmarks/bench_kernels.py --single   # current path only
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _time(fn, repeat):
    fn()  # warm-up (and JIT compilation)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def run_single():
    from berthtrack import kernels
    from berthtrack._accel import USE_NUMBA
    from berthtrack.dynamics import DynamicsConfig, advance
    from berthtrack.env import TrackingEnv
    from berthtrack.geometry import ShipGeometry
    from berthtrack.scenario import generate_random_trajectory, generate_training_obstacles

    rng = np.random.default_rng(0)
    geom = ShipGeometry()
    traj = generate_random_trajectory(200.0, 5.0, rng)
    obs = generate_training_obstacles(traj, geom)
    cfg = DynamicsConfig()
    q = np.ascontiguousarray(traj.positions)
    x = np.array([0.0, 0.0, 0.0, 0.2, 0.0, 0.0])
    act = np.array([0.0, 0.0, 10.0, 0.0])
    cmd = np.array([-20.0, 60.0, 10.0, 10.0])
    env = TrackingEnv()

    def episode():
        env.reset(traj, obs, None, np.random.default_rng(1))
        while not env.step(cmd).terminated:
            pass

    res = {
        "numba": USE_NUMBA,
        "segments": int(len(obs.segs)),
        "nearest_points (41 queries) [us]": 1e6 * _time(lambda: kernels.nearest_points(obs.segs, q), 200),
        "ellipse_hits [us]": 1e6 * _time(lambda: kernels.ellipse_hits(obs.segs, obs.starts, obs.bbox, 1.0, 0.5,
                                                                      0.3, 2.25, 0.49), 2000),
        "advance 5 s (50 RK4 steps) [us]": 1e6 * _time(lambda: advance(x, act, cmd, np.zeros(50), 0.0, cfg), 200),
        "env episode [ms]": 1e3 * _time(episode, 5),
    }
    print(json.dumps(res))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--single", action="store_true")
    args = ap.parse_args()
    if args.single:
        run_single()
        return
    rows = []
    for disable in ("0", "1"):
        env = dict(os.environ, BERTHTRACK_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, __file__, "--single"], env=env, check=True,
                             capture_output=True, text=True).stdout
        rows.append(json.loads(out.strip().splitlines()[-1]))
    keys = [k for k in rows[0] if k not in ("numba", "segments")]
    print(f"obstacle segments: {rows[0]['segments']}")
    print(f"{'kernel':36s} {'numba':>12s} {'numpy':>12s} {'speed-up':>9s}")
    for k in keys:
        a, b = rows[0][k], rows[1][k]
        print(f"{k:36s} {a:12.1f} {b:12.1f} {b / a:9.1f}")


if __name__ == "__main__":
    main()
