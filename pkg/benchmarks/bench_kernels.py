"""Wall-clock comparison of the compiled and pure-Python RK4 kernels.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from dualtrap import kernels
from dualtrap.dynamics import IDEAL_HARDWARE, IonSystem, integrate, integrate_harmonic_well, transport_round_trip
from dualtrap.potential import calibrate, nearest_minimum
from dualtrap.waveform import TrajectorySpec


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--duration", type=float, default=30e-6, help="one-way transfer time [s]")
    args = p.parse_args(argv)

    basis = calibrate()
    prog = transport_round_trip(basis, args.duration, IDEAL_HARDWARE)
    z0, _ = nearest_minimum(basis, prog.samples[0], 0.0, window=20e-6)
    spec = TrajectorySpec(0.0, 1.2e-3, args.duration)
    cases = {
        "electrodes": lambda b: integrate(basis, prog, IonSystem([z0]), backend=b, nu_max=2.9e6 * 1.02),
        "harmonic": lambda b: integrate_harmonic_well(spec, 2.9e6, backend=b),
    }
    backends = ["python"]
    try:
        kernels.get_backend("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; timing the Python kernels only")
    print(f"{'kernel':<12}{'backend':<9}{'steps':>9}{'best [s]':>11}{'us/step':>10}")
    for name, fn in cases.items():
        ref = None
        for b in backends:
            t, traj = best_of(lambda: fn(b), args.repeat)
            steps = round((traj.times[-1] - traj.times[0]) / traj.metadata["dt"])
            print(f"{name:<12}{b:<9}{steps:>9}{t:>11.4f}{1e6 * t / steps:>10.3f}")
            if ref is None:
                ref = (t, traj)
            else:
                dz = np.abs(traj.positions - ref[1].positions).max()
                print(f"{'':<12}cython speedup {t / ref[0]:.1f}x, max |dz| {dz:.2e} m")


if __name__ == "__main__":
    main()
