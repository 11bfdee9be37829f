#!/usr/bin/env python3
"""Benchmark: compiled extension core vs pure-Python fallback.

Times the closed-loop integration in both dynamics modes and prints the
substep throughput of each kernel.  Run after building the extension:

    python benchmarks/bench_kernels.py
"""
import time
import warnings

import spinosc
from spinosc import SimConfig, default_system, threshold_gain
from spinosc.feedback import BandPassSpec, FeedbackChain, PhaseShifterSpec
from spinosc.sim import run

warnings.simplefilter("ignore")

CASES = [
    ("adiabatic", dict(dt=1e-4, duration=20.0, mode="adiabatic")),
    ("full", dict(dt=2e-6, duration=0.5, mode="full")),
]


def chain(sys_):
    return FeedbackChain(bandpass=BandPassSpec(),
                         shifter=PhaseShifterSpec(theta=90.0),
                         gain=2.0 * threshold_gain(sys_))


def bench(use_compiled):
    sys_ = default_system()
    rows = []
    for name, kw in CASES:
        cfg = SimConfig(loop_mode="closed", initial_tip_xe=10.0, **kw)
        n_sub = cfg.n_loop * cfg.n_sub
        t0 = time.perf_counter()
        run(sys_, chain(sys_), cfg, use_compiled=use_compiled)
        dt = time.perf_counter() - t0
        rows.append((name, n_sub, dt, n_sub / dt))
    return rows


def main():
    print(f"compiled extension available: {spinosc.COMPILED_CORE}")
    results = {}
    for label, flag in (("python", False),) + (
            (("compiled", True),) if spinosc.COMPILED_CORE else ()):
        results[label] = bench(flag)
        for name, n, dt, rate in results[label]:
            print(f"  {label:9s} {name:10s} {n:>10d} substeps  "
                  f"{dt:8.3f} s  {rate / 1e6:8.2f} Msteps/s")
    if "compiled" in results:
        for (name, _, t_py, _), (_, _, t_c, _) in zip(results["python"],
                                                      results["compiled"]):
            print(f"  speedup {name:10s} {t_py / t_c:6.1f}x")


if __name__ == "__main__":
    main()
