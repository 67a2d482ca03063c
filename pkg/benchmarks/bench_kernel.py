"""Per-cycle cost of the compiled kernel against the pure-Python fallback.

    python benchmarks/bench_kernel.py [--cycles N] [--py-cycles N]

Both kernels run from the same steady state on the same parameter vector;
the script also reports the largest state difference after the run.
"""

import argparse
import time

import numpy as np

from wptsim import _kernel_py
from wptsim._layout import N_REC
from wptsim.delay_comp import default_bank
from wptsim.rectifier_sim import RectifierConfig, Simulator

try:
    from wptsim import _kernel
except ImportError:   # extension not built
    _kernel = None


def time_kernel(run, sim, n_cycles, stride):
    S, E = sim.S.copy(), np.zeros_like(sim.E)
    rec = np.zeros((sim.n_steps // stride, N_REC))
    O = sim.offsets()
    t = time.perf_counter()
    for _ in range(n_cycles):
        run(S, sim.P, O, E, sim.n_steps, rec, stride)
    return (time.perf_counter() - t) / n_cycles, S


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cycles", type=int, default=2000, help="compiled kernel cycles")
    ap.add_argument("--py-cycles", type=int, default=20, help="pure-Python kernel cycles")
    ap.add_argument("--stride", type=int, default=20, help="waveform record stride")
    args = ap.parse_args(argv)

    cfg = RectifierConfig()
    sim = Simulator(cfg, default_bank(cfg.f0, cfg.t_cmp_off), record_stride=args.stride)
    sim.warm_up()

    py_t, py_S = time_kernel(_kernel_py.run_cycle, sim, args.py_cycles, args.stride)
    print(f"pure python : {py_t * 1e3:9.3f} ms/cycle ({args.py_cycles} cycles, "
          f"{cfg.steps_per_cycle} steps/cycle)")
    if _kernel is None:
        print("compiled    : not built (run `pip install -e . --no-build-isolation`)")
        return 0
    c_t, _ = time_kernel(_kernel.run_cycle, sim, args.cycles, args.stride)
    print(f"compiled    : {c_t * 1e3:9.3f} ms/cycle ({args.cycles} cycles)")
    print(f"speedup     : {py_t / c_t:9.1f}x")
    _, c_S = time_kernel(_kernel.run_cycle, sim, args.py_cycles, args.stride)
    print(f"max |dS| after {args.py_cycles} cycles: {np.max(np.abs(c_S - py_S)):.3g}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
