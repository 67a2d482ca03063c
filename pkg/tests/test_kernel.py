"""Compiled and pure-Python cycle kernels must agree."""

import re
from pathlib import Path

import numpy as np
import pytest

from wptsim import _kernel_py, _layout, kernel
from wptsim.delay_comp import default_bank
from wptsim.rectifier_sim import RectifierConfig, Simulator

compiled = pytest.importorskip("wptsim._kernel")


def test_layout_matches_pyx():
    src = (Path(_layout.__file__).parent / "_kernel.pyx").read_text()
    block = src.split("cdef enum:", 1)[1].split("\n\n", 1)[0]
    pairs = re.findall(r"^\s+([A-Z_]+) = (\d+)", block, re.M)
    assert pairs
    for name, val in pairs:
        if hasattr(_layout, name):
            assert getattr(_layout, name) == int(val), name


def test_selector_prefers_compiled():
    assert kernel.COMPILED
    assert kernel.run_cycle is compiled.run_cycle


def _state(bank, cfg, cycles=3):
    sim = Simulator(cfg, bank)
    sim.run(cycles)   # get past the start-up transient with the compiled kernel
    return sim


@pytest.mark.parametrize("with_bank", [False, True])
def test_parity(with_bank):
    cfg = RectifierConfig(t_cmp_on=1e-9, t_cmp_off=1e-9, r_load=300)
    bank = default_bank(cfg.f0, cfg.t_cmp_off) if with_bank else None
    sim = _state(bank, cfg)
    O = sim.offsets() + (np.array([-0.05, -0.3, -0.05, -0.3]) if with_bank else 0)
    out = []
    for run in (compiled.run_cycle, _kernel_py.run_cycle):
        S, E = sim.S.copy(), np.zeros_like(sim.E)
        rec = np.zeros((100, _layout.N_REC))
        n = 0
        for _ in range(2):
            n = run(S, sim.P, O, E, sim.n_steps, rec, 20)
        out.append((S, E, rec[:n]))
    (S1, E1, r1), (S2, E2, r2) = out
    np.testing.assert_allclose(S1, S2, rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(E1, E2, rtol=1e-7, atol=1e-15, equal_nan=True)
    np.testing.assert_allclose(r1, r2, rtol=1e-9, atol=1e-15)
