import os
import subprocess
import sys

import numpy as np
import pytest

from warfarin_rl import kernels


def _random_inputs(rng):
    return dict(
        drug_amount=float(rng.uniform(0, 60)),
        t1=float(rng.uniform(0, 1)), t2=float(rng.uniform(0, 1)),
        t3=float(rng.uniform(0, 1)),
        decay=float(np.exp(-rng.uniform(0.02, 0.5))),
        a_tr=float(1 - np.exp(-rng.uniform(0.3, 1.5))),
        ec50=float(rng.uniform(10, 80)), emax=float(rng.uniform(2, 8)),
        hill=float(rng.uniform(0.8, 2.5)), baseline=float(rng.uniform(0.8, 1.5)),
    )


@pytest.mark.skipif(not kernels.USING_NUMBA, reason="numba backend not active")
def test_jit_and_python_paths_bit_identical():
    rng = np.random.default_rng(5)
    for _ in range(25):
        kw = _random_inputs(rng)
        doses = rng.uniform(0, 15, size=rng.integers(1, 30)).astype(np.float64)
        lat_a = np.empty(doses.size)
        lat_b = np.empty(doses.size)
        state_a = kernels.simulate_interval_jit(*kw.values(), doses, lat_a)
        state_b = kernels.simulate_interval_py(*kw.values(), doses, lat_b)
        assert state_a == state_b
        assert np.array_equal(lat_a, lat_b)


def test_env_flag_selects_numpy_fallback():
    code = ("import warfarin_rl.kernels as k; "
            "print(k.USING_NUMBA, k.simulate_interval_jit is k.simulate_interval_py)")
    env = dict(os.environ, WARFARIN_RL_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]


def test_wrapper_returns_state_and_latents():
    rng = np.random.default_rng(0)
    kw = _random_inputs(rng)
    doses = np.full(10, 5.0)
    (amount, t1, t2, t3), latents = kernels.simulate_interval(
        kw["drug_amount"], kw["t1"], kw["t2"], kw["t3"], kw["decay"], kw["a_tr"],
        kw["ec50"], kw["emax"], kw["hill"], kw["baseline"], doses)
    assert latents.shape == (10,)
    assert amount > 0 and min(t1, t2, t3) >= 0
