"""Hot inner loops of the dose-response simulation.

The day-stepping loop below dominates simulation time, so it is compiled
with numba when available.  Set ``WARFARIN_RL_NO_NUMBA=1`` to force the
pure-Python/numpy fallback.  Both paths execute the same scalar float64
operations in the same order and produce bit-identical results; the test
suite asserts this and ``benchmarks/bench_kernels.py`` compares speed.
"""

import os

import numpy as np


def _simulate_interval_impl(drug_amount, t1, t2, t3, decay, a_tr,
                            ec50, emax, hill, baseline, doses, latents):
    """Advance the PK/PD state one day per dose in ``doses``.

    Per day: the central-compartment amount decays then receives the
    day's dose; the inhibitory Hill effect of the post-dose amount feeds
    a 3-stage transit chain; latent INR = baseline + emax * last stage.
    Writes daily latent INRs into ``latents`` and returns the final
    (drug_amount, t1, t2, t3).
    """
    ec50_h = ec50 ** hill
    for i in range(doses.shape[0]):
        drug_amount = drug_amount * decay + doses[i]
        if drug_amount > 0.0:
            a_h = drug_amount ** hill
            effect = a_h / (a_h + ec50_h)
        else:
            effect = 0.0
        new_t1 = t1 + a_tr * (effect - t1)
        new_t2 = t2 + a_tr * (t1 - t2)
        new_t3 = t3 + a_tr * (t2 - t3)
        t1, t2, t3 = new_t1, new_t2, new_t3
        latents[i] = baseline + emax * t3
    return drug_amount, t1, t2, t3


def _numba_enabled() -> bool:
    return os.environ.get("WARFARIN_RL_NO_NUMBA", "").strip() not in ("", "0")


USING_NUMBA = False
simulate_interval_py = _simulate_interval_impl

if not _numba_enabled():
    try:
        from numba import njit

        simulate_interval_jit = njit(cache=True)(_simulate_interval_impl)
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        simulate_interval_jit = _simulate_interval_impl
else:
    simulate_interval_jit = _simulate_interval_impl


def simulate_interval(drug_amount, t1, t2, t3, decay, a_tr,
                      ec50, emax, hill, baseline, doses):
    """Simulate ``len(doses)`` days; returns (state tuple, daily latent INRs)."""
    doses = np.ascontiguousarray(doses, dtype=np.float64)
    latents = np.empty(doses.shape[0], dtype=np.float64)
    fn = simulate_interval_jit if USING_NUMBA else simulate_interval_py
    state = fn(float(drug_amount), float(t1), float(t2), float(t3),
               float(decay), float(a_tr), float(ec50), float(emax),
               float(hill), float(baseline), doses, latents)
    return state, latents
