import dataclasses

import numpy as np
import pytest

from warfarin_rl.cohort import generate_cohort
from warfarin_rl.environment import (DOSE_GRID, DosingState, Environment,
                                     build_schedule, decision_days, reward)
from warfarin_rl.errors import ConfigError


@pytest.fixture(scope="module")
def patient():
    return generate_cohort(1, 404)[0]


def noise_free(profile):
    return dataclasses.replace(
        profile, hidden_params=dataclasses.replace(profile.hidden_params,
                                                   residual_sd=0.0))


class TestSchedule:
    def test_t90_enumeration(self):
        assert decision_days(90) == [1, 3, 6, 13, 20, 27, 34, 41, 48, 55,
                                     62, 69, 76, 83]
        assert build_schedule(90) == [2, 3] + [7] * 12
        assert len(build_schedule(90)) == 14

    def test_minimal_horizon(self):
        assert decision_days(6) == [1, 3]
        assert build_schedule(6) == [2, 3]

    def test_durations_sum_to_horizon_boundary(self):
        # last dosing interval ends on day T inclusive
        for T in (6, 7, 29, 90, 91, 365):
            assert sum(build_schedule(T)) == T - 1

    def test_too_short_rejected(self):
        for T in (1, 5):
            with pytest.raises(ConfigError):
                build_schedule(T)


class TestReward:
    def test_midpoint_is_zero(self):
        assert reward([2.5, 2.5, 2.5]) == 0.0

    def test_border_penalty_is_one(self):
        assert reward([3.0]) == pytest.approx(-1.0, abs=1e-12)
        assert reward([2.0]) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_arithmetic(self):
        assert reward([1.0, 2.0]) == pytest.approx(-10.0, abs=1e-12)
        assert reward([4.0, 4.0]) == pytest.approx(-18.0, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            reward([])

    def test_nonpositive_and_zero_only_at_midpoint(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            inrs = rng.uniform(0.5, 6.0, size=rng.integers(1, 10))
            r = reward(inrs)
            assert r <= 0
            assert (r == 0) == bool(np.all(inrs == 2.5))


class TestReset:
    def test_history_fully_padded(self, patient):
        env = Environment(patient, h=3)
        state = env.reset()
        assert state.history == ((0.0, 0.0, 1),) * 3

    def test_noise_free_initial_inr_is_baseline(self, patient):
        env = Environment(noise_free(patient))
        state = env.reset()
        assert state.current_inr == patient.hidden_params.baseline_inr

    def test_indices(self, patient):
        state = Environment(patient).reset()
        assert state.decision_index == 1 and state.day == 1


class TestStep:
    def test_zero_dose_full_episode_reward(self, patient):
        # latent stays at baseline 1.0: each interval scores -4*1.5^2 per day
        env = Environment(noise_free(patient))
        env.reset()
        done = False
        days = []
        while not done:
            _, r, exo, done = env.step(0.0)
            days.append(len(exo.daily_latent_inrs))
            assert r == pytest.approx(-4 * 1.5**2 * days[-1], abs=1e-9)
        assert days == [2, 3] + [7] * 11 + [8]  # final covers through day T
        assert sum(days) == 90

    def test_trajectory_lengths(self, patient):
        env = Environment(patient)
        env.reset()
        done = False
        while not done:
            _, _, _, done = env.step(5.0)
        traj = env.trajectory
        assert len(traj.latent_inrs) == 90
        assert len(traj.daily_doses) == 90
        assert len(traj.decisions) == 14
        assert [d for d, _, _ in traj.decisions] == decision_days(90)
        assert traj.measurements[0][0] == 1
        assert traj.measurements[-1][0] == 90

    def test_history_window_shifts(self, patient):
        env = Environment(patient, h=2)
        state = env.reset()
        mu1 = state.current_inr
        state, _, _, _ = env.step(10.0)
        assert state.history == ((0.0, 0.0, 1), (mu1, 10.0, 2))
        mu2 = state.current_inr
        state, _, _, _ = env.step(7.5)
        assert state.history == ((mu1, 10.0, 2), (mu2, 7.5, 3))

    def test_off_grid_dose_rejected(self, patient):
        env = Environment(patient)
        env.reset()
        for bad in (0.3, -0.5, 15.5, 7.24):
            with pytest.raises(ValueError):
                env.step(bad)

    def test_first_decision_cap_enforced(self, patient):
        env = Environment(patient, d1_max=5.0)
        env.reset()
        with pytest.raises(ValueError):
            env.step(5.5)
        state, _, _, _ = env.step(5.0)  # at the cap is fine
        env.step(15.0)  # later decisions allow the full grid

    def test_terminal_flag_and_decision_count(self, patient):
        env = Environment(patient)
        env.reset()
        flags = []
        done = False
        while not done:
            _, _, _, done = env.step(2.0)
            flags.append(done)
        assert flags.count(True) == 1 and flags[-1]
        assert len(flags) == 14

    def test_deterministic_episodes(self, patient):
        def run():
            env = Environment(patient)
            env.reset()
            done = False
            while not done:
                _, _, _, done = env.step(7.0)
            return env.trajectory
        a, b = run(), run()
        assert a.latent_inrs == b.latent_inrs
        assert a.measurements == b.measurements

    def test_reward_uses_latent_not_measured(self, patient):
        env = Environment(patient)
        env.reset()
        _, r, exo, _ = env.step(0.0)
        assert r == reward(exo.daily_latent_inrs)


class TestObservabilityFirewall:
    def test_state_carries_no_latent_information(self, patient):
        state = Environment(patient).reset()
        assert isinstance(state, DosingState)
        fields = {f.name for f in dataclasses.fields(state)}
        assert fields == {"current_inr", "history", "patient",
                          "decision_index", "day"}
        patient_fields = {f.name for f in dataclasses.fields(state.patient)}
        assert "hidden_params" not in patient_fields
        assert "seed" not in patient_fields

    def test_exogenous_latents_not_in_state(self, patient):
        env = Environment(patient)
        env.reset()
        state, _, exo, _ = env.step(5.0)
        assert state.current_inr == exo.measured_terminal_inr
        assert not hasattr(state, "daily_latent_inrs")


class TestDoseGrid:
    def test_grid_shape(self):
        assert DOSE_GRID.size == 31
        assert DOSE_GRID[0] == 0.0 and DOSE_GRID[-1] == 15.0
        assert np.allclose(np.diff(DOSE_GRID), 0.5)
