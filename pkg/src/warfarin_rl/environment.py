"""Finite-horizon dosing MDP: schedule, state, transition, reward.

Measurement/decision days follow the fixed pattern (2, 3, 7, 7, ...)
expressed as durations that sum to T-1, so the last scheduled measurement
lands exactly on day T.  A decision at day t with duration tau covers
days t..t+tau-1 (each day's latent INR reflects that day's dose); the
final interval additionally covers day T, so every one of the T days is
simulated and rewarded exactly once.  Policies only ever see
:class:`DosingState`; latent INRs and hidden parameters stay inside the
environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import ObservablePatient, PatientProfile
from .errors import ConfigError
from .pkpd import fresh_state, observe_inr, simulate_days
from .seeding import NS_EPISODE, substream

DOSE_STEP = 0.5
MAX_DOSE = 15.0
DOSE_GRID = np.round(np.arange(0, MAX_DOSE + DOSE_STEP / 2, DOSE_STEP), 1)
N_ACTIONS = DOSE_GRID.size  # 31

REWARD_SCALE = 4.0
INR_MIDPOINT = 2.5
HISTORY_PAD = (0.0, 0.0, 1)


@dataclass(frozen=True)
class Decision:
    """A prescribed dose held for a fixed number of days."""

    dose: float
    duration: int


@dataclass(frozen=True)
class DosingState:
    """Observable MDP state: current INR, padded history, patient covariates."""

    current_inr: float
    history: tuple[tuple[float, float, int], ...]  # (inr, dose, duration), newest last
    patient: ObservablePatient
    decision_index: int
    day: int


@dataclass(frozen=True)
class ExogenousInfo:
    """Daily latent INRs of one interval; only the terminal measurement is observable."""

    daily_latent_inrs: np.ndarray
    measured_terminal_inr: float


@dataclass
class Trajectory:
    """Per-patient episode record; the substrate of all metrics."""

    patient_id: int
    latent_inrs: list[float] = field(default_factory=list)
    daily_doses: list[float] = field(default_factory=list)
    decisions: list[tuple[int, float, int]] = field(default_factory=list)  # (day, dose, duration)
    rewards: list[float] = field(default_factory=list)
    measurements: list[tuple[int, float]] = field(default_factory=list)  # (day, measured INR)


def build_schedule(T: int) -> list[int]:
    """Durations (2, 3, 7, ...) summing to T-1; decision days are 1 + prefix sums."""
    if T < 6:
        raise ConfigError(f"dosing horizon T={T} must be at least 6 days")
    durations = [2, 3]
    total = 5
    while total < T - 1:
        tau = min(7, T - 1 - total)
        durations.append(tau)
        total += tau
    return durations


def decision_days(T: int) -> list[int]:
    days = [1]
    for tau in build_schedule(T)[:-1]:
        days.append(days[-1] + tau)
    return days


def reward(daily_inrs, c: float = REWARD_SCALE, midpoint: float = INR_MIDPOINT) -> float:
    """Negative quadratic distance from the range midpoint, summed over days."""
    inrs = np.asarray(daily_inrs, dtype=np.float64)
    if inrs.size == 0:
        raise ValueError("reward requires at least one daily INR")
    return float(-c * np.sum((midpoint - inrs) ** 2))


def is_on_grid(dose: float) -> bool:
    return 0.0 <= dose <= MAX_DOSE and abs(dose / DOSE_STEP - round(dose / DOSE_STEP)) < 1e-9


class Environment:
    """One patient's dosing episode on the fixed measurement schedule."""

    def __init__(self, patient: PatientProfile, T: int = 90, h: int = 1,
                 d1_max: float = MAX_DOSE, rng: np.random.Generator | None = None):
        if h < 1:
            raise ConfigError("history length h must be >= 1")
        if not is_on_grid(d1_max):
            raise ConfigError(f"d1_max {d1_max} not on the dose grid")
        self.patient = patient
        self.T = T
        self.h = h
        self.d1_max = d1_max
        self.durations = build_schedule(T)
        self.n_decisions = len(self.durations)
        self._rng = rng if rng is not None else substream(patient.seed, NS_EPISODE)
        self._params = patient.hidden_params
        self._pkpd = None
        self._state = None
        self.trajectory: Trajectory | None = None

    def dose_cap(self, decision_index: int) -> float:
        return self.d1_max if decision_index == 1 else MAX_DOSE

    def reset(self) -> DosingState:
        self._pkpd = fresh_state()
        mu1 = observe_inr(self._params.baseline_inr, self._params, self._rng)
        self._state = DosingState(
            current_inr=mu1,
            history=(HISTORY_PAD,) * self.h,
            patient=self.patient.observable(),
            decision_index=1,
            day=1,
        )
        self.trajectory = Trajectory(patient_id=self.patient.id,
                                     measurements=[(1, mu1)])
        return self._state

    def step(self, dose: float) -> tuple[DosingState, float, ExogenousInfo, bool]:
        state = self._state
        if state is None or state.decision_index > self.n_decisions:
            raise RuntimeError("environment must be reset before stepping")
        cap = self.dose_cap(state.decision_index)
        if not is_on_grid(dose) or dose > cap + 1e-9:
            raise ValueError(
                f"dose {dose} off grid or above cap {cap} at decision {state.decision_index}")

        tau = self.durations[state.decision_index - 1]
        next_day = state.day + tau
        done = next_day >= self.T
        n_days = (self.T - state.day + 1) if done else tau
        doses = np.full(n_days, dose)

        self._pkpd, latents = simulate_days(self._pkpd, self._params, doses)
        r = reward(latents)
        measured = observe_inr(float(latents[-1]), self._params, self._rng)
        exo = ExogenousInfo(daily_latent_inrs=latents, measured_terminal_inr=measured)

        traj = self.trajectory
        traj.latent_inrs.extend(float(v) for v in latents)
        traj.daily_doses.extend(float(d) for d in doses)
        traj.decisions.append((state.day, float(dose), tau))
        traj.rewards.append(r)
        traj.measurements.append((min(next_day, self.T), measured))

        self._state = DosingState(
            current_inr=measured,
            history=state.history[1:] + ((state.current_inr, float(dose), tau),),
            patient=state.patient,
            decision_index=state.decision_index + 1,
            day=next_day,
        )
        return self._state, r, exo, done
