"""Dose-response engine: daily INR of a virtual patient under warfarin.

One-compartment daily-superposition kinetics drive an inhibitory Hill
effect through a 3-stage transit chain, giving the delayed, genotype- and
age-dependent INR response the dosing policies are evaluated against.
All population constants live in :class:`EngineConfig` and can be
overridden from a JSON file, so a differently calibrated engine can be
swapped in without touching callers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .kernels import simulate_interval

TRANSIT_STAGES = 3


class Cyp2c9(str, Enum):
    S11 = "*1/*1"
    S12 = "*1/*2"
    S13 = "*1/*3"
    S22 = "*2/*2"
    S23 = "*2/*3"
    S33 = "*3/*3"

    @property
    def alleles(self) -> tuple[str, str]:
        a, b = self.value.split("/")
        return a, b


class Vkorc1(str, Enum):
    GG = "G/G"
    GA = "G/A"
    AA = "A/A"


@dataclass(frozen=True)
class PkpdParameters:
    """Individual dose-response parameters; hidden from dosing policies."""

    elimination_rate: float     # 1/day
    effect_delay: float         # mean transit time, days
    ec50: float                 # mg-equivalent amount at half effect
    emax: float                 # INR span above baseline at full effect
    hill_coefficient: float
    baseline_inr: float
    residual_sd: float          # lognormal measurement error, log scale
    bsv_multipliers: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("elimination_rate", "effect_delay", "ec50", "emax",
                     "hill_coefficient"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.8 <= self.baseline_inr <= 1.5:
            raise ValueError("baseline_inr outside [0.8, 1.5]")
        if self.residual_sd < 0:
            raise ValueError("residual_sd must be nonnegative")


@dataclass
class PkpdState:
    """Mutable simulator state owned by one episode at a time."""

    drug_amount: float = 0.0
    transit_levels: tuple[float, float, float] = (0.0, 0.0, 0.0)
    day: int = 0

    def __post_init__(self):
        if self.drug_amount < 0 or any(t < 0 for t in self.transit_levels):
            raise ValueError("PkpdState requires nonnegative amounts")
        if self.day < 0:
            raise ValueError("day must be nonnegative")


_DEFAULT_CONFIG = {
    "population": {
        "elimination_rate": 0.4,
        "effect_delay": 3.0,
        "ec50": 50.0,
        "emax": 5.0,
        "hill_coefficient": 1.5,
        "baseline_inr": 1.0,
    },
    "cyp2c9_allele_clearance": {"*1": 1.0, "*2": 0.6, "*3": 0.1},
    "vkorc1_ec50_multiplier": {"G/G": 1.0, "G/A": 0.7, "A/A": 0.45},
    "age": {
        "slope_per_year": 0.005,
        "reference_age": 67.0,
        "min_factor": 0.5,
        "max_factor": 1.2,
    },
    "variability": {
        "log_sd_elimination_rate": 0.3,
        "log_sd_ec50": 0.3,
        "log_sd_emax": 0.3,
        "residual_sd": 0.05,
    },
}


@dataclass(frozen=True)
class EngineConfig:
    """Population-level engine constants (JSON-overridable)."""

    population: dict = field(default_factory=lambda: dict(_DEFAULT_CONFIG["population"]))
    cyp2c9_allele_clearance: dict = field(
        default_factory=lambda: dict(_DEFAULT_CONFIG["cyp2c9_allele_clearance"]))
    vkorc1_ec50_multiplier: dict = field(
        default_factory=lambda: dict(_DEFAULT_CONFIG["vkorc1_ec50_multiplier"]))
    age: dict = field(default_factory=lambda: dict(_DEFAULT_CONFIG["age"]))
    variability: dict = field(default_factory=lambda: dict(_DEFAULT_CONFIG["variability"]))

    def __post_init__(self):
        pop = self.population
        for key in _DEFAULT_CONFIG["population"]:
            if key not in pop:
                raise ConfigError(f"engine config missing population.{key}")
            if key != "baseline_inr" and pop[key] <= 0:
                raise ConfigError(f"population.{key} must be positive")
        for allele in ("*1", "*2", "*3"):
            if self.cyp2c9_allele_clearance.get(allele, 0) <= 0:
                raise ConfigError(f"missing/invalid clearance multiplier for {allele}")
        for gt in Vkorc1:
            if self.vkorc1_ec50_multiplier.get(gt.value, 0) <= 0:
                raise ConfigError(f"missing/invalid ec50 multiplier for {gt.value}")
        if any(self.variability[k] < 0 for k in self.variability):
            raise ConfigError("variability SDs must be nonnegative")

    @classmethod
    def from_json(cls, path: str | Path) -> "EngineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read engine config {path}: {exc}") from exc
        merged = {k: {**_DEFAULT_CONFIG[k], **raw.get(k, {})} for k in _DEFAULT_CONFIG}
        return cls(**merged)

    def to_dict(self) -> dict:
        return {
            "population": dict(self.population),
            "cyp2c9_allele_clearance": dict(self.cyp2c9_allele_clearance),
            "vkorc1_ec50_multiplier": dict(self.vkorc1_ec50_multiplier),
            "age": dict(self.age),
            "variability": dict(self.variability),
        }


class Engine:
    """Builds per-patient parameters and advances daily dose-response."""

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()

    def clearance_multiplier(self, cyp: Cyp2c9) -> float:
        table = self.config.cyp2c9_allele_clearance
        a, b = cyp.alleles
        return (table[a] + table[b]) / 2.0

    def ec50_multiplier(self, vkorc1: Vkorc1) -> float:
        return self.config.vkorc1_ec50_multiplier[vkorc1.value]

    def age_factor(self, age: float) -> float:
        cfg = self.config.age
        factor = 1.0 - cfg["slope_per_year"] * (age - cfg["reference_age"])
        return min(max(factor, cfg["min_factor"]), cfg["max_factor"])

    def population_params(self, age: float, cyp: Cyp2c9, vkorc1: Vkorc1) -> PkpdParameters:
        """Population-typical parameters for the observable covariates."""
        if not 18 <= age <= 100:
            raise ValueError(f"age {age} outside [18, 100]")
        pop = self.config.population
        return PkpdParameters(
            elimination_rate=pop["elimination_rate"]
            * self.clearance_multiplier(cyp) * self.age_factor(age),
            effect_delay=pop["effect_delay"],
            ec50=pop["ec50"] * self.ec50_multiplier(vkorc1),
            emax=pop["emax"],
            hill_coefficient=pop["hill_coefficient"],
            baseline_inr=pop["baseline_inr"],
            residual_sd=self.config.variability["residual_sd"],
        )

    def individualize(self, pop: PkpdParameters, rng: np.random.Generator) -> PkpdParameters:
        """Apply between-patient lognormal variability to a population draw.

        Multiplies elimination_rate, ec50 and emax by independent
        lognormal factors (fixed draw order, so a given stream state
        always yields the same individual).
        """
        var = self.config.variability
        m_ke = math.exp(rng.normal(0.0, var["log_sd_elimination_rate"]))
        m_ec50 = math.exp(rng.normal(0.0, var["log_sd_ec50"]))
        m_emax = math.exp(rng.normal(0.0, var["log_sd_emax"]))
        return replace(
            pop,
            elimination_rate=pop.elimination_rate * m_ke,
            ec50=pop.ec50 * m_ec50,
            emax=pop.emax * m_emax,
            bsv_multipliers=(m_ke, m_ec50, m_emax),
        )


def fresh_state() -> PkpdState:
    return PkpdState(0.0, (0.0, 0.0, 0.0), 0)


def _kinetic_constants(params: PkpdParameters) -> tuple[float, float]:
    decay = math.exp(-params.elimination_rate)
    a_tr = 1.0 - math.exp(-TRANSIT_STAGES / params.effect_delay)
    return decay, a_tr


def simulate_days(state: PkpdState, params: PkpdParameters,
                  doses: np.ndarray) -> tuple[PkpdState, np.ndarray]:
    """Advance one day per dose; returns (new state, daily latent INRs)."""
    doses = np.asarray(doses, dtype=np.float64)
    if doses.size and doses.min() < 0:
        raise ValueError("doses must be nonnegative")
    decay, a_tr = _kinetic_constants(params)
    t1, t2, t3 = state.transit_levels
    (amount, t1, t2, t3), latents = simulate_interval(
        state.drug_amount, t1, t2, t3, decay, a_tr,
        params.ec50, params.emax, params.hill_coefficient,
        params.baseline_inr, doses)
    new_state = PkpdState(amount, (t1, t2, t3), state.day + doses.size)
    return new_state, latents


def step_day(state: PkpdState, params: PkpdParameters,
             dose: float) -> tuple[PkpdState, float]:
    """One day: decay + dose, Hill effect through the transit chain."""
    if dose < 0:
        raise ValueError("dose must be nonnegative")
    new_state, latents = simulate_days(state, params, np.array([dose]))
    return new_state, float(latents[0])


def observe_inr(latent_inr: float, params: PkpdParameters,
                rng: np.random.Generator) -> float:
    """Measured INR: latent with proportional lognormal error, floored at 0.5."""
    if latent_inr <= 0:
        raise ValueError("latent INR must be positive")
    measured = latent_inr * math.exp(rng.normal(0.0, params.residual_sd))
    return max(0.5, measured)
