"""Clinical baseline dosing protocols and their three-phase composites.

Implements the Intermountain zone table, the Aurora fixed-start/percent
adjustment rules, the IWPC regression initializers (clinical and
pharmacogenetic) and the Lenzini refinement, then composes them into the
five study arms (AAA, CAA, PGAA, PGPGA, PGPGI).  Baselines prescribe
real-valued doses, choose their own retest intervals, and see only
observable patient information.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .cohort import ObservablePatient, PatientProfile
from .environment import Trajectory, reward
from .errors import ConfigError
from .pkpd import Cyp2c9, Vkorc1, fresh_state, observe_inr, simulate_days
from .seeding import NS_EPISODE, substream

LB_TO_KG = 0.45359237
IN_TO_CM = 2.54
TARGET_INR = 2.5

BASELINE_NAMES = ("AAA", "CAA", "PGAA", "PGPGA", "PGPGI")


def _load_data_json(name: str) -> dict:
    with resources.files("warfarin_rl.data").joinpath(name).open() as fh:
        return json.load(fh)


# --- Intermountain zone table ---

class Zone(Enum):
    ACTION_LOW = "action_point_low"       # INR <= 1.59
    RED_LOW = "red_zone_low"              # 1.60 - 1.79
    YELLOW_LOW = "yellow_zone_low"        # 1.80 - 1.99
    GREEN = "green"                       # 2.00 - 3.00
    YELLOW_HIGH = "yellow_zone_high"      # 3.01 - 3.39
    RED_HIGH = "red_zone_high"            # 3.40 - 4.99
    ACTION_HIGH = "action_point_high"     # >= 5.00


def zone_of(inr: float) -> Zone:
    """Zone lookup; INR is rounded to two decimals before binning."""
    r = round(inr, 2)
    if r < 1.60:
        return Zone.ACTION_LOW
    if r < 1.80:
        return Zone.RED_LOW
    if r < 2.00:
        return Zone.YELLOW_LOW
    if r <= 3.00:
        return Zone.GREEN
    if r <= 3.39:
        return Zone.YELLOW_HIGH
    if r < 5.00:
        return Zone.RED_HIGH
    return Zone.ACTION_HIGH


@dataclass(frozen=True)
class ZoneMemory:
    """Carry-over between Intermountain readings; streaks reset on zone exit."""

    consecutive_yellow_low: int = 0
    consecutive_yellow_high: int = 0
    consecutive_green: int = 0
    post_action_high_pending: bool = False


@dataclass(frozen=True)
class ProtocolAction:
    """Dose to hold until the next test, plus day-level one-off changes.

    ``one_off_adjustments`` holds (day offset, dose delta) pairs relative
    to the interval start; a delta of minus the daily dose skips that day.
    """

    daily_dose: float
    next_test_in: int
    one_off_adjustments: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.daily_dose < 0:
            raise ValueError("daily_dose must be nonnegative")
        if self.next_test_in < 1:
            raise ValueError("next_test_in must be >= 1")


def intermountain_adjust(inr: float, weekly_dose: float,
                         memory: ZoneMemory) -> tuple[ProtocolAction, ZoneMemory]:
    """One Intermountain reading: percent weekly change, one-offs, retest.

    Yellow zones change the dose only on the second consecutive reading;
    an action-point-high reading omits two doses and retests in 48 hours,
    after which a green/yellow reading triggers the deferred -15%.
    """
    if inr <= 0 or weekly_dose < 0:
        raise ValueError("need positive INR and nonnegative weekly dose")
    zone = zone_of(inr)

    if memory.post_action_high_pending and zone in (
            Zone.YELLOW_LOW, Zone.GREEN, Zone.YELLOW_HIGH):
        daily = weekly_dose * 0.85 / 7
        return ProtocolAction(daily, 7), ZoneMemory()

    if zone == Zone.ACTION_LOW:
        daily = weekly_dose * 1.10 / 7
        return ProtocolAction(daily, 5, ((0, daily),)), ZoneMemory()

    if zone == Zone.RED_LOW:
        daily = weekly_dose * 1.05 / 7
        return ProtocolAction(daily, 7, ((0, 0.5 * daily),)), ZoneMemory()

    if zone == Zone.YELLOW_LOW:
        streak = memory.consecutive_yellow_low + 1
        if streak >= 2:
            return ProtocolAction(weekly_dose * 1.05 / 7, 14), ZoneMemory()
        return (ProtocolAction(weekly_dose / 7, 14),
                ZoneMemory(consecutive_yellow_low=streak))

    if zone == Zone.GREEN:
        streak = memory.consecutive_green + 1
        retest = 14 if streak == 1 else 28
        return (ProtocolAction(weekly_dose / 7, retest),
                ZoneMemory(consecutive_green=streak))

    if zone == Zone.YELLOW_HIGH:
        streak = memory.consecutive_yellow_high + 1
        if streak >= 2:
            return ProtocolAction(weekly_dose * 0.95 / 7, 14), ZoneMemory()
        return (ProtocolAction(weekly_dose / 7, 14),
                ZoneMemory(consecutive_yellow_high=streak))

    if zone == Zone.RED_HIGH:
        daily = weekly_dose * 0.90 / 7
        cut = -daily if round(inr, 2) >= 4.0 else -0.5 * daily
        return ProtocolAction(daily, 7, ((0, cut),)), ZoneMemory()

    # action point high: omit two doses, retest in 48h, defer the -15%
    daily = weekly_dose / 7
    return (ProtocolAction(daily, 2, ((0, -daily), (1, -daily))),
            ZoneMemory(post_action_high_pending=True))


# --- Aurora ---

DEFAULT_AURORA_CONFIG = {
    "initial": {"dose_mg": 10.0, "reduced_dose_mg": 5.0, "age_threshold": 70},
    "low_bin": {"below": 2.0, "pct_change": 0.10, "retest_days": 7},
    "high_bin": {"above": 3.0, "pct_change": -0.10, "retest_days": 7},
    "hold_retest_days": {"adjust": 7, "maintain": 28},
}


def aurora_initial_dose(age: float, config: dict | None = None) -> float:
    cfg = (config or DEFAULT_AURORA_CONFIG)["initial"]
    return cfg["reduced_dose_mg"] if age >= cfg["age_threshold"] else cfg["dose_mg"]


def aurora_adjust(inr: float, current_dose: float, phase: str,
                  config: dict | None = None) -> ProtocolAction:
    """Percent change on the current daily dose per the Aurora bin table."""
    cfg = config or DEFAULT_AURORA_CONFIG
    low, high = cfg["low_bin"], cfg["high_bin"]
    if inr < low["below"]:
        return ProtocolAction(current_dose * (1 + low["pct_change"]), low["retest_days"])
    if inr > high["above"]:
        return ProtocolAction(current_dose * (1 + high["pct_change"]), high["retest_days"])
    return ProtocolAction(current_dose, cfg["hold_retest_days"][phase])


# --- IWPC ---

_IWPC_CLINICAL_TERMS = ("intercept", "age_decades", "height_cm", "weight_kg",
                        "asian", "black", "missing_or_mixed_race",
                        "enzyme_inducer", "amiodarone")
_IWPC_PG_TERMS = _IWPC_CLINICAL_TERMS + (
    "vkorc1_ga", "vkorc1_aa", "vkorc1_unknown", "cyp2c9_12", "cyp2c9_13",
    "cyp2c9_22", "cyp2c9_23", "cyp2c9_33", "cyp2c9_unknown")

_CYP_TERM = {Cyp2c9.S12: "cyp2c9_12", Cyp2c9.S13: "cyp2c9_13",
             Cyp2c9.S22: "cyp2c9_22", Cyp2c9.S23: "cyp2c9_23",
             Cyp2c9.S33: "cyp2c9_33"}


def load_iwpc_coefficients(path: str | Path | None = None) -> dict:
    raw = _load_data_json("iwpc_coefficients.json") if path is None \
        else json.loads(Path(path).read_text())
    for variant, terms in (("clinical", _IWPC_CLINICAL_TERMS),
                           ("pharmacogenetic", _IWPC_PG_TERMS)):
        table = raw.get(variant, {})
        missing = [t for t in terms if t not in table]
        if missing:
            raise ConfigError(f"IWPC {variant} table missing coefficients: {missing}")
    return raw


def _race_term(race: str) -> str | None:
    if race == "white":
        return None
    if race in ("black", "asian"):
        return race
    return "missing_or_mixed_race"


def iwpc_dose(patient: ObservablePatient, pharmacogenetic: bool,
              coefficients: dict, genotype_blind: bool = False) -> float:
    """Daily dose from the IWPC regression: (linear predictor)^2 / 7.

    The clinical variant ignores genotypes; the pharmacogenetic variant
    falls back to the unknown-genotype indicators when genotype_blind is
    set.  Negative linear predictors clamp to a zero dose.
    """
    variant = "pharmacogenetic" if pharmacogenetic else "clinical"
    c = coefficients[variant]
    lp = (c["intercept"]
          + c["age_decades"] * math.floor(patient.age / 10)
          + c["height_cm"] * patient.height * IN_TO_CM
          + c["weight_kg"] * patient.weight * LB_TO_KG
          + c["amiodarone"] * patient.amiodarone)
    race = _race_term(patient.race)
    if race is not None:
        lp += c[race]
    if pharmacogenetic:
        if genotype_blind:
            lp += c["vkorc1_unknown"] + c["cyp2c9_unknown"]
        else:
            if patient.vkorc1 == Vkorc1.GA:
                lp += c["vkorc1_ga"]
            elif patient.vkorc1 == Vkorc1.AA:
                lp += c["vkorc1_aa"]
            if patient.cyp2c9 in _CYP_TERM:
                lp += c[_CYP_TERM[patient.cyp2c9]]
    weekly = max(lp, 0.0) ** 2
    return weekly / 7.0


# --- Lenzini refinement ---

def body_surface_area(weight_lb: float, height_in: float) -> float:
    """DuBois BSA in m^2 from pounds and inches."""
    kg = weight_lb * LB_TO_KG
    cm = height_in * IN_TO_CM
    return 0.007184 * cm**0.725 * kg**0.425


def load_lenzini_coefficients(path: str | Path | None = None) -> dict:
    raw = _load_data_json("lenzini_coefficients.json") if path is None \
        else json.loads(Path(path).read_text())
    return raw["coefficients"] if "coefficients" in raw else raw


def lenzini_adjust(inr: float, patient: ObservablePatient, recent_doses,
                   coefficients: dict, genotype_blind: bool = False) -> float:
    """Daily dose from the Lenzini refinement: exp(linear predictor) / 7.

    ``recent_doses`` are the administered doses 2, 3 and 4 days before the
    decision (0.0 for days before the trial started).
    """
    if inr <= 0:
        raise ValueError("INR must be positive")
    recent = tuple(recent_doses)
    if len(recent) != 3:
        raise ValueError("need doses from 2, 3 and 4 days ago")
    c = coefficients
    if genotype_blind:
        a_alleles = star2 = star3 = 0
    else:
        a_alleles = patient.vkorc1.value.count("A")
        alleles = patient.cyp2c9.alleles
        star2 = sum(1 for a in alleles if a == "*2")
        star3 = sum(1 for a in alleles if a == "*3")
    lp = (c["intercept"]
          + c["age_years"] * patient.age
          + c["ln_inr"] * math.log(inr)
          + c["vkorc1_a_alleles"] * a_alleles
          + c["cyp2c9_star2_alleles"] * star2
          + c["cyp2c9_star3_alleles"] * star3
          + c["bsa_m2"] * body_surface_area(patient.weight, patient.height)
          + c["target_inr"] * TARGET_INR
          + c["african_american"] * (patient.race == "black")
          + c["amiodarone"] * patient.amiodarone
          + c["fluvastatin"] * patient.fluvastatin
          + c["dose_2_days_ago"] * recent[0]
          + c["dose_3_days_ago"] * recent[1]
          + c["dose_4_days_ago"] * recent[2])
    return math.exp(lp) / 7.0


# --- composites ---

PHASE_NAMES = ("initial", "adjust", "maintain")
_PROTOCOL_IDS = ("aurora", "iwpc_clinical", "iwpc_pg", "iwpc_pg_modified",
                 "lenzini", "intermountain")


@dataclass(frozen=True)
class CompositePhase:
    protocol: str
    day_lo: int
    day_hi: int


@dataclass(frozen=True)
class CompositeProtocol:
    name: str
    phases: tuple[CompositePhase, ...]

    def __post_init__(self):
        if len(self.phases) != 3:
            raise ConfigError(f"{self.name}: composites have exactly 3 phases")
        expected = 1
        for ph in self.phases:
            if ph.protocol not in _PROTOCOL_IDS:
                raise ConfigError(f"{self.name}: unknown protocol {ph.protocol!r}")
            if ph.day_lo != expected or ph.day_hi < ph.day_lo:
                raise ConfigError(
                    f"{self.name}: phase day ranges must partition [1, T] "
                    f"(got {ph.protocol} [{ph.day_lo}, {ph.day_hi}])")
            expected = ph.day_hi + 1

    def at_horizon(self, T: int) -> "CompositeProtocol":
        """Stretch or truncate the maintenance phase to end at day T."""
        init, adj, maint = self.phases
        if T <= maint.day_lo:
            raise ConfigError(f"{self.name}: horizon {T} too short for its phases")
        return CompositeProtocol(self.name, (init, adj,
                                             CompositePhase(maint.protocol, maint.day_lo, T)))

    def phase_for(self, day: int) -> tuple[str, CompositePhase]:
        for name, ph in zip(PHASE_NAMES, self.phases):
            if ph.day_lo <= day <= ph.day_hi:
                return name, ph
        raise ValueError(f"day {day} outside composite range")


def load_composites(path: str | Path | None = None) -> dict[str, CompositeProtocol]:
    raw = _load_data_json("composites.json") if path is None \
        else json.loads(Path(path).read_text())
    out = {}
    for name, phases in raw.items():
        if name.startswith("_"):
            continue
        out[name] = CompositeProtocol(
            name, tuple(CompositePhase(p, lo, hi) for p, lo, hi in phases))
    return out


@dataclass
class ProtocolTables:
    """Coefficient/config bundle shared by all composite runs."""

    iwpc: dict = field(default_factory=load_iwpc_coefficients)
    lenzini: dict = field(default_factory=load_lenzini_coefficients)
    aurora: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_AURORA_CONFIG)))
    composites: dict = field(default_factory=load_composites)


def run_composite(composite: CompositeProtocol | str, patient: PatientProfile,
                  T: int = 90, tables: ProtocolTables | None = None,
                  genotype_blind: bool = False,
                  rng: np.random.Generator | None = None) -> Trajectory:
    """Run one episode under a composite protocol; returns its trajectory.

    Each decision is delegated to the phase owning the current day;
    protocol retest intervals drive the measurement schedule, and the
    final interval keeps dosing through day T.
    """
    tables = tables or ProtocolTables()
    if isinstance(composite, str):
        if composite not in tables.composites:
            raise ConfigError(
                f"unknown protocol {composite!r}; valid: {sorted(tables.composites)}")
        composite = tables.composites[composite]
    composite = composite.at_horizon(T)

    params = patient.hidden_params
    obs = patient.observable()
    rng = rng if rng is not None else substream(patient.seed, NS_EPISODE)

    pkpd = fresh_state()
    mu = observe_inr(params.baseline_inr, params, rng)
    traj = Trajectory(patient_id=patient.id, measurements=[(1, mu)])
    administered: dict[int, float] = {}
    current_dose = 0.0
    memory = ZoneMemory()
    day = 1

    while day < T:
        phase_name, phase = composite.phase_for(day)
        one_offs: tuple[tuple[int, float], ...] = ()
        if phase.protocol == "aurora":
            if phase_name == "initial":
                dose = aurora_initial_dose(obs.age, tables.aurora)
                retest = phase.day_hi - day + 1
            else:
                action = aurora_adjust(mu, current_dose, phase_name, tables.aurora)
                dose, retest = action.daily_dose, action.next_test_in
        elif phase.protocol in ("iwpc_clinical", "iwpc_pg", "iwpc_pg_modified"):
            dose = iwpc_dose(obs, phase.protocol != "iwpc_clinical",
                             tables.iwpc, genotype_blind)
            retest = phase.day_hi - day + 1
        elif phase.protocol == "lenzini":
            recent = tuple(administered.get(day - k, 0.0) for k in (2, 3, 4))
            dose = lenzini_adjust(mu, obs, recent, tables.lenzini, genotype_blind)
            retest = phase.day_hi - day + 1
        elif phase.protocol == "intermountain":
            action, memory = intermountain_adjust(mu, current_dose * 7, memory)
            dose, retest = action.daily_dose, action.next_test_in
            one_offs = action.one_off_adjustments
        else:  # pragma: no cover - guarded by CompositeProtocol validation
            raise ConfigError(f"unhandled protocol {phase.protocol!r}")

        next_day = day + retest
        done = next_day >= T
        n_days = (T - day + 1) if done else retest
        doses = np.full(n_days, dose)
        for off, delta in one_offs:
            if off < n_days:
                doses[off] = max(0.0, doses[off] + delta)

        pkpd, latents = simulate_days(pkpd, params, doses)
        mu = observe_inr(float(latents[-1]), params, rng)

        traj.latent_inrs.extend(float(v) for v in latents)
        traj.daily_doses.extend(float(d) for d in doses)
        traj.decisions.append((day, float(dose), retest))
        traj.rewards.append(reward(latents))
        traj.measurements.append((min(next_day, T), mu))
        for i in range(n_days):
            administered[day + i] = float(doses[i])
        current_dose = dose
        day = next_day

    return traj
