"""Virtual-patient cohorts: covariate sampling, sensitivity classes, persistence.

Covariate distributions default to the published prevalence table; the
shipped numbers close two-decimal print-rounding gaps by absorbing the
residue into each categorical's largest bucket so every distribution sums
to exactly 1.  The age sampler uses pre-truncation moments calibrated so
the truncated distribution reproduces the published mean/SD.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .pkpd import Cyp2c9, Engine, PkpdParameters, Vkorc1
from .seeding import NS_PATIENT, draw_seed, substream


class Sensitivity(str, Enum):
    NORMAL = "normal"
    SENSITIVE = "sensitive"
    HIGHLY_SENSITIVE = "highly_sensitive"


_N, _S, _H = Sensitivity.NORMAL, Sensitivity.SENSITIVE, Sensitivity.HIGHLY_SENSITIVE

# rows: VKORC1 G/G, G/A, A/A; cols: CYP2C9 *1/*1 .. *3/*3
_SENSITIVITY_GRID = {
    Vkorc1.GG: {Cyp2c9.S11: _N, Cyp2c9.S12: _N, Cyp2c9.S13: _S,
                Cyp2c9.S22: _S, Cyp2c9.S23: _S, Cyp2c9.S33: _H},
    Vkorc1.GA: {Cyp2c9.S11: _N, Cyp2c9.S12: _S, Cyp2c9.S13: _S,
                Cyp2c9.S22: _S, Cyp2c9.S23: _H, Cyp2c9.S33: _H},
    Vkorc1.AA: {Cyp2c9.S11: _S, Cyp2c9.S12: _S, Cyp2c9.S13: _H,
                Cyp2c9.S22: _H, Cyp2c9.S23: _H, Cyp2c9.S33: _H},
}


def classify_sensitivity(cyp: Cyp2c9, vkorc1: Vkorc1) -> Sensitivity:
    """Sensitivity class of a genotype pair (total over all 18 cells)."""
    return _SENSITIVITY_GRID[vkorc1][cyp]


_DEFAULT_DISTRIBUTIONS = {
    # sampling moments calibrated so the truncated draw has mean 67.3, sd 14.43
    "age": {"mean": 67.9445, "sd": 15.2192, "low": 18.0, "high": 100.0,
            "target_mean": 67.3, "target_sd": 14.43},
    "cyp2c9": {"*1/*1": 0.6739, "*1/*2": 0.1486, "*1/*3": 0.0925,
               "*2/*2": 0.0651, "*2/*3": 0.0197, "*3/*3": 0.0002},
    "vkorc1": {"G/G": 0.3837, "G/A": 0.4418, "A/A": 0.1745},
    "weight": {"mean": 199.24, "sd": 54.71, "low": 70, "high": 500},
    "height": {"mean": 66.78, "sd": 4.31, "low": 45, "high": 85},
    "gender": {"female": 0.5314, "male": 0.4686},
    "race": {"white": 0.951799, "black": 0.0425, "asian": 0.0039,
             "american-indian/alaskan": 0.0018, "pacific-islander": 0.000001},
    "tobacco": {"no": 0.9034, "yes": 0.0966},
    "amiodarone": {"no": 0.8846, "yes": 0.1154},
    "fluvastatin": {"no": 0.9997, "yes": 0.0003},
}

_CATEGORICALS = ("cyp2c9", "vkorc1", "gender", "race", "tobacco",
                 "amiodarone", "fluvastatin")


def load_distributions(path: str | Path | None = None) -> dict:
    """Distribution table, validated: each categorical sums to 1 (1e-9)."""
    table = json.loads(json.dumps(_DEFAULT_DISTRIBUTIONS))
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read distribution config {path}: {exc}") from exc
        table.update(raw)
    for name in _CATEGORICALS:
        probs = table.get(name)
        if not isinstance(probs, dict) or not probs:
            raise ConfigError(f"distribution table missing categorical {name!r}")
        total = sum(probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"{name} probabilities sum to {total!r}, not 1")
        if any(p < 0 for p in probs.values()):
            raise ConfigError(f"{name} has a negative probability")
    for name in ("age", "weight", "height"):
        spec = table.get(name)
        if not isinstance(spec, dict) or spec.get("sd", 0) <= 0:
            raise ConfigError(f"distribution table missing moments for {name!r}")
    return table


@dataclass(frozen=True)
class ObservablePatient:
    """The covariate slice dosing policies are allowed to see."""

    id: int
    age: float
    cyp2c9: Cyp2c9
    vkorc1: Vkorc1
    weight: int
    height: int
    gender: str
    race: str
    tobacco: bool
    amiodarone: bool
    fluvastatin: bool

    @property
    def sensitivity(self) -> Sensitivity:
        return classify_sensitivity(self.cyp2c9, self.vkorc1)


@dataclass(frozen=True)
class PatientProfile:
    """Observable covariates plus hidden dose-response parameters."""

    id: int
    age: float
    cyp2c9: Cyp2c9
    vkorc1: Vkorc1
    weight: int
    height: int
    gender: str
    race: str
    tobacco: bool
    amiodarone: bool
    fluvastatin: bool
    hidden_params: PkpdParameters
    seed: int

    def __post_init__(self):
        if not 18 <= self.age <= 100:
            raise ValueError("age outside [18, 100]")
        if not 70 <= self.weight <= 500:
            raise ValueError("weight outside [70, 500]")
        if not 45 <= self.height <= 85:
            raise ValueError("height outside [45, 85]")

    @property
    def sensitivity(self) -> Sensitivity:
        return classify_sensitivity(self.cyp2c9, self.vkorc1)

    def observable(self) -> ObservablePatient:
        return ObservablePatient(
            id=self.id, age=self.age, cyp2c9=self.cyp2c9, vkorc1=self.vkorc1,
            weight=self.weight, height=self.height, gender=self.gender,
            race=self.race, tobacco=self.tobacco, amiodarone=self.amiodarone,
            fluvastatin=self.fluvastatin)


def _truncated_normal(rng: np.random.Generator, mean: float, sd: float,
                      low: float, high: float) -> float:
    while True:
        x = rng.normal(mean, sd)
        if low <= x <= high:
            return x


def _categorical(rng: np.random.Generator, probs: dict) -> str:
    u = rng.random()
    acc = 0.0
    last = None
    for name, p in probs.items():
        acc += p
        last = name
        if u < acc:
            return name
    return last  # guard against float residue


def sample_patient(dist: dict, rng: np.random.Generator, engine: Engine,
                   patient_id: int = 0) -> PatientProfile:
    """Draw one patient: covariates per the table, then hidden parameters."""
    age_cfg = dist["age"]
    age = _truncated_normal(rng, age_cfg["mean"], age_cfg["sd"],
                            age_cfg["low"], age_cfg["high"])
    cyp = Cyp2c9(_categorical(rng, dist["cyp2c9"]))
    vkorc1 = Vkorc1(_categorical(rng, dist["vkorc1"]))
    weight = int(round(_truncated_normal(rng, dist["weight"]["mean"], dist["weight"]["sd"],
                                         dist["weight"]["low"], dist["weight"]["high"])))
    height = int(round(_truncated_normal(rng, dist["height"]["mean"], dist["height"]["sd"],
                                         dist["height"]["low"], dist["height"]["high"])))
    gender = _categorical(rng, dist["gender"])
    race = _categorical(rng, dist["race"])
    tobacco = _categorical(rng, dist["tobacco"]) == "yes"
    amiodarone = _categorical(rng, dist["amiodarone"]) == "yes"
    fluvastatin = _categorical(rng, dist["fluvastatin"]) == "yes"
    hidden = engine.individualize(engine.population_params(age, cyp, vkorc1), rng)
    return PatientProfile(
        id=patient_id, age=age, cyp2c9=cyp, vkorc1=vkorc1, weight=weight,
        height=height, gender=gender, race=race, tobacco=tobacco,
        amiodarone=amiodarone, fluvastatin=fluvastatin,
        hidden_params=hidden, seed=draw_seed(rng))


def generate_cohort(n: int, master_seed: int, engine: Engine | None = None,
                    dist: dict | None = None) -> list[PatientProfile]:
    """n patients; patient i depends only on (master_seed, i)."""
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    engine = engine or Engine()
    dist = dist or load_distributions()
    return [sample_patient(dist, substream(master_seed, NS_PATIENT, i), engine, i)
            for i in range(n)]


# --- persistence (JSON lines; one patient per line, meta record first) ---

def _patient_to_dict(p: PatientProfile) -> dict:
    hp = p.hidden_params
    return {
        "id": p.id, "age": p.age, "cyp2c9": p.cyp2c9.value, "vkorc1": p.vkorc1.value,
        "weight": p.weight, "height": p.height, "gender": p.gender, "race": p.race,
        "tobacco": p.tobacco, "amiodarone": p.amiodarone, "fluvastatin": p.fluvastatin,
        "seed": p.seed,
        "latent": {
            "elimination_rate": hp.elimination_rate, "effect_delay": hp.effect_delay,
            "ec50": hp.ec50, "emax": hp.emax, "hill_coefficient": hp.hill_coefficient,
            "baseline_inr": hp.baseline_inr, "residual_sd": hp.residual_sd,
            "bsv_multipliers": list(hp.bsv_multipliers),
        },
    }


def _patient_from_dict(d: dict) -> PatientProfile:
    lat = d["latent"]
    hidden = PkpdParameters(
        elimination_rate=lat["elimination_rate"], effect_delay=lat["effect_delay"],
        ec50=lat["ec50"], emax=lat["emax"], hill_coefficient=lat["hill_coefficient"],
        baseline_inr=lat["baseline_inr"], residual_sd=lat["residual_sd"],
        bsv_multipliers=tuple(lat["bsv_multipliers"]))
    return PatientProfile(
        id=d["id"], age=d["age"], cyp2c9=Cyp2c9(d["cyp2c9"]), vkorc1=Vkorc1(d["vkorc1"]),
        weight=d["weight"], height=d["height"], gender=d["gender"], race=d["race"],
        tobacco=d["tobacco"], amiodarone=d["amiodarone"], fluvastatin=d["fluvastatin"],
        hidden_params=hidden, seed=d["seed"])


def save_cohort(patients: list[PatientProfile], path: str | Path,
                meta: dict | None = None) -> None:
    meta_line = {"kind": "cohort", "format": 1, "n": len(patients), **(meta or {})}
    with open(path, "w") as fh:
        fh.write(json.dumps(meta_line) + "\n")
        for p in patients:
            fh.write(json.dumps(_patient_to_dict(p)) + "\n")


def load_cohort(path: str | Path) -> tuple[list[PatientProfile], dict]:
    patients = []
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if d.get("kind") == "cohort":
                meta = d
            else:
                patients.append(_patient_from_dict(d))
    return patients, meta
