"""Outcome metrics: time in therapeutic range, dose summaries, cohort tables.

Two PTTR estimators are provided: the daily-truth fraction over simulated
latent INRs, and the interpolation-based estimate computed only from the
measurements a clinic would actually have (linear segments, exact
crossings of the range bounds, last value carried to the horizon).
Cohort tables use the population SD convention (divide by N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import Sensitivity
from .environment import Trajectory

THERAPEUTIC_LO = 2.0
THERAPEUTIC_HI = 3.0

CLASS_ORDER = (Sensitivity.NORMAL, Sensitivity.SENSITIVE, Sensitivity.HIGHLY_SENSITIVE)


def pttr_daily(latent_inrs, lo: float = THERAPEUTIC_LO, hi: float = THERAPEUTIC_HI) -> float:
    """Fraction of days with INR inside [lo, hi]."""
    inrs = np.asarray(latent_inrs, dtype=np.float64)
    if inrs.size == 0:
        raise ValueError("pttr_daily requires at least one INR")
    return float(np.count_nonzero((inrs >= lo) & (inrs <= hi)) / inrs.size)


def _segment_fraction(v1: float, v2: float, lo: float, hi: float) -> float:
    """Fraction of a unit-time linear segment v1->v2 spent inside [lo, hi]."""
    if v1 == v2:
        return 1.0 if lo <= v1 <= hi else 0.0
    t_at = lambda v: (v - v1) / (v2 - v1)
    t0, t1 = sorted((t_at(lo), t_at(hi)))
    return max(0.0, min(t1, 1.0) - max(t0, 0.0))


def pttr_rosendaal(measurements, T: int, lo: float = THERAPEUTIC_LO,
                   hi: float = THERAPEUTIC_HI) -> float:
    """Interpolated time in range from sparse (day, INR) measurements.

    Linear interpolation between consecutive measurements with exact
    crossing points of lo/hi; the final measurement extends at constant
    value to day T.  Returns in-range time / covered time.
    """
    pts = list(measurements)
    if len(pts) < 2:
        raise ValueError("interpolated PTTR requires at least two measurements")
    days = [d for d, _ in pts]
    if any(d2 <= d1 for d1, d2 in zip(days, days[1:])):
        raise ValueError("measurement days must be strictly increasing")
    total = 0.0
    in_range = 0.0
    for (d1, v1), (d2, v2) in zip(pts, pts[1:]):
        span = d2 - d1
        total += span
        in_range += span * _segment_fraction(v1, v2, lo, hi)
    last_day, last_val = pts[-1]
    if T > last_day:
        span = T - last_day
        total += span
        in_range += span * (1.0 if lo <= last_val <= hi else 0.0)
    return in_range / total


def first_therapeutic_day(latent_inrs, lo: float = THERAPEUTIC_LO,
                          hi: float = THERAPEUTIC_HI) -> int | None:
    """1-based first day in range, or None if the range is never reached."""
    for i, v in enumerate(latent_inrs):
        if lo <= v <= hi:
            return i + 1
    return None


@dataclass(frozen=True)
class DoseSummary:
    pre: float | None       # mean daily dose on days before first therapeutic day
    post: float | None      # mean daily dose from that day onward
    total: float
    decision_count: int


def dose_summaries(traj: Trajectory, lo: float = THERAPEUTIC_LO,
                   hi: float = THERAPEUTIC_HI) -> DoseSummary:
    doses = np.asarray(traj.daily_doses, dtype=np.float64)
    ftd = first_therapeutic_day(traj.latent_inrs, lo, hi)
    total = float(doses.mean())
    if ftd is None:
        pre, post = total, None
    else:
        pre = float(doses[: ftd - 1].mean()) if ftd > 1 else None
        post = float(doses[ftd - 1:].mean())
    return DoseSummary(pre=pre, post=post, total=total,
                       decision_count=len(traj.decisions))


@dataclass(frozen=True)
class PatientReport:
    """Per-patient metric row, the unit of all cohort tables."""

    patient_id: int
    sensitivity: Sensitivity
    pttr_daily: float
    pttr_interpolated: float
    first_therapeutic_day: int | None
    mean_dose_pre: float | None
    mean_dose_post: float | None
    mean_dose_total: float
    decision_count: int


def build_report(traj: Trajectory, sensitivity: Sensitivity, T: int,
                 lo: float = THERAPEUTIC_LO, hi: float = THERAPEUTIC_HI) -> PatientReport:
    doses = dose_summaries(traj, lo, hi)
    return PatientReport(
        patient_id=traj.patient_id,
        sensitivity=sensitivity,
        pttr_daily=pttr_daily(traj.latent_inrs, lo, hi),
        pttr_interpolated=pttr_rosendaal(traj.measurements, T, lo, hi),
        first_therapeutic_day=first_therapeutic_day(traj.latent_inrs, lo, hi),
        mean_dose_pre=doses.pre,
        mean_dose_post=doses.post,
        mean_dose_total=doses.total,
        decision_count=doses.decision_count,
    )


def _mean_sd(values) -> tuple[float, float]:
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std())  # population SD


def summarize_cohort(reports: list[PatientReport]) -> dict:
    """Per-sensitivity-class and overall mean/SD of every metric."""
    groups: dict[str, list[PatientReport]] = {cls.value: [] for cls in CLASS_ORDER}
    for rep in reports:
        groups[rep.sensitivity.value].append(rep)
    groups["all"] = list(reports)

    out = {}
    for name, members in groups.items():
        stats = {"n": len(members)}
        for metric in ("pttr_daily", "pttr_interpolated", "first_therapeutic_day",
                       "mean_dose_pre", "mean_dose_post", "mean_dose_total",
                       "decision_count"):
            mean, sd = _mean_sd(getattr(r, metric) for r in members)
            stats[metric] = {"mean": mean, "sd": sd}
        stats["never_therapeutic"] = sum(
            1 for r in members if r.first_therapeutic_day is None)
        out[name] = stats
    return out


def pttr_deltas(subject: list[PatientReport],
                baselines: list[list[PatientReport]]) -> list[float]:
    """Per patient: subject PTTR minus the best baseline PTTR (daily truth)."""
    by_id = [{r.patient_id: r for r in reps} for reps in baselines]
    deltas = []
    for rep in subject:
        best = max(m[rep.patient_id].pttr_daily for m in by_id)
        deltas.append(rep.pttr_daily - best)
    return deltas


# --- plot-data emitters ---

def daily_trajectory_stats(trajectories: list[Trajectory],
                           sensitivities: dict[int, Sensitivity]) -> dict:
    """Per class and day: mean and SD of latent INR and of daily dose."""
    out = {}
    for cls in (*CLASS_ORDER, None):
        members = [t for t in trajectories
                   if cls is None or sensitivities[t.patient_id] == cls]
        if not members:
            continue
        inrs = np.array([t.latent_inrs for t in members])
        doses = np.array([t.daily_doses for t in members])
        out[cls.value if cls else "all"] = {
            "inr_mean": inrs.mean(axis=0).tolist(),
            "inr_sd": inrs.std(axis=0).tolist(),
            "dose_mean": doses.mean(axis=0).tolist(),
            "dose_sd": doses.std(axis=0).tolist(),
        }
    return out


def boxplot_quantiles(values) -> dict:
    """Quartiles with 1.5-IQR whiskers, for boxplot-style figures."""
    arr = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if arr.size == 0:
        return {"n": 0}
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    iqr = q3 - q1
    lo_w = float(arr[arr >= q1 - 1.5 * iqr].min())
    hi_w = float(arr[arr <= q3 + 1.5 * iqr].max())
    return {"n": int(arr.size), "min": float(arr.min()), "whisker_low": lo_w,
            "q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_high": hi_w, "max": float(arr.max())}


def histogram(values, bins: int = 40, lo: float | None = None,
              hi: float | None = None) -> dict:
    arr = np.asarray(list(values), dtype=np.float64)
    rng = (lo if lo is not None else float(arr.min()),
           hi if hi is not None else float(arr.max()))
    counts, edges = np.histogram(arr, bins=bins, range=rng)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def interpolation_distortion(reports: list[PatientReport]) -> dict:
    """Distribution of (interpolated - daily) PTTR, in percentage points."""
    deltas = [(r.pttr_interpolated - r.pttr_daily) * 100 for r in reports]
    return boxplot_quantiles(deltas)
