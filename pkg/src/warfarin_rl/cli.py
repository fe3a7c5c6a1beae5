"""Command-line harness: generate / train / evaluate / compare / plot-data.

Commands compose through files only; every artifact embeds the master
seed and a hash of the effective configuration, and reruns with the same
inputs reproduce outputs byte for byte (no timestamps anywhere).
Exit codes: 0 success, 2 usage, 3 configuration, 4 data mismatch.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dqn, metrics, protocols
from .cohort import (PatientProfile, Sensitivity, generate_cohort, load_cohort,
                     load_distributions, save_cohort)
from .environment import Trajectory
from .errors import ConfigError, DataMismatchError
from .pkpd import Engine, EngineConfig

PRESETS = {
    "base": {},
    "h2": {"h": 2},
    "h3": {"h": 3},
    "noPG": {"genotype_blind": True},
    "d1max5": {"d1_max": 5.0},
}


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=False) + "\n")


def _meta_comment_lines(meta: dict) -> list[str]:
    return [f"# {key}={meta[key]}" for key in sorted(meta)]


# --- generate ---

def cmd_generate(args) -> int:
    engine = Engine(EngineConfig.from_json(args.engine_config)
                    if args.engine_config else None)
    dist = load_distributions(args.distributions)
    cfg = {"command": "generate", "n": args.n, "master_seed": args.seed,
           "engine": engine.config.to_dict(), "distributions": dist}
    cohort = generate_cohort(args.n, args.seed, engine, dist)
    save_cohort(cohort, args.out, meta={"master_seed": args.seed,
                                        "config_hash": config_hash(cfg)})
    print(f"wrote {len(cohort)} patients to {args.out}")
    return 0


# --- train ---

def cmd_train(args) -> int:
    overrides = PRESETS[args.preset] if args.preset else {}
    config = dqn.TrainConfig(
        epochs=args.epochs, cohort_per_epoch=args.cohort_size, T=args.T,
        h=overrides.get("h", args.h),
        d1_max=overrides.get("d1_max", args.d1max),
        genotype_blind=overrides.get("genotype_blind", args.no_genotype),
        master_seed=args.seed, validation_size=args.validation_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = {"command": "train", **config.to_dict()}
    chash = config_hash(cfg_dict)
    _write_json(out / "config.json", {"config_hash": chash, **cfg_dict})

    def progress(row):
        print(f"epoch {row['epoch']:3d}  eps={row['epsilon']:.3f}  "
              f"pttr_all={row['pttr_mean_all']:.3f}  "
              f"worst={row['worst_class_score']:.3f}", flush=True)

    checkpoints, log = dqn.train(config, progress=progress if args.verbose else None)
    for ckpt in checkpoints:
        dqn.save_checkpoint(ckpt, out / f"checkpoint_ep{ckpt.epoch:03d}.npz",
                            extra_meta={"config_hash": chash})

    log_path = out / "training_log.csv"
    with open(log_path, "w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n# master_seed={config.master_seed}\n")
        writer = csv.DictWriter(fh, fieldnames=list(log[0].keys()))
        writer.writeheader()
        writer.writerows(log)

    best = dqn.select_best(checkpoints)
    scores = [dqn.worst_class_score(c.class_stats) for c in checkpoints]
    _write_json(out / "selection.json", {
        "config_hash": chash, "master_seed": config.master_seed,
        "selected_epoch": best.epoch,
        "selected_checkpoint": f"checkpoint_ep{best.epoch:03d}.npz",
        "worst_class_scores": {str(c.epoch): s for c, s in zip(checkpoints, scores)},
    })
    print(f"trained {len(checkpoints)} epochs; selected epoch {best.epoch}")
    return 0


# --- evaluate ---

def _run_baseline_episode(task) -> Trajectory:
    patient_dict, name, T, blind = task
    from .cohort import _patient_from_dict
    patient = _patient_from_dict(patient_dict)
    return protocols.run_composite(name, patient, T=T, genotype_blind=blind)


def _rollout_baseline(name: str, cohort: list[PatientProfile], T: int,
                      blind: bool, workers: int) -> list[Trajectory]:
    from .cohort import _patient_to_dict
    tasks = [(_patient_to_dict(p), name, T, blind) for p in cohort]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_baseline_episode, tasks, chunksize=32))
    return [_run_baseline_episode(t) for t in tasks]


def _save_trajectories(path: Path, trajectories: list[Trajectory], meta: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"kind": "trajectories", "format": 1, **meta}) + "\n")
        for traj in trajectories:
            fh.write(json.dumps({
                "id": traj.patient_id, "latent_inrs": traj.latent_inrs,
                "daily_doses": traj.daily_doses, "decisions": traj.decisions,
                "rewards": traj.rewards, "measurements": traj.measurements,
            }) + "\n")


def load_trajectories(path: str | Path) -> tuple[list[Trajectory], dict]:
    trajectories, meta = [], {}
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            if d.get("kind") == "trajectories":
                meta = d
                continue
            trajectories.append(Trajectory(
                patient_id=d["id"], latent_inrs=d["latent_inrs"],
                daily_doses=d["daily_doses"],
                decisions=[tuple(x) for x in d["decisions"]],
                rewards=d["rewards"],
                measurements=[tuple(x) for x in d["measurements"]]))
    return trajectories, meta


_REPORT_FIELDS = ("id", "sensitivity", "pttr_daily", "pttr_interpolated",
                  "first_therapeutic_day", "mean_dose_pre", "mean_dose_post",
                  "mean_dose_total", "decision_count")


def _report_row(rep: metrics.PatientReport) -> dict:
    return {"id": rep.patient_id, "sensitivity": rep.sensitivity.value,
            "pttr_daily": rep.pttr_daily, "pttr_interpolated": rep.pttr_interpolated,
            "first_therapeutic_day": rep.first_therapeutic_day,
            "mean_dose_pre": rep.mean_dose_pre, "mean_dose_post": rep.mean_dose_post,
            "mean_dose_total": rep.mean_dose_total, "decision_count": rep.decision_count}


def _save_report(out: Path, reports: list[metrics.PatientReport], meta: dict) -> None:
    rows = [_report_row(r) for r in reports]
    payload = {"kind": "report", "format": 1, **meta,
               "summary": metrics.summarize_cohort(reports), "patients": rows}
    _write_json(out / "report.json", payload)
    with open(out / "report.csv", "w", newline="") as fh:
        for line in _meta_comment_lines(meta):
            fh.write(line + "\n")
        writer = csv.DictWriter(fh, fieldnames=_REPORT_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k])
                             for k in _REPORT_FIELDS})


def load_report(path: str | Path) -> dict:
    report = json.loads(Path(path).read_text())
    if report.get("kind") != "report":
        raise ConfigError(f"{path} is not a report file")
    return report


def cmd_evaluate(args) -> int:
    cohort, cohort_meta = load_cohort(args.cohort)
    if not cohort:
        raise ConfigError(f"cohort file {args.cohort} holds no patients")
    policy = args.policy
    is_baseline = policy in protocols.BASELINE_NAMES
    if not is_baseline and not Path(policy).exists():
        print(f"unknown policy {policy!r}: expected a checkpoint path or one of "
              f"{', '.join(protocols.BASELINE_NAMES)}", file=sys.stderr)
        return 2

    if is_baseline:
        trajectories = _rollout_baseline(policy, cohort, args.T,
                                         args.no_genotype, args.workers)
        policy_label = policy
        T = args.T
    else:
        ckpt = dqn.load_checkpoint(policy)
        cfg = ckpt.config
        trajectories = dqn.evaluate_policy(
            ckpt.network(), cohort, T=cfg.T, h=cfg.h, d1_max=cfg.d1_max,
            genotype_blind=cfg.genotype_blind)
        policy_label = f"dqn_ep{ckpt.epoch}"
        T = cfg.T

    run_cfg = {"command": "evaluate", "policy": policy_label, "T": T,
               "genotype_blind": args.no_genotype,
               "cohort_hash": cohort_meta.get("config_hash", ""),
               "cohort_seed": cohort_meta.get("master_seed", 0)}
    meta = {"policy": policy_label, "config_hash": config_hash(run_cfg),
            "master_seed": cohort_meta.get("master_seed", 0)}

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_trajectories(out / "trajectories.jsonl", trajectories, meta)
    reports = [metrics.build_report(t, p.sensitivity, T)
               for t, p in zip(trajectories, cohort)]
    _save_report(out, reports, meta)
    print(f"evaluated {policy_label} on {len(cohort)} patients -> {out}")
    return 0


# --- compare ---

def _class_of_row(row: dict) -> str:
    return row["sensitivity"]


def _table_by_class(patients: list[dict], metric: str) -> dict:
    table = {}
    for cls in (*[c.value for c in metrics.CLASS_ORDER], "all"):
        vals = [r[metric] for r in patients
                if r[metric] is not None and (cls == "all" or _class_of_row(r) == cls)]
        arr = np.asarray(vals, dtype=np.float64)
        table[cls] = {"n": int(arr.size),
                      "mean": float(arr.mean()) if arr.size else float("nan"),
                      "sd": float(arr.std()) if arr.size else float("nan")}
    return table


def cmd_compare(args) -> int:
    loaded = [load_report(p) for p in args.reports]
    names = [rep.get("policy", f"report{i}") for i, rep in enumerate(loaded)]
    id_sets = [tuple(r["id"] for r in rep["patients"]) for rep in loaded]
    if any(ids != id_sets[0] for ids in id_sets[1:]):
        raise DataMismatchError(
            "reports cover different patients; run every policy on the same cohort")

    subject, *baselines = loaded
    subject_rows = subject["patients"]
    baseline_rows = [rep["patients"] for rep in baselines] or [subject_rows]

    best_baseline = {}
    for rows in baseline_rows:
        for r in rows:
            cur = best_baseline.get(r["id"], float("-inf"))
            best_baseline[r["id"]] = max(cur, r["pttr_daily"])
    deltas = [{"id": r["id"], "sensitivity": r["sensitivity"],
               "delta": r["pttr_daily"] - best_baseline[r["id"]]}
              for r in subject_rows]

    comparison = {
        "kind": "comparison", "format": 1,
        "policies": names,
        "config_hash": config_hash({"command": "compare",
                                    "reports": [r.get("config_hash", "") for r in loaded]}),
        "master_seed": subject.get("master_seed", 0),
        "pttr_by_class": {name: _table_by_class(rep["patients"], "pttr_daily")
                          for name, rep in zip(names, loaded)},
        "dose_by_class": {name: _table_by_class(rep["patients"], "mean_dose_total")
                          for name, rep in zip(names, loaded)},
        "interpolation_distortion": {
            name: metrics.boxplot_quantiles(
                [(r["pttr_interpolated"] - r["pttr_daily"]) * 100
                 for r in rep["patients"]])
            for name, rep in zip(names, loaded)},
        "pttr_delta_vs_best_baseline": {
            "per_patient": deltas,
            "by_class": _table_by_class(
                [{"sensitivity": d["sensitivity"], "delta": d["delta"]} for d in deltas],
                "delta"),
        },
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "comparison.json", comparison)

    with open(out / "comparison.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={comparison['config_hash']}\n"
                 f"# master_seed={comparison['master_seed']}\n")
        writer = csv.writer(fh)
        writer.writerow(["policy", "sensitivity", "n", "pttr_mean", "pttr_sd",
                         "dose_mean", "dose_sd"])
        for name in names:
            for cls in (*[c.value for c in metrics.CLASS_ORDER], "all"):
                p = comparison["pttr_by_class"][name][cls]
                d = comparison["dose_by_class"][name][cls]
                writer.writerow([name, cls, p["n"], p["mean"], p["sd"],
                                 d["mean"], d["sd"]])
    print(f"compared {', '.join(names)} -> {out}")
    return 0


# --- plot-data ---

def cmd_plot_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wrote = []

    for traj_path in args.trajectories or []:
        trajectories, meta = load_trajectories(traj_path)
        if args.cohort:
            cohort, _ = load_cohort(args.cohort)
            sens = {p.id: p.sensitivity for p in cohort}
        else:
            sens = {t.patient_id: Sensitivity.NORMAL for t in trajectories}
        label = meta.get("policy", Path(traj_path).stem)
        payload = {"kind": "plot_daily_stats", "policy": label, **{
            k: meta[k] for k in ("config_hash", "master_seed") if k in meta}}
        payload["by_class"] = metrics.daily_trajectory_stats(trajectories, sens)
        path = out / f"daily_stats_{label}.json"
        _write_json(path, payload)
        wrote.append(path)

    for rep_path in args.reports or []:
        rep = load_report(rep_path)
        label = rep.get("policy", Path(rep_path).stem)
        rows = rep["patients"]
        payload = {
            "kind": "plot_report_stats", "policy": label,
            "config_hash": rep.get("config_hash", ""),
            "master_seed": rep.get("master_seed", 0),
            "time_to_therapeutic": metrics.boxplot_quantiles(
                [r["first_therapeutic_day"] for r in rows]),
            "dose_pre_therapeutic": metrics.boxplot_quantiles(
                [r["mean_dose_pre"] for r in rows]),
            "dose_post_therapeutic": metrics.boxplot_quantiles(
                [r["mean_dose_post"] for r in rows]),
            "interpolation_distortion": metrics.boxplot_quantiles(
                [(r["pttr_interpolated"] - r["pttr_daily"]) * 100 for r in rows]),
            "pttr_histogram": metrics.histogram(
                [r["pttr_daily"] for r in rows], bins=40, lo=0.0, hi=1.0),
        }
        path = out / f"report_stats_{label}.json"
        _write_json(path, payload)
        wrote.append(path)

    if not wrote:
        print("nothing to do: pass --trajectories and/or --reports", file=sys.stderr)
        return 2
    print(f"wrote {len(wrote)} plot-data files to {out}")
    return 0


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warfarin-rl",
        description="Simulated warfarin dosing: cohort generation, DQN training, "
                    "protocol evaluation and comparison.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a reproducible virtual cohort")
    p.add_argument("-n", type=_positive_int, required=True, help="number of patients")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output cohort JSONL path")
    p.add_argument("--engine-config", help="PK/PD engine config JSON")
    p.add_argument("--distributions", help="covariate distribution JSON")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the dosing network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=_positive_int, default=100)
    p.add_argument("--cohort-size", type=_positive_int, default=10_000)
    p.add_argument("--validation-size", type=_positive_int, default=1000)
    p.add_argument("--T", type=int, default=90, help="dosing horizon in days")
    p.add_argument("--h", type=_positive_int, default=1, help="history length")
    p.add_argument("--d1max", type=float, default=15.0, help="first-decision dose cap")
    p.add_argument("--no-genotype", action="store_true",
                   help="hide genotypes from the network")
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help="named scenario (overrides h/d1max/genotype flags)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="roll a policy over a cohort")
    p.add_argument("--policy", required=True,
                   help=f"checkpoint path or one of {', '.join(protocols.BASELINE_NAMES)}")
    p.add_argument("--cohort", required=True, help="cohort JSONL path")
    p.add_argument("--T", type=int, default=90)
    p.add_argument("--no-genotype", action="store_true",
                   help="run pharmacogenetic baselines with unknown genotype")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="align reports and emit comparison tables")
    p.add_argument("--reports", nargs="+", required=True,
                   help="report.json files; first is the subject policy")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot-data", help="emit plot-ready JSON from artifacts")
    p.add_argument("--trajectories", nargs="*", help="trajectories.jsonl files")
    p.add_argument("--reports", nargs="*", help="report.json files")
    p.add_argument("--cohort", help="cohort JSONL for sensitivity classes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except DataMismatchError as exc:
        print(f"data mismatch: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
