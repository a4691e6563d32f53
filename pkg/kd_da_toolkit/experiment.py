"""Pipelines behind the command-line subcommands.

Each ``run_*`` function takes an :class:`~kd_da_toolkit.config.ExperimentConfig`,
writes its artifacts under ``output_dir`` and returns what it wrote in memory.
Artifacts are plain CSV/JSON; floats are written with 17 significant digits so
equal runs produce equal bytes.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_to_dict, distill_config_for
from .data import Dataset, gen_synthetic, load_cifar_binary
from .distill import DistillConfig, iter_composed, label_disagreement_rate, train_student, train_teacher
from .metrics import correlation_metric_rbar, covariance_metric_vbar, eval_test_loss, t_stddev
from .nn import Model, build_model
from .proposition import estimate_gap_moments, exact_gap_moments, exact_or_closed_form, random_world
from .stats import UndefinedCorrelationError, pearson

logger = logging.getLogger(__name__)

RANKING_FIELDS = ["scheme", "t_stddev", "vbar", "rbar", "student_test_loss", "student_test_acc", "seed"]
PROP_FIELDS = ["rho", "N", "mean_delta", "se_delta", "mean_delta_sq", "se_delta_sq", "exact_mean", "exact_sq"]
EXACT_TOL = 1e-12


def fmt(value: Any) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_json(obj: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(rows: Sequence[Dict[str, Any]], fields: Sequence[str], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: fmt(row[k]) for k in fields})


def _out_dir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def load_datasets(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    spec = cfg.data
    if spec.source == "synthetic":
        return gen_synthetic(spec.classes, spec.per_class, spec.side, spec.seed)
    assert spec.cifar_train is not None
    train = load_cifar_binary(spec.cifar_train, spec.cifar_variant, "train")
    test = load_cifar_binary(spec.cifar_test, spec.cifar_variant, "test") if spec.cifar_test else train
    return train, test


def load_teacher(cfg: ExperimentConfig) -> Model:
    path = cfg.teacher_checkpoint_path
    if not os.path.exists(path):
        raise ValueError(f"teacher checkpoint {path} is missing; run train-teacher first")
    return load_checkpoint(path, expect_spec=list(cfg.teacher_layers))


# -- train-teacher / distill ---------------------------------------------------


def run_train_teacher(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Train the teacher with cross-entropy, save its checkpoint and ``teacher_metrics.json``."""
    out = _out_dir(cfg)
    train, test = load_datasets(cfg)
    teacher = build_model(cfg.teacher_layers, np.random.default_rng(cfg.teacher_train.seed))
    teacher, history = train_teacher(teacher, train, test, cfg.teacher_train)
    save_checkpoint(teacher, cfg.teacher_checkpoint_path)
    train_loss, train_acc = eval_test_loss(teacher, train)
    test_loss, test_acc = eval_test_loss(teacher, test)
    summary = {
        "checkpoint": cfg.teacher_checkpoint_path,
        "epochs": len(history),
        "train_loss": train_loss,
        "train_accuracy": train_acc,
        "test_loss": test_loss,
        "test_accuracy": test_acc,
        "history": [h.to_dict() for h in history],
    }
    write_json(summary, os.path.join(out, "teacher_metrics.json"))
    logger.info("teacher: train_acc=%.3f test_acc=%.3f", train_acc, test_acc)
    return summary


def distill_one(
    teacher: Model, cfg: ExperimentConfig, dcfg: DistillConfig, train: Dataset, test: Dataset
) -> Tuple[Model, List[Dict[str, Any]]]:
    student = build_model(cfg.student_layers, np.random.default_rng(dcfg.seed))
    student, history = train_student(teacher, student, train, dcfg, test)
    return student, [h.to_dict() for h in history]


def run_distill(cfg: ExperimentConfig, scheme_name: Optional[str] = None) -> Dict[str, Any]:
    """Distill one student per seed with one scheme; write its checkpoint and risk history."""
    out = _out_dir(cfg)
    scheme_name = scheme_name or cfg.scheme_name
    teacher = load_teacher(cfg)
    train, test = load_datasets(cfg)
    results = {}
    for seed in cfg.seeds:
        dcfg = distill_config_for(cfg, scheme_name, seed)
        student, history = distill_one(teacher, cfg, dcfg, train, test)
        stem = f"student_{scheme_name}_seed{seed}"
        save_checkpoint(student, os.path.join(out, stem + ".dgkd"))
        test_loss, test_acc = eval_test_loss(student, test)
        results[str(seed)] = {"history": history, "test_loss": test_loss, "test_accuracy": test_acc}
        write_json(results[str(seed)], os.path.join(out, stem + ".json"))
    return {"scheme": scheme_name, "runs": results}


# -- metrics -------------------------------------------------------------------


@dataclass(slots=True)
class SchemeMetrics:
    scheme: str
    seed: int
    t_stddev: float
    vbar: float
    rbar: float
    zero_variance_rows: int
    disagreement: Optional[float] = None
    m: List[float] = field(default_factory=list)


def measure_scheme(
    teacher: Model,
    train: Dataset,
    cfg: ExperimentConfig,
    scheme_name: str,
    seed: int,
    student: Optional[Model] = None,
) -> SchemeMetrics:
    """T. stddev, v-bar and r-bar of ``teacher`` on the scheme's composed training stream."""
    dcfg = distill_config_for(cfg, scheme_name, seed)
    if dcfg.pick is not None and dcfg.pick.scorer == "student_entropy" and student is None:
        student = build_model(cfg.student_layers, np.random.default_rng(seed))

    def stream(epoch: int):
        return iter_composed(train, dcfg, epoch, teacher, student)

    m, m_bar = t_stddev(teacher, stream, cfg.metrics.window_size, cfg.metrics.epochs)
    prob_batches = [teacher.predict_proba(c.images, 1.0) for c in stream(0) if c.size >= 2]
    vbar = covariance_metric_vbar(prob_batches)
    rbar, zeros = correlation_metric_rbar(prob_batches, return_zero_variance=True)
    disagreement = label_disagreement_rate(teacher, stream(0)) if dcfg.scheme.mixes else None
    logger.info("%s seed %d: t_stddev=%.6g vbar=%.6g rbar=%.6g", scheme_name, seed, m_bar, vbar, rbar)
    return SchemeMetrics(scheme_name, seed, m_bar, vbar, rbar, zeros, disagreement, [float(v) for v in m])


def run_tstddev(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Teacher-side metrics for every configured scheme and seed; writes ``tstddev.json``."""
    out = _out_dir(cfg)
    teacher = load_teacher(cfg)
    train, _ = load_datasets(cfg)
    cells = []
    for name in cfg.schemes:
        for seed in cfg.seeds:
            r = measure_scheme(teacher, train, cfg, name, seed)
            cells.append(
                {
                    "scheme": r.scheme,
                    "seed": r.seed,
                    "t_stddev": r.t_stddev,
                    "m": r.m,
                    "vbar": r.vbar,
                    "rbar": r.rbar,
                    "zero_variance_rows": r.zero_variance_rows,
                    "label_disagreement": r.disagreement,
                }
            )
    result = {"window_size": cfg.metrics.window_size, "epochs": cfg.metrics.epochs, "cells": cells}
    write_json(result, os.path.join(out, "tstddev.json"))
    return result


# -- rank-da -------------------------------------------------------------------


def correlation_summary(xs: Sequence[float], ys: Sequence[float]) -> Dict[str, Any]:
    try:
        report = pearson(xs, ys)
    except UndefinedCorrelationError as exc:
        return {"r": None, "p_value": None, "n": len(xs), "undefined": str(exc)}
    return report.to_dict()


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def aggregate_ranking(rows: Sequence[Dict[str, Any]], schemes: Sequence[str]) -> Dict[str, Any]:
    """Per-scheme means and standard deviations over seeds plus Pearson of the means."""
    per_scheme = {}
    for name in schemes:
        cell = [r for r in rows if r["scheme"] == name]
        summary = {}
        for key in ("t_stddev", "vbar", "rbar", "student_test_loss", "student_test_acc"):
            mean, std = _mean_std([r[key] for r in cell])
            summary[key] = {"mean": mean, "std": std}
        rates = [r["label_disagreement"] for r in cell if r.get("label_disagreement") is not None]
        if rates:
            summary["label_disagreement"] = float(np.mean(rates))
        per_scheme[name] = summary

    def means(key: str) -> List[float]:
        return [per_scheme[s][key]["mean"] for s in schemes]

    return {
        "schemes": per_scheme,
        "pearson_t_stddev_vs_test_loss": correlation_summary(means("t_stddev"), means("student_test_loss")),
        "pearson_vbar_vs_test_loss": correlation_summary(means("vbar"), means("student_test_loss")),
        "pearson_rbar_vs_test_loss": correlation_summary(means("rbar"), means("student_test_loss")),
    }


def run_rank_da(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Distill one student per (scheme, seed), measure the teacher-side metrics, rank and correlate.

    Writes ``ranking.csv`` (one row per cell) and ``ranking.json``.
    """
    out = _out_dir(cfg)
    teacher = load_teacher(cfg)
    train, test = load_datasets(cfg)
    rows: List[Dict[str, Any]] = []
    for name in cfg.schemes:
        for seed in cfg.seeds:
            dcfg = distill_config_for(cfg, name, seed)
            student, _ = distill_one(teacher, cfg, dcfg, train, test)
            metrics = measure_scheme(teacher, train, cfg, name, seed, student)
            test_loss, test_acc = eval_test_loss(student, test)
            rows.append(
                {
                    "scheme": name,
                    "t_stddev": metrics.t_stddev,
                    "vbar": metrics.vbar,
                    "rbar": metrics.rbar,
                    "student_test_loss": test_loss,
                    "student_test_acc": test_acc,
                    "seed": seed,
                    "label_disagreement": metrics.disagreement,
                }
            )
            logger.info("%s seed %d: student test_loss=%.4f acc=%.3f", name, seed, test_loss, test_acc)
    write_csv(rows, RANKING_FIELDS, os.path.join(out, "ranking.csv"))
    summary = aggregate_ranking(rows, cfg.schemes)
    summary["config"] = config_to_dict(cfg)
    write_json(summary, os.path.join(out, "ranking.json"))
    return summary


# -- prop-check ----------------------------------------------------------------


@dataclass(slots=True)
class PropCheck:
    rows: List[Dict[str, Any]]
    failures: List[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def _gap_rows(world, N: int, rhos: Sequence[float], M: int, seed: int, grid: int) -> List[Dict[str, Any]]:
    rows = []
    for i, rho in enumerate(rhos):
        est = estimate_gap_moments(world, N, rho, M, np.random.default_rng([seed, grid, i]))
        exact = exact_or_closed_form(world, N, rho)
        rows.append(
            {
                "rho": float(rho),
                "N": N,
                "mean_delta": est.mean_delta,
                "se_delta": est.se_delta,
                "mean_delta_sq": est.mean_delta_sq,
                "se_delta_sq": est.se_delta_sq,
                "exact_mean": exact.mean_delta,
                "exact_sq": exact.mean_delta_sq,
            }
        )
    return rows


def check_monte_carlo(rows: Sequence[Dict[str, Any]]) -> List[str]:
    """Adjacent rho: second moments rise with disjoint +-2 SE intervals, means agree within 3 SE."""
    failures = []
    for a, b in zip(rows, rows[1:]):
        if not a["mean_delta_sq"] + 2 * a["se_delta_sq"] < b["mean_delta_sq"] - 2 * b["se_delta_sq"]:
            failures.append(f"E[delta^2] does not rise clearly from rho={a['rho']:g} to rho={b['rho']:g}")
        spread = 3.0 * float(np.hypot(a["se_delta"], b["se_delta"]))
        if abs(a["mean_delta"] - b["mean_delta"]) > spread:
            failures.append(f"E[delta] differs between rho={a['rho']:g} and rho={b['rho']:g}")
    return failures


def check_exact(world, N: int, rhos: Sequence[float]) -> List[str]:
    """Exact enumeration: flat mean, strictly rising second moment, variance identity."""
    failures = []
    moments = [exact_gap_moments(world, N, rho) for rho in rhos]
    for rho, m in zip(rhos, moments):
        if abs(m.variance - (m.var_term + m.cov_term)) > EXACT_TOL:
            failures.append(f"variance decomposition fails at rho={rho:g}")
    for (ra, a), (rb, b) in zip(zip(rhos, moments), zip(rhos[1:], moments[1:])):
        if abs(a.mean_delta - b.mean_delta) > EXACT_TOL:
            failures.append(f"exact E[delta] changes from rho={ra:g} to rho={rb:g}")
        if not b.mean_delta_sq > a.mean_delta_sq:
            failures.append(f"exact E[delta^2] does not rise from rho={ra:g} to rho={rb:g}")
    return failures


def run_prop_check(cfg: ExperimentConfig, seed: Optional[int] = None) -> PropCheck:
    """Gap moments over the Monte Carlo and the exact grid; writes ``prop_check.csv``."""
    out = _out_dir(cfg)
    lab = cfg.lab
    seed = cfg.seeds[0] if seed is None else seed
    mc_world = random_world(lab.mc_support, lab.classes, np.random.default_rng([lab.world_seed, 0]))
    exact_world = random_world(lab.exact_support, lab.classes, np.random.default_rng([lab.world_seed, 1]))
    mc_rows = _gap_rows(mc_world, lab.mc_N, lab.mc_rhos, lab.mc_M, seed, 0)
    exact_rows = _gap_rows(exact_world, lab.exact_N, lab.exact_rhos, lab.mc_M, seed, 1)
    failures = check_monte_carlo(mc_rows) + check_exact(exact_world, lab.exact_N, lab.exact_rhos)
    rows = mc_rows + exact_rows
    write_csv(rows, PROP_FIELDS, os.path.join(out, "prop_check.csv"))
    for msg in failures:
        logger.warning("prop-check: %s", msg)
    return PropCheck(rows, failures)


# -- correlate -----------------------------------------------------------------


def read_csv_columns(path: str, x: str, y: str) -> Tuple[List[float], List[float]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for col in (x, y):
            if col not in fields:
                raise ValueError(f"{path}: no column '{col}' (have {fields})")
        pairs = [(float(row[x]), float(row[y])) for row in reader]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def run_correlate(path: str, out_dir: str, x: str = "t_stddev", y: str = "student_test_loss") -> Dict[str, Any]:
    xs, ys = read_csv_columns(path, x, y)
    result = {"x": x, "y": y, "source": path, **correlation_summary(xs, ys)}
    os.makedirs(out_dir, exist_ok=True)
    write_json(result, os.path.join(out_dir, "correlation.json"))
    return result


__all__ = [
    "RANKING_FIELDS",
    "PROP_FIELDS",
    "SchemeMetrics",
    "PropCheck",
    "load_datasets",
    "load_teacher",
    "run_train_teacher",
    "run_distill",
    "measure_scheme",
    "run_tstddev",
    "aggregate_ranking",
    "run_rank_da",
    "check_monte_carlo",
    "check_exact",
    "run_prop_check",
    "run_correlate",
]
