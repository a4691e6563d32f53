"""Tests for the experiment pipelines: aggregation, the gap checks and CSV/JSON artifacts."""

from __future__ import annotations

import json

import numpy as np
import pytest

from kd_da_toolkit.config import build_experiment_config
from kd_da_toolkit.experiment import (
    PROP_FIELDS,
    aggregate_ranking,
    check_exact,
    check_monte_carlo,
    fmt,
    load_teacher,
    run_correlate,
    run_prop_check,
    write_csv,
)
from kd_da_toolkit.proposition import random_world


def _row(scheme: str, seed: int, sd: float, loss: float) -> dict:
    return {
        "scheme": scheme,
        "seed": seed,
        "t_stddev": sd,
        "vbar": 0.1 * sd,
        "rbar": 0.5,
        "student_test_loss": loss,
        "student_test_acc": 0.5,
        "label_disagreement": 0.3 if scheme == "cutmix" else None,
    }


def test_fmt_keeps_full_precision() -> None:
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(3) == "3"
    assert fmt("cutmix") == "cutmix"


def test_write_csv_is_plain_and_stable(tmp_path) -> None:
    path = tmp_path / "rows.csv"
    write_csv([{"a": 1, "b": 0.5}, {"a": 2, "b": 0.25}], ["a", "b"], str(path))
    assert path.read_bytes() == b"a,b\n1,0.5\n2,0.25\n"


def test_aggregate_ranking_means_and_correlation() -> None:
    rows = [
        _row("identity", 0, 5.0, 1.10),
        _row("identity", 1, 5.2, 1.12),
        _row("flip", 0, 4.8, 1.05),
        _row("flip", 1, 4.6, 1.03),
        _row("cutmix", 0, 4.0, 0.99),
        _row("cutmix", 1, 4.2, 0.97),
    ]
    summary = aggregate_ranking(rows, ["identity", "flip", "cutmix"])
    identity = summary["schemes"]["identity"]["t_stddev"]
    assert identity["mean"] == pytest.approx(5.1)
    assert identity["std"] == pytest.approx(float(np.std([5.0, 5.2], ddof=1)))
    assert summary["schemes"]["cutmix"]["label_disagreement"] == pytest.approx(0.3)
    assert "label_disagreement" not in summary["schemes"]["flip"]
    assert summary["pearson_t_stddev_vs_test_loss"]["r"] > 0.9
    assert summary["pearson_rbar_vs_test_loss"]["r"] is None


def test_check_monte_carlo_flags_failures() -> None:
    good = [
        {"rho": 0.0, "mean_delta": 0.0, "se_delta": 0.01, "mean_delta_sq": 1.0, "se_delta_sq": 0.01},
        {"rho": 0.5, "mean_delta": 0.01, "se_delta": 0.01, "mean_delta_sq": 2.0, "se_delta_sq": 0.01},
    ]
    assert check_monte_carlo(good) == []
    overlapping = [dict(good[0]), dict(good[1], mean_delta_sq=1.03)]
    assert len(check_monte_carlo(overlapping)) == 1
    shifted = [dict(good[0]), dict(good[1], mean_delta=0.1)]
    assert len(check_monte_carlo(shifted)) == 1


def test_check_exact_passes_on_enumerable_world() -> None:
    world = random_world(4, 3, np.random.default_rng([0, 1]))
    assert check_exact(world, 3, [0.0, 0.25, 0.5, 0.75]) == []
    assert len(check_exact(world, 3, [0.5, 0.25])) == 1


def test_prop_check_writes_rows(out_dir) -> None:
    cfg = build_experiment_config(output_dir=str(out_dir))
    check = run_prop_check(cfg)
    lines = (out_dir / "prop_check.csv").read_text().splitlines()
    assert lines[0] == ",".join(PROP_FIELDS)
    assert len(lines) == 1 + len(cfg.lab.mc_rhos) + len(cfg.lab.exact_rhos)
    assert len(check.rows) == 8
    exact_rows = check.rows[4:]
    assert all(r["N"] == 3 for r in exact_rows)
    assert max(r["exact_mean"] for r in exact_rows) - min(r["exact_mean"] for r in exact_rows) <= 1e-12


def test_prop_check_reports_indistinct_correlation(out_dir) -> None:
    cfg = build_experiment_config({"lab": {"mc_M": 100, "mc_rhos": [0.0, 0.01]}}, output_dir=str(out_dir))
    check = run_prop_check(cfg)
    assert not check.ok
    assert any("rise" in msg for msg in check.failures)


def test_load_teacher_requires_checkpoint(out_dir) -> None:
    cfg = build_experiment_config(output_dir=str(out_dir))
    with pytest.raises(ValueError, match="train-teacher"):
        load_teacher(cfg)


def test_run_correlate(tmp_path) -> None:
    csv_path = tmp_path / "ranking.csv"
    csv_path.write_text("scheme,t_stddev,student_test_loss\na,1,2\nb,2,4.5\nc,3,6\n")
    result = run_correlate(str(csv_path), str(tmp_path / "out"))
    assert result["r"] == pytest.approx(np.corrcoef([1, 2, 3], [2, 4.5, 6])[0, 1])
    written = json.loads((tmp_path / "out" / "correlation.json").read_text())
    assert written["x"] == "t_stddev"
    with pytest.raises(ValueError, match="no column"):
        run_correlate(str(csv_path), str(tmp_path / "out"), x="vbar")
