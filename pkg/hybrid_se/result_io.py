"""
Result I/O Module.

JSON and CSV writers for estimation results, Monte-Carlo comparisons and
stress sweeps. The comparison CSV has one row per instance: matrix sizes and
non-zeros, iterations and times (CNE vs CEC, SUF), then the accuracy
indices with their PIF ratios.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

from .benchmark import ComparisonReport, StressRow, finite_or_none
from .estimators.base import EstimationResult

COMPARISON_COLUMNS = [
    "instance",
    "size_cne", "size_cec",
    "nz_cne", "nz_cec",
    "iter_cne", "iter_cec",
    "time_cne_ms", "time_cec_ms", "suf",
    "xi_cec", "xi_cne", "pif_cne_xi", "xi_rec", "pif_rec_xi",
    "sx_cec", "sx_cne", "pif_cne_sx", "sx_rec", "pif_rec_sx",
    "failures",
]


def write_json(data: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path


def write_estimation_result(result: EstimationResult, path: Union[str, Path]) -> Path:
    """Write one estimation result as JSON."""
    return write_json(result.to_dict(), path)


def _summary_value(report: ComparisonReport, estimator: str, attr: str) -> Optional[float]:
    summary = report.summaries.get(estimator)
    return None if summary is None else getattr(summary, attr)


def comparison_row(report: ComparisonReport) -> dict[str, Any]:
    """One CSV row per instance."""
    value = lambda est, attr: _summary_value(report, est, attr)
    return {
        "instance": report.name,
        "size_cne": value("CNE", "matrix_size"),
        "size_cec": value("CEC", "matrix_size"),
        "nz_cne": value("CNE", "matrix_nnz"),
        "nz_cec": value("CEC", "matrix_nnz"),
        "iter_cne": value("CNE", "iterations"),
        "iter_cec": value("CEC", "iterations"),
        "time_cne_ms": value("CNE", "time_ms"),
        "time_cec_ms": value("CEC", "time_ms"),
        "suf": finite_or_none(report.suf),
        "xi_cec": value("CEC", "xi_z"),
        "xi_cne": value("CNE", "xi_z"),
        "pif_cne_xi": finite_or_none(report.pif_cne_xi),
        "xi_rec": value("REC", "xi_z"),
        "pif_rec_xi": finite_or_none(report.pif_rec_xi),
        "sx_cec": value("CEC", "sigma_x2"),
        "sx_cne": value("CNE", "sigma_x2"),
        "pif_cne_sx": finite_or_none(report.pif_cne_sigma),
        "sx_rec": value("REC", "sigma_x2"),
        "pif_rec_sx": finite_or_none(report.pif_rec_sigma),
        "failures": sum(len(v) for v in report.failures.values()),
    }


def _write_csv(rows: Iterable[dict[str, Any]], columns: Sequence[str], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return path


def write_comparison_csv(reports: Sequence[ComparisonReport], path: Union[str, Path]) -> Path:
    """Write Monte-Carlo comparisons, one row per instance."""
    return _write_csv((comparison_row(r) for r in reports), COMPARISON_COLUMNS, path)


def stress_columns(rows: Sequence[StressRow]) -> list[str]:
    estimators = sorted({name for row in rows for name in row.iterations})
    return ["multiplier", "feasible", "min_voltage_node", "min_voltage"] + [
        f"iter_{name.lower()}" for name in estimators
    ]


def write_stress_csv(rows: Sequence[StressRow], path: Union[str, Path]) -> Path:
    """Write the stress table: multiplier, feasibility, min voltage, iterations."""
    columns = stress_columns(rows)

    def flat(row: StressRow) -> dict[str, Any]:
        data: dict[str, Any] = {
            "multiplier": row.multiplier,
            "feasible": row.feasible,
            "min_voltage_node": row.min_voltage_node,
            "min_voltage": row.min_voltage,
        }
        for name, count in row.iterations.items():
            data[f"iter_{name.lower()}"] = count
        return data

    return _write_csv((flat(r) for r in rows), columns, path)


def write_convergence_csv(row: StressRow, path: Union[str, Path]) -> Path:
    """Write per-iteration step norms of every estimator for one stress row."""
    estimators = sorted(row.step_norms)
    depth = max((len(v) for v in row.step_norms.values()), default=0)
    columns = ["iteration"] + [f"step_{name.lower()}" for name in estimators]
    records = []
    for i in range(depth):
        record: dict[str, Any] = {"iteration": i + 1}
        for name in estimators:
            norms = row.step_norms[name]
            record[f"step_{name.lower()}"] = f"{norms[i]:.3e}" if i < len(norms) else None
        records.append(record)
    return _write_csv(records, columns, path)


def read_csv(path: Union[str, Path]) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))
