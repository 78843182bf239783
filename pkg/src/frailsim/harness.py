"""Monte Carlo replication engine and performance summaries.

run_cell fits one model to n_sim simulated datasets from one scenario and
emits per-replication records for the log hazard ratio, the loss in life
expectancy, and the frailty variance. filter_convergence applies the
median/IQR outlier rule, and summarize turns filtered records into bias,
coverage and MSE with Monte Carlo standard errors.
"""
from __future__ import annotations

import hashlib
import time
import warnings
from dataclasses import dataclass, replace
from multiprocessing import Pool
from typing import Iterable, Mapping, Sequence

import numpy as np

from .estimands import (
    Z95,
    EstimandName,
    delta_method_se,
    lle_functional,
    true_estimands,
)
from .exceptions import DataError
from .fitting import ModelSpec, fit
from .simulate import Scenario, generate_dataset

__all__ = [
    "RESULTS_HEADER",
    "SUMMARY_HEADER",
    "ReplicationRecord",
    "PerformanceSummary",
    "derive_seed",
    "run_cell",
    "filter_convergence",
    "performance",
    "summarize",
    "plot_rows",
    "write_results_csv",
    "read_results_csv",
    "write_summary_csv",
    "write_plot_csv",
]

RESULTS_HEADER = "scenario_id,model_id,rep,estimand,estimate,se,converged,filtered"
SUMMARY_HEADER = (
    "scenario_id,model_id,estimand,n_used,bias,bias_mcse,coverage,coverage_mcse,"
    "mse,mse_mcse,empirical_se,mean_model_se,convergence_rate"
)
PLOT_HEADER = (
    "scenario_id,baseline,frailty,frailty_var,n_clusters,cluster_size,"
    "model_id,estimand,measure,value,mcse,status"
)

ESTIMAND_ORDER = (EstimandName.LOG_HR, EstimandName.LLE, EstimandName.FRAILTY_VAR)
FILTER_CUTOFF = 10.0
FILTER_ALARM = 0.05


@dataclass(frozen=True)
class ReplicationRecord:
    """One estimand from one model fit to one simulated dataset."""

    scenario_id: str
    model_id: str
    rep: int
    estimand: EstimandName
    estimate: float
    se: float
    converged: bool
    filtered: bool = False
    wall_time: float = 0.0


@dataclass(frozen=True)
class PerformanceSummary:
    scenario_id: str
    model_id: str
    estimand: EstimandName
    n_used: int
    bias: float
    bias_mcse: float
    coverage: float
    coverage_mcse: float
    mse: float
    mse_mcse: float
    empirical_se: float
    mean_model_se: float
    convergence_rate: float


def derive_seed(master_seed: int, scenario_id: str, rep: int) -> int:
    """Stable per-replication seed, independent of execution order."""
    text = f"{master_seed}|{scenario_id}|{rep}"
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _nan_records(scenario_id: str, model_id: str, rep: int,
                 wall_time: float) -> list[ReplicationRecord]:
    return [
        ReplicationRecord(scenario_id, model_id, rep, name,
                          float("nan"), float("nan"), False,
                          wall_time=wall_time)
        for name in ESTIMAND_ORDER
    ]


def _replicate(args) -> list[ReplicationRecord]:
    """Run one replication: simulate, fit, extract the three estimands."""
    scenario, spec, rep, master_seed, horizon = args
    model_id = spec.id
    seed = derive_seed(master_seed, scenario.id, rep)
    started = time.perf_counter()
    try:
        data = generate_dataset(scenario, seed)
        result = fit(spec, data)
    except Exception:
        return _nan_records(scenario.id, model_id, rep,
                            time.perf_counter() - started)
    if not result.converged:
        return _nan_records(scenario.id, model_id, rep,
                            time.perf_counter() - started)
    values: dict[EstimandName, tuple[float, float, bool]] = {}
    values[EstimandName.LOG_HR] = (result.beta_hat, result.beta_se, True)
    values[EstimandName.FRAILTY_VAR] = (result.frailty_var_hat,
                                        result.frailty_var_se, True)
    try:
        functional = lle_functional(result, horizon)
        est = functional(result.trans)
        se = delta_method_se(result, functional)
        values[EstimandName.LLE] = (est, se, True)
    except Exception:
        values[EstimandName.LLE] = (float("nan"), float("nan"), False)
    elapsed = time.perf_counter() - started
    return [
        ReplicationRecord(scenario.id, model_id, rep, name,
                          float(values[name][0]), float(values[name][1]),
                          values[name][2], wall_time=elapsed)
        for name in ESTIMAND_ORDER
    ]


def run_cell(
    scenario: Scenario,
    spec: ModelSpec,
    n_sim: int,
    master_seed: int,
    workers: int = 1,
    horizon: float | None = None,
) -> list[ReplicationRecord]:
    """Fit one model to n_sim datasets from one scenario.

    Deterministic given master_seed for any worker count: each replication
    derives its own seed and the records are assembled in rep order. Fit
    failures become converged=false records, never exceptions.
    """
    if not n_sim >= 1:
        raise ValueError(f"n_sim must be at least 1, got {n_sim}")
    h = scenario.censor_time if horizon is None else horizon
    tasks = [(scenario, spec, rep, master_seed, h) for rep in range(n_sim)]
    if workers > 1:
        with Pool(processes=workers) as pool:
            batches = pool.map(_replicate, tasks)
    else:
        batches = [_replicate(task) for task in tasks]
    return [record for batch in batches for record in batch]


def _robust_z(values: np.ndarray) -> np.ndarray:
    med = float(np.quantile(values, 0.5, method="linear"))
    q1 = float(np.quantile(values, 0.25, method="linear"))
    q3 = float(np.quantile(values, 0.75, method="linear"))
    iqr = q3 - q1
    if iqr == 0.0:
        return np.zeros_like(values)
    return (values - med) / iqr


def filter_convergence(
    records: Sequence[ReplicationRecord],
    cutoff: float = FILTER_CUTOFF,
) -> list[ReplicationRecord]:
    """Flag outlier replications within each (scenario, model, estimand).

    Among converged records, the estimate and the standard error are each
    standardized as (value - median) / IQR; a record is filtered when
    either statistic strictly exceeds the cutoff in absolute value. Zero
    IQR means no spread to standardize against, so nothing is filtered.
    """
    groups: dict[tuple[str, str, EstimandName], list[int]] = {}
    for idx, rec in enumerate(records):
        if rec.converged:
            key = (rec.scenario_id, rec.model_id, rec.estimand)
            groups.setdefault(key, []).append(idx)
    out = [replace(rec, filtered=False) for rec in records]
    for indices in groups.values():
        if len(indices) < 2:
            continue
        est = np.array([records[i].estimate for i in indices])
        se = np.array([records[i].se for i in indices])
        flag = (np.abs(_robust_z(est)) > cutoff) | (np.abs(_robust_z(se)) > cutoff)
        for i, flagged in zip(indices, flag):
            if flagged:
                out[i] = replace(out[i], filtered=True)
    return out


def performance(
    records: Sequence[ReplicationRecord],
    truth: float,
) -> PerformanceSummary:
    """Bias, coverage and MSE (each with MCSE) for one cell and estimand.

    Expects the records of a single (scenario, model, estimand) group with
    filter flags already assigned; only converged, unfiltered records enter
    the summary statistics.
    """
    if not records:
        raise DataError("no records to summarize")
    scenario_id = records[0].scenario_id
    model_id = records[0].model_id
    estimand = records[0].estimand
    for rec in records:
        if (rec.scenario_id, rec.model_id, rec.estimand) != (scenario_id, model_id, estimand):
            raise DataError("performance expects records from a single cell and estimand")
    used = [r for r in records if r.converged and not r.filtered]
    n = len(used)
    if n < 2:
        raise DataError(
            f"need at least 2 usable records for {scenario_id}/{model_id}/"
            f"{estimand.value}, got {n}"
        )
    est = np.array([r.estimate for r in used])
    se = np.array([r.se for r in used])
    bias = float(est.mean() - truth)
    bias_mcse = float(est.std(ddof=1) / np.sqrt(n))
    inside = (est - Z95 * se <= truth) & (truth <= est + Z95 * se)
    coverage = float(inside.mean())
    coverage_mcse = float(np.sqrt(coverage * (1.0 - coverage) / n))
    sq_err = (est - truth) ** 2
    mse = float(sq_err.mean())
    mse_mcse = float(sq_err.std(ddof=1) / np.sqrt(n))
    return PerformanceSummary(
        scenario_id=scenario_id,
        model_id=model_id,
        estimand=estimand,
        n_used=n,
        bias=bias,
        bias_mcse=bias_mcse,
        coverage=coverage,
        coverage_mcse=coverage_mcse,
        mse=mse,
        mse_mcse=mse_mcse,
        empirical_se=float(est.std(ddof=1)),
        mean_model_se=float(se.mean()),
        convergence_rate=float(np.mean([r.converged for r in records])),
    )


def _truth_for(scenario: Scenario, estimand: EstimandName) -> float:
    beta, true_lle = true_estimands(scenario)
    if estimand is EstimandName.LOG_HR:
        return beta
    if estimand is EstimandName.LLE:
        return true_lle
    return scenario.frailty.variance


def _frailty_matches(model_id: str, scenario: Scenario) -> bool:
    family = model_id.rsplit("_", 1)[-1]
    return family == scenario.frailty.family.value


def summarize(
    records: Sequence[ReplicationRecord],
    scenarios: Mapping[str, Scenario],
    filter_alarm: float = FILTER_ALARM,
) -> list[PerformanceSummary]:
    """Per-cell performance summaries against each scenario's ground truth.

    Frailty-variance rows are produced only where the fitted frailty family
    matches the generating one; bias of a variance against a differently
    shaped law is not a meaningful number. Cells with fewer than two usable
    records are skipped (the plot data marks them instead). Filtering more
    than filter_alarm of a cell's converged records raises a warning since
    heavy filtering signals a pathological model/scenario pairing.
    """
    groups: dict[tuple[str, str, EstimandName], list[ReplicationRecord]] = {}
    for rec in records:
        groups.setdefault((rec.scenario_id, rec.model_id, rec.estimand), []).append(rec)
    order = {name: pos for pos, name in enumerate(ESTIMAND_ORDER)}
    summaries = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], order[k[2]])):
        scenario_id, model_id, estimand = key
        if scenario_id not in scenarios:
            raise DataError(f"unknown scenario id in records: {scenario_id!r}")
        scenario = scenarios[scenario_id]
        if estimand is EstimandName.FRAILTY_VAR and not _frailty_matches(model_id, scenario):
            continue
        cell = groups[key]
        converged = [r for r in cell if r.converged]
        n_filtered = sum(r.filtered for r in converged)
        if converged and n_filtered / len(converged) > filter_alarm:
            warnings.warn(
                f"{scenario_id}/{model_id}/{estimand.value}: filtered "
                f"{n_filtered}/{len(converged)} converged replications",
                stacklevel=2,
            )
        try:
            summaries.append(performance(cell, _truth_for(scenario, estimand)))
        except DataError:
            continue
    return summaries


def plot_rows(
    summaries: Sequence[PerformanceSummary],
    records: Sequence[ReplicationRecord],
    scenarios: Mapping[str, Scenario],
) -> list[dict]:
    """Tidy rows for plotting: one row per cell, estimand and measure.

    Every (scenario, model, estimand) cell present in the records appears,
    either with its summary values or with status "insufficient" when too
    few replications converged, so downstream plots can grey those cells
    out instead of silently dropping them.
    """
    have = {(s.scenario_id, s.model_id, s.estimand): s for s in summaries}
    cells: dict[tuple[str, str, EstimandName], None] = {}
    for rec in records:
        cells.setdefault((rec.scenario_id, rec.model_id, rec.estimand), None)
    order = {name: pos for pos, name in enumerate(ESTIMAND_ORDER)}
    rows = []
    for key in sorted(cells, key=lambda k: (k[0], k[1], order[k[2]])):
        scenario_id, model_id, estimand = key
        if scenario_id not in scenarios:
            raise DataError(f"unknown scenario id in records: {scenario_id!r}")
        scenario = scenarios[scenario_id]
        if estimand is EstimandName.FRAILTY_VAR and not _frailty_matches(model_id, scenario):
            continue
        base = {
            "scenario_id": scenario_id,
            "baseline": scenario.baseline_label,
            "frailty": scenario.frailty.family.value,
            "frailty_var": scenario.frailty.variance,
            "n_clusters": scenario.n_clusters,
            "cluster_size": scenario.cluster_size,
            "model_id": model_id,
            "estimand": estimand.value,
        }
        summary = have.get(key)
        for measure in ("bias", "coverage", "mse"):
            row = dict(base)
            row["measure"] = measure
            if summary is None:
                row.update(value=None, mcse=None, status="insufficient")
            else:
                row.update(
                    value=getattr(summary, measure),
                    mcse=getattr(summary, f"{measure}_mcse"),
                    status="ok",
                )
            rows.append(row)
    return rows


def _fmt(x: float) -> str:
    if x != x:
        return ""
    return format(float(x), ".17g")


def write_results_csv(records: Iterable[ReplicationRecord], path: str) -> None:
    """Long-format results; floats carry full precision so re-summarizing
    a written file reproduces the original summary bit for bit."""
    lines = [RESULTS_HEADER]
    for r in records:
        lines.append(
            f"{r.scenario_id},{r.model_id},{r.rep},{r.estimand.value},"
            f"{_fmt(r.estimate)},{_fmt(r.se)},{int(r.converged)},{int(r.filtered)}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_results_csv(path: str) -> list[ReplicationRecord]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read results {path}: {exc}") from None
    if not lines or lines[0] != RESULTS_HEADER:
        raise DataError(f"{path}: expected header {RESULTS_HEADER!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise DataError(f"{path}: line {lineno}: expected 8 fields, got {len(parts)}")
        try:
            records.append(ReplicationRecord(
                scenario_id=parts[0],
                model_id=parts[1],
                rep=int(parts[2]),
                estimand=EstimandName(parts[3]),
                estimate=float(parts[4]) if parts[4] else float("nan"),
                se=float(parts[5]) if parts[5] else float("nan"),
                converged=bool(int(parts[6])),
                filtered=bool(int(parts[7])),
            ))
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
    return records


def write_summary_csv(summaries: Iterable[PerformanceSummary], path: str) -> None:
    lines = [SUMMARY_HEADER]
    for s in summaries:
        lines.append(
            f"{s.scenario_id},{s.model_id},{s.estimand.value},{s.n_used},"
            f"{_fmt(s.bias)},{_fmt(s.bias_mcse)},{_fmt(s.coverage)},"
            f"{_fmt(s.coverage_mcse)},{_fmt(s.mse)},{_fmt(s.mse_mcse)},"
            f"{_fmt(s.empirical_se)},{_fmt(s.mean_model_se)},"
            f"{_fmt(s.convergence_rate)}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_plot_csv(rows: Iterable[dict], path: str) -> None:
    lines = [PLOT_HEADER]
    for row in rows:
        value = "" if row["value"] is None else format(float(row["value"]), ".17g")
        mcse = "" if row["mcse"] is None else format(float(row["mcse"]), ".17g")
        lines.append(
            f"{row['scenario_id']},{row['baseline']},{row['frailty']},"
            f"{row['frailty_var']:g},{row['n_clusters']},{row['cluster_size']},"
            f"{row['model_id']},{row['estimand']},{row['measure']},"
            f"{value},{mcse},{row['status']}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
