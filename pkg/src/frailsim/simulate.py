"""Clustered survival data generation and the factorial scenario grid.

Datasets are reproducible regardless of execution order: every cluster gets
its own counter-based random stream keyed by (seed, scenario id, cluster
index), so generating clusters in any order, or in parallel, yields the same
rows.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError, DomainError
from .hazards import (
    BaselineHazard,
    Exponential,
    FrailtyFamily,
    FrailtySpec,
    Gompertz,
    Weibull,
    WeibullMixture,
)

__all__ = [
    "Scenario",
    "ClusteredDataset",
    "simulate_time",
    "generate_dataset",
    "scenario_grid",
    "study_baselines",
    "make_scenario",
    "write_dataset_csv",
    "read_dataset_csv",
    "write_manifest",
]

DEFAULT_BETA = -0.5
DEFAULT_TREAT_PROB = 0.5
DEFAULT_CENSOR_TIME = 5.0

GRID_SIZES = ((750, 2), (20, 150))
GRID_VARIANCES = (0.25, 0.75, 1.25)


def study_baselines() -> dict[str, BaselineHazard]:
    """The five study baselines, keyed by their scenario-id tag."""
    return {
        "exp": Exponential(rate=0.5),
        "wei": Weibull(rate=0.5, shape=0.8),
        "gom": Gompertz(rate=0.5, gamma=0.2),
        "ww1": WeibullMixture(rate1=0.3, shape1=1.5, rate2=0.5, shape2=2.5, mix=0.7),
        "ww2": WeibullMixture(rate1=0.5, shape1=1.3, rate2=0.5, shape2=0.7, mix=0.5),
    }


@dataclass(frozen=True)
class Scenario:
    """One data-generating mechanism."""

    baseline: BaselineHazard
    frailty: FrailtySpec
    n_clusters: int
    cluster_size: int
    beta: float = DEFAULT_BETA
    treat_prob: float = DEFAULT_TREAT_PROB
    censor_time: float = DEFAULT_CENSOR_TIME
    id: str = ""
    baseline_label: str = ""

    def __post_init__(self):
        if self.n_clusters < 1 or self.cluster_size < 1:
            raise ValueError("n_clusters and cluster_size must be positive")
        if not 0.0 <= self.treat_prob <= 1.0:
            raise ValueError(f"treat_prob must lie in [0, 1], got {self.treat_prob}")
        if not self.censor_time > 0:
            raise ValueError(f"censor_time must be positive, got {self.censor_time}")
        if not self.id:
            raise ValueError("scenario id must be a nonempty string")
        if not self.baseline_label:
            object.__setattr__(self, "baseline_label", self.baseline.kind)

    @property
    def n_subjects(self) -> int:
        return self.n_clusters * self.cluster_size


@dataclass(frozen=True)
class ClusteredDataset:
    cluster: np.ndarray
    time: np.ndarray
    event: np.ndarray
    treat: np.ndarray
    scenario_id: str = ""
    seed: int | None = None
    cluster_labels: tuple[str, ...] = field(default=(), repr=False)

    def __post_init__(self):
        n = self.time.shape[0]
        for name in ("cluster", "event", "treat"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"field {name} must have shape ({n},)")

    @property
    def n_subjects(self) -> int:
        return self.time.shape[0]

    @property
    def n_clusters(self) -> int:
        return int(self.cluster.max()) + 1 if self.n_subjects else 0

    @property
    def n_events(self) -> int:
        return int(self.event.sum())


def _theta_tag(variance: float) -> str:
    return f"{variance:g}".replace(".", "")


def make_scenario(
    baseline_tag: str,
    frailty_family: str | FrailtyFamily,
    variance: float,
    n_clusters: int,
    cluster_size: int,
    *,
    beta: float = DEFAULT_BETA,
    treat_prob: float = DEFAULT_TREAT_PROB,
    censor_time: float = DEFAULT_CENSOR_TIME,
    scenario_id: str | None = None,
) -> Scenario:
    """Build a scenario from the study baselines by tag ('exp', 'wei', ...)."""
    baselines = study_baselines()
    if baseline_tag not in baselines:
        raise ValueError(
            f"unknown baseline tag {baseline_tag!r}; expected one of {sorted(baselines)}"
        )
    frailty = FrailtySpec(FrailtyFamily(frailty_family), variance)
    sid = scenario_id or (
        f"{baseline_tag}_{frailty.family.value}_t{_theta_tag(variance)}"
        f"_{n_clusters}x{cluster_size}"
    )
    return Scenario(
        baseline=baselines[baseline_tag],
        frailty=frailty,
        n_clusters=n_clusters,
        cluster_size=cluster_size,
        beta=beta,
        treat_prob=treat_prob,
        censor_time=censor_time,
        id=sid,
        baseline_label=baseline_tag,
    )


def scenario_grid() -> list[Scenario]:
    """All 90 study scenarios.

    Ordering is the nested loop baseline (exp, wei, gom, ww1, ww2) ->
    frailty (gamma, lognormal, mixturenormal) -> variance (0.25, 0.75, 1.25)
    -> size ((750, 2), (20, 150)); ids follow the same fields, for example
    ``exp_gamma_t025_750x2``.
    """
    grid = []
    for baseline_tag in ("exp", "wei", "gom", "ww1", "ww2"):
        for family in (FrailtyFamily.GAMMA, FrailtyFamily.LOG_NORMAL,
                       FrailtyFamily.MIXTURE_NORMAL):
            for variance in GRID_VARIANCES:
                for n_clusters, cluster_size in GRID_SIZES:
                    grid.append(make_scenario(
                        baseline_tag, family, variance, n_clusters, cluster_size,
                    ))
    return grid


def simulate_time(b: BaselineHazard, alpha, x, beta: float, u):
    """Latent event time by inversion: conditional survival equals u.

    Solves exp(-alpha * e^(x*beta) * H0(t)) = u for t.
    """
    alpha_arr = np.asarray(alpha, dtype=float)
    u_arr = np.asarray(u, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    if ((u_arr <= 0.0) | (u_arr >= 1.0)).any():
        raise DomainError("u must lie strictly inside (0, 1)")
    if (alpha_arr <= 0.0).any():
        raise DomainError("frailty values must be positive")
    target = -np.log(u_arr) / (alpha_arr * np.exp(x_arr * beta))
    return b.inverse_cumulative_hazard(target)


def _scenario_key(scenario_id: str) -> int:
    digest = hashlib.sha256(scenario_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def cluster_rng(seed: int, scenario_id: str, cluster_index: int) -> np.random.Generator:
    """The dedicated random stream of one cluster of one dataset."""
    ss = np.random.SeedSequence((seed, _scenario_key(scenario_id), cluster_index))
    return np.random.Generator(np.random.Philox(ss))


def generate_dataset(
    scenario: Scenario,
    seed: int,
    *,
    return_frailties: bool = False,
):
    """Draw one clustered dataset under the scenario.

    Per cluster: one shared frailty, then per subject a Bernoulli treatment
    indicator and a uniform draw feeding the inversion. Administrative
    censoring at scenario.censor_time; a latent time exactly equal to the
    censoring time counts as censored.
    """
    m = scenario.cluster_size
    n = scenario.n_subjects
    treat = np.empty(n, dtype=np.int8)
    targets = np.empty(n)
    cluster = np.repeat(np.arange(scenario.n_clusters, dtype=np.int64), m)
    frailties = np.empty(scenario.n_clusters)
    for c in range(scenario.n_clusters):
        rng = cluster_rng(seed, scenario.id, c)
        alpha = scenario.frailty.sample(rng, 1)[0]
        frailties[c] = alpha
        x = (rng.random(m) < scenario.treat_prob).astype(np.int8)
        u = rng.random(m)
        while (u == 0.0).any():
            zero = u == 0.0
            u[zero] = rng.random(int(zero.sum()))
        if (u >= 1.0).any() or alpha <= 0.0:
            raise DomainError("invalid uniform or frailty draw")
        sl = slice(c * m, (c + 1) * m)
        treat[sl] = x
        targets[sl] = -np.log(u) / (alpha * np.exp(x * scenario.beta))
    # one batched inversion for the whole dataset (root finding dominates
    # generation cost for the mixture baselines)
    latent = scenario.baseline.inverse_cumulative_hazard(targets)
    time = np.minimum(latent, scenario.censor_time)
    event = (latent < scenario.censor_time).astype(np.int8)
    dataset = ClusteredDataset(
        cluster=cluster,
        time=time,
        event=event,
        treat=treat,
        scenario_id=scenario.id,
        seed=int(seed),
    )
    if return_frailties:
        return dataset, frailties
    return dataset


DATASET_HEADER = ("cluster", "time", "event", "treat")


def write_dataset_csv(dataset: ClusteredDataset, path: str | Path) -> None:
    path = Path(path)
    labels = dataset.cluster_labels
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        for c, t, e, x in zip(dataset.cluster, dataset.time, dataset.event, dataset.treat):
            label = labels[c] if labels else int(c)
            writer.writerow([label, f"{t:.12g}", int(e), int(x)])


def read_dataset_csv(path: str | Path) -> ClusteredDataset:
    """Parse a dataset CSV, mapping cluster labels to codes in order of appearance."""
    path = Path(path)
    codes: dict[str, int] = {}
    cluster, time, event, treat = [], [], [], []
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if [h.strip() for h in header] != list(DATASET_HEADER):
            raise DataError(
                f"{path}: line 1: expected header {','.join(DATASET_HEADER)!r}, "
                f"got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            label = row[0].strip()
            try:
                t = float(row[1])
                e = int(row[2])
                x = int(row[3])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not (np.isfinite(t) and t > 0):
                raise DataError(f"{path}: line {lineno}: time must be positive, got {row[1]}")
            if e not in (0, 1):
                raise DataError(f"{path}: line {lineno}: event must be 0 or 1, got {row[2]}")
            if x not in (0, 1):
                raise DataError(f"{path}: line {lineno}: treat must be 0 or 1, got {row[3]}")
            cluster.append(codes.setdefault(label, len(codes)))
            time.append(t)
            event.append(e)
            treat.append(x)
    if not time:
        raise DataError(f"{path}: no data rows")
    return ClusteredDataset(
        cluster=np.asarray(cluster, dtype=np.int64),
        time=np.asarray(time),
        event=np.asarray(event, dtype=np.int8),
        treat=np.asarray(treat, dtype=np.int8),
        cluster_labels=tuple(codes),
    )


def write_manifest(path: str | Path, scenario: Scenario, seed: int) -> None:
    payload = {
        "scenario_id": scenario.id,
        "seed": int(seed),
        "baseline": {"kind": scenario.baseline.kind, **scenario.baseline.params_dict()},
        "frailty": {"family": scenario.frailty.family.value,
                    "variance": scenario.frailty.variance},
        "n_clusters": scenario.n_clusters,
        "cluster_size": scenario.cluster_size,
        "beta": scenario.beta,
        "treat_prob": scenario.treat_prob,
        "censor_time": scenario.censor_time,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
