"""Experiment orchestration and the sensitivity auditor.

``run`` executes seeded Monte-Carlo trials of one estimator configuration
and reduces per-checkpoint absolute errors to median/quantile summaries.
``sweep`` runs a cartesian grid of such experiments.  ``audit_sensitivity``
replays an estimator noiselessly on a stream and on user-level neighbors of
it (one user's values replaced adversarially over the {0,1} grid) and
compares the realized change in the stored partial sums against the bound
that calibrates the Laplace noise.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from contmean.estimators import (
    EstimatorConfig,
    full_noise_scale,
    make_estimator,
    multi_noise_scale,
    naive_noise_scale,
    single_noise_scale,
    write_trace,
)
from contmean.streams import OrderingSpec, StreamEvent, generate

__all__ = [
    "AuditMechanismReport",
    "AuditReport",
    "ExperimentSpec",
    "RunSummary",
    "audit_sensitivity",
    "audit_value_grid",
    "run",
    "sweep",
]

SUMMARY_HEADER = ["t", "median_abs_error", "q10_abs_error", "q90_abs_error"]

_AUDITABLE = ("naive", "single", "multi", "full")
_GRID_LIMIT = 12  # 2^12 estimator replays is the most an audit will attempt


# --------------------------------------------------------------------------
# Experiments


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte-Carlo experiment: a config, a source, and checkpoints."""

    config: EstimatorConfig
    mu: float
    ordering: OrderingSpec
    trials: int
    checkpoints: tuple[int, ...]
    stream_len: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not self.checkpoints:
            raise ValueError("need at least one checkpoint")
        if any(c < 1 for c in self.checkpoints):
            raise ValueError("checkpoints are 1-based times")
        object.__setattr__(self, "checkpoints", tuple(sorted(self.checkpoints)))

    @property
    def length(self) -> int:
        if self.stream_len is not None:
            return self.stream_len
        if self.config.T is not None:
            return min(self.config.T, self.checkpoints[-1])
        return self.checkpoints[-1]


@dataclass
class RunSummary:
    checkpoints: tuple[int, ...]
    median_abs_error: tuple[float, ...]
    q10_abs_error: tuple[float, ...]
    q90_abs_error: tuple[float, ...]
    summary_path: Path | None = None
    trace_paths: tuple[Path, ...] = ()

    def rows(self) -> list[tuple[int, float, float, float]]:
        return list(
            zip(self.checkpoints, self.median_abs_error, self.q10_abs_error, self.q90_abs_error)
        )

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SUMMARY_HEADER)
            for t, med, q10, q90 in self.rows():
                writer.writerow([t, repr(med), repr(q10), repr(q90)])
        self.summary_path = path
        return path


def _child_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def run(spec: ExperimentSpec, out_dir=None, write_traces: bool = True) -> RunSummary:
    """Run the experiment; optionally write one trace CSV per trial plus a
    summary CSV.  Deterministic for a fixed config seed."""
    if spec.checkpoints[-1] > spec.length:
        raise ValueError(
            f"checkpoint {spec.checkpoints[-1]} beyond stream length {spec.length}"
        )
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    wanted = set(spec.checkpoints)
    errors = np.empty((spec.trials, len(spec.checkpoints)))
    trace_paths: list[Path] = []
    for trial in range(spec.trials):
        stream_seed = _child_seed(spec.config.seed, 3, trial)
        est_seed = _child_seed(spec.config.seed, 4, trial)
        events = generate(
            spec.mu, spec.config.n, spec.config.m, spec.length, spec.ordering, stream_seed
        )
        keep = write_traces and out_path is not None
        est = make_estimator(dataclasses.replace(spec.config, seed=est_seed, keep_trace=keep))
        at_checkpoint: dict[int, float] = {}
        for ev in events:
            record = est.step(ev)
            if record.t in wanted:
                at_checkpoint[record.t] = record.estimate
        errors[trial] = [abs(at_checkpoint[t] - spec.mu) for t in spec.checkpoints]
        if keep:
            trace_path = out_path / f"trace_{trial:04d}.csv"
            write_trace(est.records, trace_path)
            trace_paths.append(trace_path)

    summary = RunSummary(
        checkpoints=spec.checkpoints,
        median_abs_error=tuple(float(x) for x in np.median(errors, axis=0)),
        q10_abs_error=tuple(float(x) for x in np.quantile(errors, 0.1, axis=0)),
        q90_abs_error=tuple(float(x) for x in np.quantile(errors, 0.9, axis=0)),
        trace_paths=tuple(trace_paths),
    )
    if out_path is not None:
        summary.write_csv(out_path / "summary.csv")
    return summary


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(EstimatorConfig)}
_SPEC_FIELDS = {f.name for f in dataclasses.fields(ExperimentSpec)} - {"config"}


def sweep(
    base: ExperimentSpec,
    grid: Mapping[str, Sequence],
    out_dir=None,
    write_traces: bool = False,
) -> list[tuple[dict, RunSummary]]:
    """Run the cartesian product of ``grid`` values over ``base``.

    Grid keys name either estimator-config fields or experiment fields.
    Returns (params, summary) pairs in row-major grid order and, when
    ``out_dir`` is given, writes one combined CSV with the parameters
    prepended to each summary row.
    """
    if not grid:
        raise ValueError("sweep needs a nonempty grid")
    keys = list(grid)
    for key in keys:
        if key not in _CONFIG_FIELDS and key not in _SPEC_FIELDS:
            raise ValueError(f"unknown sweep key {key!r}")
        if len(grid[key]) == 0:
            raise ValueError(f"sweep key {key!r} has no values")

    combos: list[dict] = [{}]
    for key in keys:
        combos = [dict(c, **{key: v}) for c in combos for v in grid[key]]

    results = []
    for i, params in enumerate(combos):
        cfg_updates = {k: v for k, v in params.items() if k in _CONFIG_FIELDS}
        spec_updates = {k: v for k, v in params.items() if k in _SPEC_FIELDS}
        config = dataclasses.replace(base.config, **cfg_updates)
        point = dataclasses.replace(base, config=config, **spec_updates)
        sub_dir = Path(out_dir) / f"point_{i:03d}" if out_dir is not None else None
        results.append((params, run(point, sub_dir, write_traces=write_traces)))

    if out_dir is not None:
        combined = Path(out_dir) / "sweep.csv"
        with open(combined, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(keys + SUMMARY_HEADER)
            for params, summary in results:
                for row in summary.rows():
                    writer.writerow([params[k] for k in keys] + [row[0]] + [repr(x) for x in row[1:]])
    return results


# --------------------------------------------------------------------------
# Sensitivity auditor


@dataclass(frozen=True)
class AuditMechanismReport:
    label: str
    changed_entries: int
    entry_count_bound: float
    l1_shift: float
    l1_bound: float

    @property
    def passed(self) -> bool:
        return self.changed_entries <= self.entry_count_bound and self.l1_shift <= self.l1_bound


@dataclass(frozen=True)
class AuditReport:
    """Worst observed partial-sum disturbance over the explored neighbors."""

    algorithm: str
    changed_user: int
    mechanisms: tuple[AuditMechanismReport, ...]
    changed_partial_sum_count: int
    max_l1_shift: float
    theoretical_bound: float
    passed: bool


def _audit_config(config: EstimatorConfig) -> EstimatorConfig:
    if config.algorithm not in _AUDITABLE:
        raise ValueError(f"audits cover {_AUDITABLE}, not {config.algorithm!r}")
    updates: dict = {"noise_override": 0.0, "keep_trace": False, "track_diversity": False}
    if config.algorithm == "full" and config.prior_override is None:
        # pins every level prior so both neighbor runs share projections;
        # the calibration bound holds for any fixed priors
        updates["prior_override"] = 0.5
    return dataclasses.replace(config, **updates)


def _collect_nps(config: EstimatorConfig, events: Sequence[StreamEvent]) -> list[np.ndarray]:
    est = make_estimator(config)
    for ev in events:
        est.step(ev)
    return [np.asarray(mech.noisy_partial_sums) for mech in est.mechanisms]


def _per_mechanism_bounds(config: EstimatorConfig) -> list[tuple[str, float, float]]:
    """(label, entry_count_bound, l1_bound) per mechanism.

    The l1 bound is the numerator of the noise-scale formula, i.e. the
    worst-case l1 disturbance the Laplace scale was calibrated against.
    """
    m, n, eps, delta = config.m, config.n, config.eps, config.delta
    if config.algorithm == "naive":
        count = m * (1 + math.floor(math.log2(config.T)))
        l1 = naive_noise_scale(m, config.T, eps) * eps
        return [("naive", count, l1)]
    if config.algorithm == "single":
        count = (1 + math.log2(m)) * math.log2(1 + n * (1 + math.log2(m)))
        l1 = single_noise_scale(m, n, eps, delta) * eps
        return [("single", count, l1)]
    big_l = math.ceil(math.log2(m))
    count = 1 + math.log2(n)
    if config.algorithm == "multi":
        return [
            (f"multi[{lv}]", count, multi_noise_scale(m, n, lv, eps, delta) * eps / (big_l + 1))
            for lv in range(big_l + 1)
        ]
    return [
        (
            f"full[{lv}]",
            count,
            full_noise_scale(m, n, lv, eps, delta) * eps / (2 * (big_l + 1)),
        )
        for lv in range(big_l + 1)
    ]


def _value_grid_runs(
    config: EstimatorConfig, events: list[StreamEvent], positions: list[int]
) -> list[list[np.ndarray]]:
    """Partial-sum arrays for every {0,1} assignment of the given positions."""
    if len(positions) > _GRID_LIMIT:
        raise ValueError(
            f"value grid over {len(positions)} samples is too large to enumerate"
        )
    runs = []
    for mask in range(1 << len(positions)):
        variant = list(events)
        for bit, pos in enumerate(positions):
            ev = variant[pos]
            variant[pos] = StreamEvent(t=ev.t, user=ev.user, value=float((mask >> bit) & 1))
        runs.append(_collect_nps(config, variant))
    return runs


def _diff_report(
    config: EstimatorConfig,
    changed_user: int,
    pairs: list[tuple[list[np.ndarray], list[np.ndarray]]],
) -> AuditReport:
    bounds = _per_mechanism_bounds(config)
    n_mech = len(bounds)
    worst_count = [0] * n_mech
    worst_l1 = [0.0] * n_mech
    worst_total_l1 = 0.0
    for left, right in pairs:
        if len(left) != n_mech or len(right) != n_mech:
            raise AssertionError("mechanism count changed between neighbor runs")
        total = 0.0
        for i, (a, b) in enumerate(zip(left, right)):
            if a.shape != b.shape:
                raise AssertionError("partial-sum layout changed between neighbor runs")
            diff = np.abs(a - b)
            changed = int((diff > 1e-9).sum())
            l1 = float(diff.sum())
            worst_count[i] = max(worst_count[i], changed)
            worst_l1[i] = max(worst_l1[i], l1)
            total += l1
        worst_total_l1 = max(worst_total_l1, total)

    mech_reports = tuple(
        AuditMechanismReport(
            label=label,
            changed_entries=worst_count[i],
            entry_count_bound=cbound,
            l1_shift=worst_l1[i],
            l1_bound=lbound,
        )
        for i, (label, cbound, lbound) in enumerate(bounds)
    )
    total_bound = sum(b.l1_bound for b in mech_reports)
    return AuditReport(
        algorithm=config.algorithm,
        changed_user=changed_user,
        mechanisms=mech_reports,
        changed_partial_sum_count=sum(r.changed_entries for r in mech_reports),
        max_l1_shift=worst_total_l1,
        theoretical_bound=total_bound,
        passed=all(r.passed for r in mech_reports) and worst_total_l1 <= total_bound,
    )


def audit_sensitivity(
    config: EstimatorConfig, base_stream: Sequence[StreamEvent], changed_user: int
) -> AuditReport:
    """Compare the base run against every {0,1} replacement of one user.

    Runs are noiseless, so partial-sum differences reflect pure data
    sensitivity; contributions of unchanged users cancel exactly in each
    difference.
    """
    config = _audit_config(config)
    if not 1 <= changed_user <= config.n:
        raise ValueError(f"changed_user {changed_user} outside [1, {config.n}]")
    events = list(base_stream)
    positions = [i for i, ev in enumerate(events) if ev.user == changed_user]
    base = _collect_nps(config, events)
    variants = _value_grid_runs(config, events, positions)
    return _diff_report(config, changed_user, [(base, v) for v in variants])


def audit_value_grid(
    config: EstimatorConfig, users: Sequence[int], changed_user: int
) -> AuditReport:
    """Exhaustive neighbor-pair audit for one user ordering.

    Both sides of the neighbor pair range over the {0,1} grid for the
    changed user's positions; other users' values are irrelevant to the
    difference (they cancel), so they are fixed at zero.
    """
    config = _audit_config(config)
    events = [StreamEvent(t=i + 1, user=u, value=0.0) for i, u in enumerate(users)]
    positions = [i for i, ev in enumerate(events) if ev.user == changed_user]
    variants = _value_grid_runs(config, events, positions)
    pairs = [
        (variants[i], variants[j])
        for i in range(len(variants))
        for j in range(i + 1, len(variants))
    ]
    if not pairs:
        pairs = [(variants[0], variants[0])]
    return _diff_report(config, changed_user, pairs)
