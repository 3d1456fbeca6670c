"""Fault injection, feature extraction and labeled-dataset generation.

A fault corrupts exactly one measurement family in a UE's reports; labels
are taken from the fault that was active when the sample was emitted. The
classifier input is a fixed-order 8-value vector pairing real measurements
with the twin engine's outputs.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import radio_model, ran_sim, twin_engine
from .errors import ConfigurationError, DataFormatError, DomainError
from .ran_sim import MeasurementReport, SimConfig
from .twin_engine import AllocationPlan, PredictedKpi

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "rsrp_dbm",
    "rsrq_db",
    "sinr_db",
    "cqi",
    "achieved_mbps",
    "predicted_mbps",
    "grant_fraction",
    "priority",
)
N_FEATURES = len(FEATURE_NAMES)

DATASET_HEADER = (
    "rsrp_dbm,rsrq_db,sinr_db,cqi,achieved_mbps,predicted_mbps,"
    "grant_fraction,priority,label,ue_id,tick"
)

# Ticks discarded at the start of dataset generation so achieved/predicted
# KPIs reflect a settled allocation loop.
WARMUP_TICKS = 20


class AnomalyClass(enum.IntEnum):
    NORMAL = 0
    RSRP_ERROR = 1
    RSRQ_ERROR = 2
    SINR_ERROR = 3


CLASS_NAMES = {
    AnomalyClass.NORMAL: "Normal",
    AnomalyClass.RSRP_ERROR: "RsrpError",
    AnomalyClass.RSRQ_ERROR: "RsrqError",
    AnomalyClass.SINR_ERROR: "SinrError",
}
N_CLASSES = len(AnomalyClass)


@dataclass(frozen=True)
class FaultSpec:
    cls: AnomalyClass
    offset_db: float
    jitter_db: float
    duration_ticks: int

    def __post_init__(self):
        if self.cls == AnomalyClass.NORMAL:
            raise DomainError("FaultSpec class must be one of the error classes")
        if self.jitter_db < 0:
            raise DomainError(f"jitter_db must be >= 0, got {self.jitter_db}")
        if self.duration_ticks < 1:
            raise DomainError(f"duration_ticks must be >= 1, got {self.duration_ticks}")


def default_fault_specs(duration_ticks: int = 50) -> dict[AnomalyClass, FaultSpec]:
    return {
        AnomalyClass.RSRP_ERROR: FaultSpec(AnomalyClass.RSRP_ERROR, -20.0, 3.0, duration_ticks),
        AnomalyClass.RSRQ_ERROR: FaultSpec(AnomalyClass.RSRQ_ERROR, -10.0, 2.0, duration_ticks),
        AnomalyClass.SINR_ERROR: FaultSpec(AnomalyClass.SINR_ERROR, -15.0, 3.0, duration_ticks),
    }


def inject_fault(
    report: MeasurementReport, spec: FaultSpec, rng: np.random.Generator
) -> MeasurementReport:
    """Corrupt exactly the measurement family owned by the fault class.

    SINR corruption also recomputes the CQI, because the CQI report follows
    the (corrupted) SINR estimate. Draws exactly one jitter sample.
    """
    delta = spec.offset_db + float(rng.uniform(-spec.jitter_db, spec.jitter_db))
    ch = report.channel
    if spec.cls == AnomalyClass.RSRP_ERROR:
        new_ch = replace(ch, rsrp_dbm=ch.rsrp_dbm + delta)
    elif spec.cls == AnomalyClass.RSRQ_ERROR:
        new_ch = replace(ch, rsrq_db=min(0.0, ch.rsrq_db + delta))
    elif spec.cls == AnomalyClass.SINR_ERROR:
        corrupted = ch.sinr_db + delta
        new_ch = replace(ch, sinr_db=corrupted, cqi=radio_model.cqi_from_sinr(corrupted))
    else:  # pragma: no cover - FaultSpec forbids NORMAL
        raise DomainError("cannot inject a Normal fault")
    return replace(report, channel=new_ch)


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: AnomalyClass
    ue_id: int
    tick: int


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature mean and standard deviation, computed on training data only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_samples(cls, samples: list[LabeledSample]) -> "FeatureStats":
        x = np.stack([s.features for s in samples])
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        constant = std == 0.0
        if constant.any():
            names = [FEATURE_NAMES[i] for i in np.flatnonzero(constant)]
            log.warning("constant feature(s) %s: std replaced by 1", names)
            std = np.where(constant, 1.0, std)
        return cls(mean=mean, std=std)


def extract_features(
    report: MeasurementReport, kpi: PredictedKpi, plan: AllocationPlan
) -> np.ndarray:
    """Pack the 8 classifier inputs in their frozen file-format order."""
    if kpi.ue_id != report.ue_id:
        raise DomainError(f"report ue {report.ue_id} does not match kpi ue {kpi.ue_id}")
    if plan.tick != report.tick:
        raise DomainError(f"report tick {report.tick} does not match plan tick {plan.tick}")
    total = plan.cell_totals.get(report.serving_cell)
    if total is None:
        raise DomainError(f"plan has no cell totals for cell {report.serving_cell}")
    grant = plan.grants.get(report.ue_id, 0)
    ch = report.channel
    return np.array(
        [
            ch.rsrp_dbm,
            ch.rsrq_db,
            ch.sinr_db,
            float(ch.cqi),
            report.achieved_mbps,
            kpi.predicted_mbps,
            grant / total,
            float(report.priority),
        ],
        dtype=np.float64,
    )


def standardize(features: np.ndarray, stats: FeatureStats) -> np.ndarray:
    return (np.asarray(features, dtype=np.float64) - stats.mean) / stats.std


def largest_remainder_counts(total: int, fractions) -> list[int]:
    """Integer counts summing to `total`, apportioned by largest remainder.

    Remainder ties break toward the lowest index.
    """
    quotas = [total * f for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    short = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def generate_dataset(
    config: SimConfig,
    n_samples: int,
    class_mix: tuple[float, float, float, float],
    fault_defaults: dict[AnomalyClass, FaultSpec],
    seed: int,
) -> list[LabeledSample]:
    """Run the simulator with the twin in the loop and harvest labeled samples.

    Faults are started at (tick, ue) slots drawn from the dataset generator so
    that a few UEs per error class are faulted at any time; candidate samples
    are pooled per class and subsampled to the exact largest-remainder class
    counts. Output is sorted by (tick, ue_id).
    """
    if n_samples <= 0:
        raise ConfigurationError("n_samples must be positive")
    if len(class_mix) != N_CLASSES:
        raise ConfigurationError(f"class_mix needs {N_CLASSES} fractions")
    if any(f < 0 for f in class_mix):
        raise ConfigurationError("class_mix fractions must be >= 0")
    if abs(sum(class_mix) - 1.0) > 1e-9:
        raise ConfigurationError(f"class_mix must sum to 1, got {sum(class_mix)}")

    quotas = dict(zip(AnomalyClass, largest_remainder_counts(n_samples, class_mix)))
    rng = np.random.default_rng(seed)
    state = ran_sim.init_sim(config)
    # Enough concurrently faulted UEs per class to fill error quotas quickly,
    # while most of the population stays clean.
    concurrent = max(1, config.n_ues // 12)

    pools: dict[AnomalyClass, list[LabeledSample]] = {c: [] for c in AnomalyClass}
    error_classes = [c for c in AnomalyClass if c != AnomalyClass.NORMAL and quotas[c] > 0]

    for _ in range(config.n_ticks):
        sampling = state.tick + 1 > WARMUP_TICKS
        if sampling:
            active = {c: 0 for c in error_classes}
            idle = []
            for ue in state.ues:
                if ue.active_fault is None:
                    idle.append(ue.ue_id)
                elif ue.active_fault.spec.cls in active:
                    active[ue.active_fault.spec.cls] += 1
            for c in error_classes:
                while active[c] < concurrent and idle:
                    pick = int(rng.integers(0, len(idle)))
                    ue_id = idle.pop(pick)
                    ran_sim.set_fault(state, ue_id, fault_defaults[c])
                    active[c] += 1

        labels = {
            ue.ue_id: (
                ue.active_fault.spec.cls
                if ue.active_fault is not None and ue.active_fault.until_tick >= state.tick + 1
                else AnomalyClass.NORMAL
            )
            for ue in state.ues
        }
        state, reports, _ = ran_sim.step(state)
        plan, kpis, _ = twin_engine.twin_tick(reports, state.cells, config.link)
        if sampling:
            kpi_by_ue = {k.ue_id: k for k in kpis}
            for report in reports:
                label = labels[report.ue_id]
                if len(pools[label]) < 4 * quotas[label] + 8:
                    features = extract_features(report, kpi_by_ue[report.ue_id], plan)
                    pools[label].append(LabeledSample(features, label, report.ue_id, report.tick))
        ran_sim.apply_allocation(state, plan, config.link)
        if all(len(pools[c]) >= quotas[c] for c in AnomalyClass):
            break

    short = {CLASS_NAMES[c]: quotas[c] - len(pools[c]) for c in AnomalyClass if len(pools[c]) < quotas[c]}
    if short:
        raise ConfigurationError(
            f"simulation horizon too short to fill class quotas (missing {short}); "
            "increase n_ticks or n_ues"
        )

    selected: list[LabeledSample] = []
    for c in AnomalyClass:
        pool = pools[c]
        picks = rng.permutation(len(pool))[: quotas[c]]
        selected.extend(pool[i] for i in sorted(picks))
    selected.sort(key=lambda s: (s.tick, s.ue_id))
    return selected


def split_dataset(
    data: list[LabeledSample], train_fraction: float, seed: int
) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """Stratified split: per-class seeded shuffle, floor-sized train share,
    topped up by largest remainder so the train side totals
    floor(fraction * n). Classes too small to split (fewer than 2 samples,
    or a zero floor share) stay whole in the test side, with a warning.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DomainError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if not data:
        raise DomainError("cannot split an empty dataset")

    by_class: dict[AnomalyClass, list[int]] = {}
    for i, s in enumerate(data):
        by_class.setdefault(s.label, []).append(i)

    rng = np.random.default_rng(seed)
    shuffled = {}
    base = {}
    for c in sorted(by_class):
        idx = by_class[c]
        shuffled[c] = [idx[j] for j in rng.permutation(len(idx))]
        base[c] = int(math.floor(train_fraction * len(idx)))

    target_train = int(math.floor(train_fraction * len(data)))
    deficit = target_train - sum(base.values())
    # Top up by largest fractional remainder among classes that can spare a
    # sample for each side of the split.
    eligible = [
        c
        for c in sorted(by_class)
        if len(by_class[c]) >= 2 and base[c] >= 1 and base[c] + 1 <= len(by_class[c]) - 1
    ]
    eligible.sort(key=lambda c: (-(train_fraction * len(by_class[c]) - base[c]), int(c)))
    for c in eligible[:max(0, deficit)]:
        base[c] += 1

    degenerate = [c for c in sorted(by_class) if base[c] == 0]
    if degenerate:
        log.warning(
            "degenerate split: class(es) %s contribute no training samples",
            [CLASS_NAMES[c] for c in degenerate],
        )

    train_idx: list[int] = []
    test_idx: list[int] = []
    for c in sorted(by_class):
        train_idx.extend(shuffled[c][: base[c]])
        test_idx.extend(shuffled[c][base[c]:])
    train_idx.sort()
    test_idx.sort()
    return [data[i] for i in train_idx], [data[i] for i in test_idx]


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def write_dataset_csv(samples: list[LabeledSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DATASET_HEADER + "\n")
        for s in samples:
            fields = [_fmt(v) for v in s.features]
            fields += [str(int(s.label)), str(s.ue_id), str(s.tick)]
            fh.write(",".join(fields) + "\n")


def read_dataset_csv(path) -> list[LabeledSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != DATASET_HEADER:
            raise DataFormatError(f"line 1: bad dataset header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != N_FEATURES + 3:
                raise DataFormatError(
                    f"line {lineno}: expected {N_FEATURES + 3} fields, got {len(parts)}"
                )
            try:
                features = np.array([float(v) for v in parts[:N_FEATURES]], dtype=np.float64)
                label = int(parts[N_FEATURES])
                ue_id = int(parts[N_FEATURES + 1])
                tick = int(parts[N_FEATURES + 2])
            except ValueError as e:
                raise DataFormatError(f"line {lineno}: {e}") from e
            if not 0 <= label < N_CLASSES:
                raise DataFormatError(f"line {lineno}: label {label} outside 0..{N_CLASSES - 1}")
            if not np.isfinite(features).all():
                raise DataFormatError(f"line {lineno}: non-finite feature value")
            samples.append(LabeledSample(features, AnomalyClass(label), ue_id, tick))
    return samples


def write_stats_csv(stats: FeatureStats, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("feature,mean,std\n")
        for i, name in enumerate(FEATURE_NAMES):
            fh.write(f"{name},{_fmt(stats.mean[i])},{_fmt(stats.std[i])}\n")


def read_stats_csv(path) -> FeatureStats:
    mean = np.zeros(N_FEATURES)
    std = np.ones(N_FEATURES)
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "feature,mean,std":
            raise DataFormatError(f"line 1: bad stats header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3 or parts[0] not in FEATURE_NAMES:
                raise DataFormatError(f"line {lineno}: bad stats row {line!r}")
            i = FEATURE_NAMES.index(parts[0])
            try:
                mean[i] = float(parts[1])
                std[i] = float(parts[2])
            except ValueError as e:
                raise DataFormatError(f"line {lineno}: {e}") from e
            seen.add(parts[0])
    missing = [n for n in FEATURE_NAMES if n not in seen]
    if missing:
        raise DataFormatError(f"stats file missing feature rows: {missing}")
    if (std <= 0).any():
        raise DataFormatError("stats file contains non-positive std")
    return FeatureStats(mean=mean, std=std)
