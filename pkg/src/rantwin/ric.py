"""Near-real-time controller abstraction: an in-process ordered message bus,
the digital-twin application that pairs the simulation engine with anomaly
inference, and the remediation policy that closes the loop back into the RAN.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import anomaly, mlp, ran_sim, twin_engine
from .anomaly import AnomalyClass, FaultSpec, FeatureStats
from .errors import ConfigurationError, DomainError, ProtocolError
from .mlp import MlpModel
from .ran_sim import MeasurementReport, SimConfig, SimState
from .twin_engine import AllocationPlan


@dataclass(frozen=True)
class Indication:
    tick: int
    reports: tuple[MeasurementReport, ...]

    def __post_init__(self):
        for r in self.reports:
            if r.tick != self.tick:
                raise DomainError(f"report tick {r.tick} does not match indication tick {self.tick}")


@dataclass(frozen=True)
class PrbBoost:
    factor: float
    duration_ticks: int

    def __post_init__(self):
        if self.factor <= 1.0:
            raise DomainError(f"boost factor must be > 1, got {self.factor}")
        if self.duration_ticks < 1:
            raise DomainError(f"duration_ticks must be >= 1, got {self.duration_ticks}")


@dataclass(frozen=True)
class ForceHandover:
    target_cell: int


@dataclass(frozen=True)
class ControlAction:
    tick: int
    ue_id: int
    kind: PrbBoost | ForceHandover
    cause: AnomalyClass


class BusSubscription:
    def __init__(self):
        self._queue: deque[Indication] = deque()

    def _push(self, indication: Indication) -> None:
        self._queue.append(indication)

    def pending(self) -> int:
        return len(self._queue)

    def pop(self) -> Indication:
        if not self._queue:
            raise ProtocolError("no indication pending")
        return self._queue.popleft()

    def drain(self) -> list[Indication]:
        out = list(self._queue)
        self._queue.clear()
        return out


class MessageBus:
    """Lossless in-process fan-out with strictly increasing publication ticks."""

    def __init__(self):
        self._subscriptions: list[BusSubscription] = []
        self._last_tick: int | None = None

    def subscribe(self) -> BusSubscription:
        sub = BusSubscription()
        self._subscriptions.append(sub)
        return sub

    def publish(self, indication: Indication) -> None:
        if self._last_tick is not None and indication.tick <= self._last_tick:
            raise ProtocolError(
                f"out-of-order publish: tick {indication.tick} after {self._last_tick}"
            )
        self._last_tick = indication.tick
        for sub in self._subscriptions:
            sub._push(indication)


@dataclass(frozen=True)
class RemediationPolicy:
    """Maps a confirmed anomaly class to a control action.

    Measurement-report errors (RSRP/RSRQ) steer the UE to its strongest
    neighbor; SINR errors, which starve the UE of PRBs through the corrupted
    CQI, get a temporary allocation-weight boost.
    """

    handover_classes: tuple[AnomalyClass, ...] = (
        AnomalyClass.RSRP_ERROR,
        AnomalyClass.RSRQ_ERROR,
    )
    boost_classes: tuple[AnomalyClass, ...] = (AnomalyClass.SINR_ERROR,)
    boost_factor: float = 2.0
    boost_duration_ticks: int = 100

    def action_for(
        self, cause: AnomalyClass, report: MeasurementReport
    ) -> PrbBoost | ForceHandover | None:
        if cause in self.boost_classes:
            return PrbBoost(self.boost_factor, self.boost_duration_ticks)
        if cause in self.handover_classes:
            if not report.neighbor_rsrp_dbm:
                return None  # single-cell network: nowhere to steer
            target = min(report.neighbor_rsrp_dbm, key=lambda c: (-report.neighbor_rsrp_dbm[c], c))
            return ForceHandover(target_cell=target)
        return None


@dataclass
class Detection:
    tick: int
    ue_id: int
    predicted: AnomalyClass
    probs: tuple[float, float, float, float]


@dataclass
class _UeDebounce:
    streak_cls: AnomalyClass | None = None
    streak_len: int = 0
    normal_streak: int = 0
    armed: bool = True


class DtXapp:
    """The DT application hosted in the controller.

    Per indication it runs the twin engine, classifies every UE from the
    standardized feature vector, and emits one control action per confirmed
    anomaly: a prediction must repeat for `confirm_ticks` consecutive ticks
    to fire, and the UE must read Normal for `clear_ticks` ticks to re-arm.
    """

    def __init__(
        self,
        model: MlpModel,
        stats: FeatureStats,
        cells,
        link_params,
        policy: RemediationPolicy | None = None,
        confirm_ticks: int = 3,
        clear_ticks: int = 10,
    ):
        if model is None or stats is None:
            raise ConfigurationError("DtXapp requires a trained model and feature stats")
        if confirm_ticks < 1 or clear_ticks < 0:
            raise ConfigurationError("confirm_ticks must be >= 1 and clear_ticks >= 0")
        self.model = model
        self.stats = stats
        self.cells = list(cells)
        self.link_params = link_params
        self.policy = policy if policy is not None else RemediationPolicy()
        self.confirm_ticks = confirm_ticks
        self.clear_ticks = clear_ticks
        self._debounce: dict[int, _UeDebounce] = {}

    def on_indication(
        self, indication: Indication, weights=None
    ) -> tuple[AllocationPlan, list[ControlAction], list[Detection]]:
        plan, kpis, _ = twin_engine.twin_tick(
            indication.reports, self.cells, self.link_params, weights
        )
        kpi_by_ue = {k.ue_id: k for k in kpis}
        actions: list[ControlAction] = []
        detections: list[Detection] = []
        for report in indication.reports:
            features = anomaly.extract_features(report, kpi_by_ue[report.ue_id], plan)
            _, probs = mlp.forward(self.model, anomaly.standardize(features, self.stats))
            predicted = AnomalyClass(int(np.argmax(probs)))
            state = self._debounce.setdefault(report.ue_id, _UeDebounce())
            if predicted == AnomalyClass.NORMAL:
                state.streak_cls = None
                state.streak_len = 0
                state.normal_streak += 1
                if not state.armed and state.normal_streak >= self.clear_ticks:
                    state.armed = True
                continue

            detections.append(
                Detection(indication.tick, report.ue_id, predicted, tuple(float(p) for p in probs))
            )
            state.normal_streak = 0
            if predicted == state.streak_cls:
                state.streak_len += 1
            else:
                state.streak_cls = predicted
                state.streak_len = 1
            if state.armed and state.streak_len >= self.confirm_ticks:
                kind = self.policy.action_for(predicted, report)
                if kind is not None:
                    actions.append(
                        ControlAction(
                            tick=indication.tick,
                            ue_id=report.ue_id,
                            kind=kind,
                            cause=predicted,
                        )
                    )
                state.armed = False
        return plan, actions, detections


def apply_control(state: SimState, action: ControlAction) -> SimState:
    """Realize a control action on the RAN state (mutates and returns it)."""
    ue = state.ue(action.ue_id)
    if isinstance(action.kind, ForceHandover):
        state.cell(action.kind.target_cell)  # raises on unknown cell
        ue.serving_cell = action.kind.target_cell
    elif isinstance(action.kind, PrbBoost):
        ue.boost_factor = action.kind.factor
        ue.boost_until_tick = action.tick + action.kind.duration_ticks
    else:
        raise DomainError(f"unknown control kind {action.kind!r}")
    return state


def allocation_weights(state: SimState) -> dict[int, float]:
    """Priority weights including any active control-plane boost."""
    return {
        ue.ue_id: float(ue.traffic_priority)
        * (ue.boost_factor if state.tick <= ue.boost_until_tick else 1.0)
        for ue in state.ues
    }


@dataclass(frozen=True)
class ScheduledFault:
    onset_tick: int
    ue_id: int
    spec: FaultSpec


@dataclass
class FaultEvent:
    fault_id: int
    ue_id: int
    cls: AnomalyClass
    onset_tick: int
    baseline_mbps: float = 0.0
    detect_tick: int | None = None
    action_tick: int | None = None
    restore_tick: int | None = None

    def detection_latency_ticks(self) -> int | None:
        return None if self.detect_tick is None else self.detect_tick - self.onset_tick

    def restoration_latency_ticks(self) -> int | None:
        if self.action_tick is None or self.restore_tick is None:
            return None
        return self.restore_tick - self.action_tick


@dataclass
class EpisodeLog:
    n_ticks: int
    detections: list[Detection] = field(default_factory=list)
    actions: list[ControlAction] = field(default_factory=list)
    fault_events: list[FaultEvent] = field(default_factory=list)


# Ticks of pre-fault history averaged into the restoration baseline.
BASELINE_WINDOW_TICKS = 20
# Fraction of the baseline that counts as restored service.
RESTORE_FRACTION = 0.8


def closed_loop_run(
    config: SimConfig,
    model: MlpModel,
    stats: FeatureStats,
    fault_schedule: list[ScheduledFault],
    policy: RemediationPolicy | None = None,
    confirm_ticks: int = 3,
    clear_ticks: int = 10,
) -> EpisodeLog:
    """Run simulator, bus and xApp in per-tick lockstep.

    Detection latency is measured from fault onset to the first confirmed
    detection of the matching class; restoration latency from the control
    action to achieved throughput reaching RESTORE_FRACTION of the pre-fault
    BASELINE_WINDOW_TICKS-tick average.
    """
    for fault in fault_schedule:
        if not 1 <= fault.onset_tick <= config.n_ticks:
            raise ConfigurationError(
                f"fault onset_tick {fault.onset_tick} outside 1..{config.n_ticks}"
            )
        if not 0 <= fault.ue_id < config.n_ues:
            raise ConfigurationError(f"fault ue_id {fault.ue_id} outside the UE population")

    state = ran_sim.init_sim(config)
    bus = MessageBus()
    subscription = bus.subscribe()
    xapp = DtXapp(model, stats, state.cells, config.link, policy, confirm_ticks, clear_ticks)

    log = EpisodeLog(n_ticks=config.n_ticks)
    events: list[FaultEvent] = []
    by_onset: dict[int, list[ScheduledFault]] = {}
    for i, fault in enumerate(fault_schedule):
        events.append(FaultEvent(i, fault.ue_id, fault.spec.cls, fault.onset_tick))
        by_onset.setdefault(fault.onset_tick, []).append(fault)
    log.fault_events = events

    achieved_history: dict[int, list[float]] = {ue.ue_id: [] for ue in state.ues}

    for _ in range(config.n_ticks):
        onset = state.tick + 1
        for fault in by_onset.get(onset, ()):
            ran_sim.set_fault(state, fault.ue_id, fault.spec)
            for event in events:
                if event.onset_tick == onset and event.ue_id == fault.ue_id:
                    history = achieved_history[fault.ue_id][-BASELINE_WINDOW_TICKS:]
                    event.baseline_mbps = float(np.mean(history)) if history else 0.0

        state, reports, _ = ran_sim.step(state)
        bus.publish(Indication(tick=state.tick, reports=tuple(reports)))
        indication = subscription.pop()
        plan, actions, detections = xapp.on_indication(
            indication, weights=allocation_weights(state)
        )
        ran_sim.apply_allocation(state, plan, config.link)
        for action in actions:
            apply_control(state, action)

        log.detections.extend(detections)
        log.actions.extend(actions)
        for action in actions:
            for event in events:
                if (
                    event.ue_id == action.ue_id
                    and event.detect_tick is None
                    and action.tick >= event.onset_tick
                    and action.cause == event.cls
                ):
                    event.detect_tick = action.tick
                    event.action_tick = action.tick
                    break

        for ue in state.ues:
            achieved_history[ue.ue_id].append(ue.achieved_mbps)
        for event in events:
            if event.action_tick is not None and event.restore_tick is None:
                if state.tick > event.action_tick:
                    achieved = achieved_history[event.ue_id][-1]
                    if achieved >= RESTORE_FRACTION * event.baseline_mbps:
                        event.restore_tick = state.tick

    return log


def message_to_dict(message) -> dict:
    """Wire-schema view of a bus message, one JSON object per message."""
    if isinstance(message, Indication):
        return {
            "type": "indication",
            "tick": message.tick,
            "reports": [ran_sim.report_to_dict(r) for r in message.reports],
        }
    if isinstance(message, ControlAction):
        out = {
            "type": "control",
            "tick": message.tick,
            "ue_id": message.ue_id,
            "cause": int(message.cause),
        }
        if isinstance(message.kind, PrbBoost):
            out["kind"] = "PrbBoost"
            out["factor"] = message.kind.factor
            out["duration_ticks"] = message.kind.duration_ticks
        else:
            out["kind"] = "ForceHandover"
            out["target_cell"] = message.kind.target_cell
        return out
    raise DomainError(f"not a bus message: {message!r}")


def write_episode_jsonl(log: EpisodeLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for det in log.detections:
            fh.write(
                json.dumps(
                    {
                        "type": "detection",
                        "tick": det.tick,
                        "ue_id": det.ue_id,
                        "predicted": int(det.predicted),
                        "probs": list(det.probs),
                    }
                )
                + "\n"
            )
        for action in log.actions:
            fh.write(json.dumps(message_to_dict(action)) + "\n")
        for event in log.fault_events:
            fh.write(
                json.dumps(
                    {
                        "type": "fault_event",
                        "fault_id": event.fault_id,
                        "ue_id": event.ue_id,
                        "class": int(event.cls),
                        "onset_tick": event.onset_tick,
                        "baseline_mbps": event.baseline_mbps,
                        "detect_tick": event.detect_tick,
                        "action_tick": event.action_tick,
                        "restore_tick": event.restore_tick,
                    }
                )
                + "\n"
            )


def write_episode_summary_csv(log: EpisodeLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fault_id,ue_id,class,onset_tick,detect_tick,action_tick,restore_tick\n")
        for e in log.fault_events:
            fields = [
                str(e.fault_id),
                str(e.ue_id),
                str(int(e.cls)),
                str(e.onset_tick),
                "" if e.detect_tick is None else str(e.detect_tick),
                "" if e.action_tick is None else str(e.action_tick),
                "" if e.restore_tick is None else str(e.restore_tick),
            ]
            fh.write(",".join(fields) + "\n")
