"""Per-interval driving-style evaluation and eco-driving advice."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from . import fuelmodel
from .accelemu import AccelCore, run_inference
from .features import FeatureVector, FeatureWindow, make_windows
from .fuelmodel import FuelTrace, VehicleParams
from .somanalysis import LABELS, ClusterMap
from .somcore import SomModel, find_bmu
from .telemetry import TelemetrySession

KEEP = "Keep driving style"

ADVICE = {
    3: {
        "Very low": KEEP,
        "Low": "Lower RPM/Switch to a higher gear",
        "Medium-High": "Lower RPM/Keep gas steady/Lower PGP",
    },
    5: {
        "Very low": KEEP,
        "Low": "Lower RPM/Switch to a higher gear",
        "Medium": "Lower RPM/Operate gas softly",
        "High": "Lower PGP/Lower RPM",
        "Very high": "Lower PGP/Keep gas steady",
    },
}

DEFAULT_INTERVAL_S = 100.0
DEFAULT_MIN_SPEED = 60.0


@dataclass(frozen=True)
class AdviceRule:
    scheme: int
    advice: Mapping[str, str]
    target: Mapping[str, str | None]   # adjacent lower-consumption label

    @classmethod
    def for_scheme(cls, scheme: int) -> "AdviceRule":
        if scheme not in ADVICE:
            raise ValueError(f"no advice table for a {scheme}-cluster scheme")
        labels = LABELS[scheme]
        target = {lab: (labels[i - 1] if i else None) for i, lab in enumerate(labels)}
        return cls(scheme, dict(ADVICE[scheme]), target)

    @property
    def labels(self) -> tuple[str, ...]:
        return LABELS[self.scheme]


@dataclass(frozen=True)
class Classification:
    label: str
    cluster_id: int
    bmu: int
    clamped: bool


@dataclass
class AdviceReport:
    driver_id: str
    t0: float
    t1: float
    distribution: dict[str, float]
    dominant: str
    advice: str
    expected_reduction_pct: float
    l100km: float
    co2_gpkm: float
    n_windows: int
    clamped_windows: int = 0
    scope: str = "interval"

    def to_json(self) -> dict:
        return {
            "driver": self.driver_id,
            "t0": self.t0,
            "t1": self.t1,
            "dist": self.distribution,
            "dominant": self.dominant,
            "advice": self.advice,
            "expected_reduction_pct": self.expected_reduction_pct,
            "l100km": self.l100km,
            "co2_gpkm": self.co2_gpkm,
            "scope": self.scope,
            "n_windows": self.n_windows,
            "clamped_windows": self.clamped_windows,
        }


@dataclass
class SessionReport:
    driver_id: str
    session_id: str
    intervals: list[AdviceReport] = field(default_factory=list)
    rollup: AdviceReport | None = None
    status: str = "ok"

    def lines(self) -> list[dict]:
        out = [r.to_json() for r in self.intervals]
        if self.rollup is not None:
            out.append(self.rollup.to_json())
        return out

    def write_jsonl(self, fh: IO[str]) -> None:
        for obj in self.lines():
            fh.write(json.dumps(obj) + "\n")


def classify_window(model: SomModel, clustermap: ClusterMap, v: FeatureVector,
                    core: AccelCore | None = None) -> Classification:
    """Label of the BMU's cluster, optionally computed on the fixed-point core.

    Features outside the training range are clamped into it first and the
    result says so.
    """
    if model.scaler is None:
        raise ValueError("model has no scaler; cannot normalize raw features")
    z, clamped = model.scaler.transform_clamped(v.as_array())
    if core is not None:
        res = run_inference(core, z)
        bmu, cid = res.bmu_index, res.cluster_id
    else:
        bmu, _ = find_bmu(model, z)
        cid = clustermap.assignment[bmu]
    return Classification(clustermap.cluster(cid).label, cid, bmu, clamped)


def evaluate_interval(labels: Sequence[str], order: Sequence[str]) -> tuple[dict[str, float], str]:
    """Label shares in percent and the dominant label.

    ``order`` lists labels by ascending consumption; ties between the largest
    shares go to the higher-consumption label.
    """
    if not labels:
        raise ValueError("empty evaluation interval")
    unknown = set(labels) - set(order)
    if unknown:
        raise ValueError(f"labels outside the scheme: {sorted(unknown)}")
    counts = {lab: 0 for lab in order}
    for lab in labels:
        counts[lab] += 1
    n = len(labels)
    dist = {lab: 100.0 * c / n for lab, c in counts.items()}
    top = max(counts.values())
    dominant = [lab for lab in order if counts[lab] == top][-1]
    return dist, dominant


def advise(label: str, scheme: int) -> str:
    try:
        return ADVICE[scheme][label]
    except KeyError:
        raise ValueError(f"no advice for label {label!r} in the {scheme}-cluster scheme") from None


def expected_reduction(label: str, averages: Mapping[str, float], scheme: int = 5) -> float:
    """Percent saving from moving to the adjacent lower-consumption cluster."""
    rule = AdviceRule.for_scheme(scheme)
    if label not in rule.target:
        raise ValueError(f"unknown label {label!r}")
    target = rule.target[label]
    if target is None:
        return 0.0
    return fuelmodel.percent_reduction(averages[label], averages[target])


def _report(driver: str, t0: float, t1: float, labels: list[str], rule: AdviceRule, averages: Mapping[str, float],
            l100km: float, params: VehicleParams, clamped: int, scope: str) -> AdviceReport:
    dist, dominant = evaluate_interval(labels, rule.labels)
    return AdviceReport(driver, t0, t1, dist, dominant, advise(dominant, rule.scheme),
                        expected_reduction(dominant, averages, rule.scheme), l100km,
                        fuelmodel.co2_per_km(l100km, params), len(labels), clamped, scope)


def session_report(session: TelemetrySession, model: SomModel, clustermap: ClusterMap,
                   params: VehicleParams | None = None, trace: FuelTrace | None = None,
                   interval_s: float = DEFAULT_INTERVAL_S, min_speed: float = DEFAULT_MIN_SPEED,
                   window_size: int = 256, shift: int = 128, core: AccelCore | None = None) -> SessionReport:
    """One advice report per evaluation interval plus a whole-session rollup.

    Windows whose mean speed falls below ``min_speed`` are dropped. A window
    belongs to the interval containing its start; intervals left without
    windows are skipped. Consumption figures come from the fuel trace over
    the samples of the kept windows.
    """
    params = params or VehicleParams()
    scheme = clustermap.n_clusters
    rule = AdviceRule.for_scheme(scheme)
    if tuple(clustermap.labels) != rule.labels:
        raise ValueError(f"cluster map labels {clustermap.labels} do not match the {scheme}-cluster scheme")
    trace = trace or fuelmodel.simulate_session(session, params, window_size=window_size, shift=shift)
    averages = clustermap.avg_by_label()
    report = SessionReport(session.driver_id, session.session_id)
    windows = [w for w in make_windows(session, window_size, shift) if w.mean_speed >= min_speed]
    if not windows:
        report.status = f"no window with mean speed >= {min_speed:g} km/h"
        return report
    t_origin = float(session.t[0])
    groups: dict[int, list[tuple[FeatureWindow, Classification]]] = {}
    for w in windows:
        k = int((w.t_start - t_origin) // interval_s)
        groups.setdefault(k, []).append((w, classify_window(model, clustermap, w.vector, core)))
    all_labels, all_mask, all_clamped = [], np.zeros(len(session), bool), 0
    for k in sorted(groups):
        items = groups[k]
        mask = np.zeros(len(session), bool)
        for w, _ in items:
            mask[w.start_index:w.start_index + w.window_size] = True
        labels = [c.label for _, c in items]
        clamped = sum(c.clamped for _, c in items)
        l100 = fuelmodel.window_consumption(trace.flow_lph[mask], trace.vs[mask])
        t0 = t_origin + k * interval_s
        report.intervals.append(_report(session.driver_id, t0, t0 + interval_s, labels, rule, averages,
                                        l100, params, clamped, "interval"))
        all_labels += labels
        all_mask |= mask
        all_clamped += clamped
    l100 = fuelmodel.window_consumption(trace.flow_lph[all_mask], trace.vs[all_mask])
    report.rollup = _report(session.driver_id, t_origin, float(session.t[-1]), all_labels, rule, averages,
                            l100, params, all_clamped, "session")
    return report


def write_reports(reports: Iterable[SessionReport], fh: IO[str]) -> int:
    n = 0
    for r in reports:
        r.write_jsonl(fh)
        n += len(r.intervals)
    return n
