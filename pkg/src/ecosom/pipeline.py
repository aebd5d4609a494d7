"""End-to-end helpers shared by the command line and the acceptance checks."""

from __future__ import annotations

from typing import Iterable, Sequence

from . import fuelmodel
from .features import FeatureWindow, as_matrix, make_windows, normalize_dataset
from .fuelmodel import VehicleParams
from .somanalysis import ClusterMap, cluster_scheme
from .somcore import SomModel, TrainSchedule, train
from .telemetry import TelemetrySession, resample


def session_windows(session: TelemetrySession, params: VehicleParams | None = None,
                    window_size: int = 256, shift: int = 128, min_speed: float = 60.0,
                    rate_hz: float = 32.0) -> list[FeatureWindow]:
    """Resample, cut into windows, attach simulated fuel, drop slow windows."""
    s = resample(session, rate_hz)
    trace = fuelmodel.simulate_session(s, params, window_size=window_size, shift=shift)
    windows = fuelmodel.label_windows(make_windows(s, window_size, shift), trace)
    return [w for w in windows if w.mean_speed >= min_speed]


def fleet_windows(sessions: Iterable[TelemetrySession], params: VehicleParams | None = None,
                  **kw) -> list[FeatureWindow]:
    out = []
    for s in sessions:
        out.extend(session_windows(s, params, **kw))
    return out


def fit_som(windows: Sequence[FeatureWindow], rows: int = 11, cols: int = 11, seed: int = 0,
            iterations: int | None = None) -> SomModel:
    """Normalize the window features and train a map on them."""
    data, scaler = normalize_dataset(as_matrix(w.vector for w in windows))
    schedule = TrainSchedule.default(rows, cols, len(data), seed)
    if iterations is not None:
        schedule = TrainSchedule(schedule.alpha0, iterations, schedule.sigma0, schedule.sigma_final, seed)
    return train(data, rows, cols, schedule, scaler)


def fit(windows: Sequence[FeatureWindow], n_clusters: int, rows: int = 11, cols: int = 11, seed: int = 0,
        iterations: int | None = None, threshold: float | None = None) -> tuple[SomModel, ClusterMap]:
    model = fit_som(windows, rows, cols, seed, iterations)
    return model, cluster_scheme(model, windows, n_clusters, threshold)
