"""Self-organizing-map driving-style analysis, eco-driving advice and a
cycle-accurate model of a fixed-point SOM inference accelerator."""

from .accelemu import AccelCore, InferenceResult, load_model, run_inference
from .advisor import advise, evaluate_interval, expected_reduction, session_report
from .features import FeatureVector, FeatureWindow, make_windows, normalize_dataset
from .fuelmodel import VehicleParams, co2_per_km, simulate_session
from .somanalysis import ClusterMap, cluster_scheme, threshold_clusters, u_matrix
from .somcore import SomModel, TrainSchedule, find_bmu, train
from .telemetry import TelemetrySession, read_sessions, resample

__version__ = "0.1.0"

__all__ = [
    "AccelCore", "ClusterMap", "FeatureVector", "FeatureWindow", "InferenceResult", "SomModel",
    "TelemetrySession", "TrainSchedule", "VehicleParams", "advise", "cluster_scheme", "co2_per_km",
    "evaluate_interval", "expected_reduction", "find_bmu", "load_model", "make_windows",
    "normalize_dataset", "read_sessions", "resample", "run_inference", "session_report",
    "simulate_session", "threshold_clusters", "train", "u_matrix",
]
