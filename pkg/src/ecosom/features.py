"""Sliding-window feature extraction and correlation-based feature ranking."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import special

from .telemetry import TelemetrySession, split_xacc, window_starts

WINDOW_SIZE = 256
WINDOW_SHIFT = 128

FEATURE_NAMES = ("mean_pgp", "mean_erpm", "mean_gp", "var_pos_xacc")

# Signals whose window mean and variance are candidate features.
CANDIDATE_SIGNALS = ("vs", "pgp", "erpm", "bp", "gp", "pos_xacc", "neg_xacc")

WINDOW_CSV_HEADER = ("driver_id", "start_index", "mean_pgp", "mean_erpm", "mean_gp",
                     "var_pos_xacc", "mean_speed", "fuel_l100km")

# Top of the normalized range; keeps every value representable in unsigned Q0.8.
NORM_TOP = 255.0 / 256.0


@dataclass(frozen=True)
class FeatureVector:
    mean_pgp: float
    mean_erpm: float
    mean_gp: float
    var_pos_xacc: float

    def as_array(self) -> np.ndarray:
        return np.array([self.mean_pgp, self.mean_erpm, self.mean_gp, self.var_pos_xacc])

    @classmethod
    def from_array(cls, arr) -> "FeatureVector":
        return cls(*(float(v) for v in arr))


@dataclass(frozen=True)
class FeatureWindow:
    driver_id: str
    start_index: int
    span_s: float
    vector: FeatureVector
    mean_speed: float
    fuel_l_per_100km: float | None = None
    session_id: str = ""
    t_start: float = 0.0
    window_size: int = WINDOW_SIZE
    candidates: Mapping[str, float] = field(default_factory=dict, compare=False, repr=False)

    def with_fuel(self, l100km: float) -> "FeatureWindow":
        return replace(self, fuel_l_per_100km=float(l100km))


@dataclass(frozen=True)
class Correlation:
    feature: str
    pcc: float
    p_value: float


@dataclass
class CorrelationReport:
    rows: list[Correlation]
    n: int
    skipped: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> Correlation:
        for r in self.rows:
            if r.feature == name:
                return r
        raise KeyError(name)

    @property
    def ranking(self) -> list[str]:
        return [r.feature for r in self.rows]


def window_stats(values) -> tuple[float, float]:
    """Arithmetic mean and population variance."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("window_stats of an empty sequence")
    mean = float(x.mean())
    var = float(np.mean((x - mean) ** 2))
    return mean, var


def feature_vector(window: TelemetrySession) -> FeatureVector:
    """The four model inputs of one window of samples."""
    pos, _ = split_xacc(window.xacc)
    return FeatureVector(
        mean_pgp=window_stats(window.pgp)[0],
        mean_erpm=window_stats(window.erpm)[0],
        mean_gp=window_stats(window.gp)[0],
        var_pos_xacc=window_stats(pos)[1],
    )


def candidate_features(window: TelemetrySession) -> dict[str, float]:
    pos, neg = split_xacc(window.xacc)
    signals = {"vs": window.vs, "pgp": window.pgp, "erpm": window.erpm, "bp": window.bp,
               "gp": window.gp, "pos_xacc": pos, "neg_xacc": neg}
    out = {}
    for name in CANDIDATE_SIGNALS:
        mean, var = window_stats(signals[name])
        out[f"mean_{name}"] = mean
        out[f"var_{name}"] = var
    return out


def make_windows(session: TelemetrySession, window_size: int = WINDOW_SIZE,
                 shift: int = WINDOW_SHIFT) -> list[FeatureWindow]:
    """Cut a resampled session into overlapping feature windows.

    Yields ``floor((len - window_size) / shift) + 1`` windows when the session
    is at least one window long, none otherwise.
    """
    out = []
    span = window_size / session.rate_hz
    for start in window_starts(len(session), window_size, shift):
        w = session.slice(start, start + window_size)
        out.append(FeatureWindow(
            driver_id=session.driver_id,
            session_id=session.session_id,
            start_index=start,
            t_start=float(session.t[start]),
            span_s=span,
            window_size=window_size,
            vector=feature_vector(w),
            mean_speed=float(w.vs.mean()),
            candidates=candidate_features(w),
        ))
    return out


def pearson(x, y) -> float:
    """Pearson correlation coefficient of two equal-length sequences."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise ValueError("pearson needs at least 3 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def pearson_p_value(r: float, n: int) -> float:
    """Two-sided p-value for H0: no correlation, via the Student-t(n-2) null.

    Uses the regularized incomplete beta identity
    ``P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)`` with ``t^2 = r^2 df / (1 - r^2)``,
    which simplifies to ``I_{1-r^2}(df/2, 1/2)``.
    """
    if n < 3:
        raise ValueError("p-value needs n >= 3")
    if abs(r) > 1.0:
        raise ValueError("|r| must not exceed 1")
    if abs(r) == 1.0:
        return 0.0
    df = n - 2
    p = float(special.betainc(df / 2.0, 0.5, 1.0 - r * r))
    return min(1.0, max(0.0, p))


def rank_features(windows: Sequence[FeatureWindow]) -> CorrelationReport:
    """Correlate every candidate feature with the windows' fuel labels.

    Rows are sorted by ``|PCC|`` descending. Features that are constant over
    the data, or missing from some window, are listed in ``skipped``.
    """
    labeled = [w for w in windows if w.fuel_l_per_100km is not None]
    if len(labeled) < 3:
        raise ValueError(f"need at least 3 fuel-labeled windows, got {len(labeled)}")
    fuel = np.array([w.fuel_l_per_100km for w in labeled])
    names = [f"{kind}_{sig}" for sig in CANDIDATE_SIGNALS for kind in ("mean", "var")]
    rows, skipped = [], []
    for name in names:
        try:
            col = np.array([_candidate(w, name) for w in labeled])
            r = pearson(col, fuel)
        except (KeyError, ValueError):
            skipped.append(name)
            continue
        rows.append(Correlation(name, r, pearson_p_value(r, len(labeled))))
    rows.sort(key=lambda c: -abs(c.pcc))
    return CorrelationReport(rows, len(labeled), skipped)


def _candidate(w: FeatureWindow, name: str) -> float:
    if name in w.candidates:
        return w.candidates[name]
    if name in FEATURE_NAMES:
        return getattr(w.vector, name)
    if name == "mean_vs":
        return w.mean_speed
    raise KeyError(f"window has no candidate feature {name!r}")


@dataclass(frozen=True)
class Scaler:
    """Per-feature min-max scaling onto ``[0, NORM_TOP]``."""

    min: tuple[float, ...]
    max: tuple[float, ...]

    @property
    def _lo(self) -> np.ndarray:
        return np.asarray(self.min, dtype=float)

    @property
    def _span(self) -> np.ndarray:
        return np.asarray(self.max, dtype=float) - self._lo

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self._lo) / self._span * NORM_TOP

    def inverse(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) / NORM_TOP * self._span + self._lo

    def transform_clamped(self, x) -> tuple[np.ndarray, bool]:
        """Scale and clamp into range; the flag reports whether clamping occurred."""
        z = self.transform(x)
        clamped = np.clip(z, 0.0, NORM_TOP)
        return clamped, bool(np.any(clamped != z))

    def to_dict(self) -> dict:
        return {"min": list(self.min), "max": list(self.max)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scaler":
        return cls(tuple(float(v) for v in d["min"]), tuple(float(v) for v in d["max"]))


def as_matrix(vectors: Iterable) -> np.ndarray:
    rows = [v.as_array() if isinstance(v, FeatureVector) else np.asarray(v, dtype=float) for v in vectors]
    return np.vstack(rows) if rows else np.empty((0, len(FEATURE_NAMES)))


def normalize_dataset(vectors) -> tuple[np.ndarray, Scaler]:
    """Min-max scale a dataset into ``[0, 1)`` per feature.

    The maximum of each feature maps to ``NORM_TOP`` (255/256), the largest
    value the accelerator's 8-bit fractional inputs can hold.
    """
    data = as_matrix(vectors)
    if len(data) < 2:
        raise ValueError("normalization needs at least 2 vectors")
    lo, hi = data.min(axis=0), data.max(axis=0)
    const = np.flatnonzero(hi <= lo)
    if const.size:
        raise ValueError(f"constant feature column(s): {const.tolist()}")
    scaler = Scaler(tuple(lo.tolist()), tuple(hi.tolist()))
    return scaler.transform(data), scaler


def write_windows(windows: Iterable[FeatureWindow], path: str | Path) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(WINDOW_CSV_HEADER)
        for win in windows:
            v = win.vector
            fuel = "" if win.fuel_l_per_100km is None else repr(win.fuel_l_per_100km)
            w.writerow([win.driver_id, win.start_index, repr(v.mean_pgp), repr(v.mean_erpm),
                        repr(v.mean_gp), repr(v.var_pos_xacc), repr(win.mean_speed), fuel])
            n += 1
    return n


def read_windows(path: str | Path, rate_hz: float = 32.0, window_size: int = WINDOW_SIZE) -> list[FeatureWindow]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in WINDOW_CSV_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        for i, row in enumerate(reader):
            try:
                vec = FeatureVector(*(float(row[k]) for k in FEATURE_NAMES))
                fuel = row["fuel_l100km"]
                start = int(row["start_index"])
                out.append(FeatureWindow(
                    driver_id=row["driver_id"], start_index=start,
                    span_s=window_size / rate_hz, vector=vec,
                    mean_speed=float(row["mean_speed"]),
                    fuel_l_per_100km=float(fuel) if fuel not in ("", None) else None,
                    t_start=start / rate_hz, window_size=window_size,
                ))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: row {i}: {exc}") from None
    return out
