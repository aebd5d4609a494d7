"""Seeded synthetic data: feature-space blobs and telemetry sessions of known style."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureVector, FeatureWindow
from .fuelmodel import VehicleParams
from .telemetry import TelemetrySession, from_arrays

# Blob centers in physical units (mean_pgp %, mean_erpm rpm, mean_gp, var_pos_xacc (m/s^2)^2),
# listed by ascending fuel consumption.
# The middle style revs high on a gentle pedal, so the three centers span a plane
# rather than a line a 2-D map would have to fold around.
CENTERS_3 = np.array([
    [15.0, 1500.0, 20.0, 0.03],
    [25.0, 3000.0, 30.0, 0.06],
    [60.0, 2600.0, 75.0, 0.30],
])
FUEL_3 = (2.8, 3.6, 5.2)

# The three thirstiest blobs sit close together so a coarser partition merges them.
CENTERS_5 = np.array([
    [12.0, 1400.0, 16.0, 0.02],
    [20.0, 2900.0, 24.0, 0.05],
    [45.0, 2000.0, 55.0, 0.18],
    [55.0, 2500.0, 68.0, 0.24],
    [62.0, 2150.0, 78.0, 0.32],
])
FUEL_5 = (2.75, 3.04, 4.44, 5.42, 7.81)

# per-feature blob spread as a fraction of the center range
BLOB_SPREAD = 0.025
FUEL_NOISE = 0.08


@dataclass
class BlobSet:
    windows: list[FeatureWindow]
    truth: np.ndarray          # blob index per window, ascending fuel
    centers: np.ndarray
    fuel: tuple[float, ...]

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([w.vector.as_array() for w in self.windows])


def blobs(centers, fuel, per_blob: int = 100, seed: int = 0, spread: float = BLOB_SPREAD) -> BlobSet:
    """Gaussian blobs around ``centers`` with per-window fuel labels near ``fuel``."""
    centers = np.asarray(centers, dtype=float)
    if len(fuel) != len(centers):
        raise ValueError("need one fuel level per center")
    if any(b <= a for a, b in zip(fuel, fuel[1:])):
        raise ValueError("fuel levels must increase with blob index")
    rng = np.random.default_rng(seed)
    sd = spread * (centers.max(axis=0) - centers.min(axis=0))
    windows, truth = [], []
    for k, c in enumerate(centers):
        pts = np.abs(c + rng.normal(size=(per_blob, len(c))) * sd)
        fuels = fuel[k] + FUEL_NOISE * rng.normal(size=per_blob)
        for j, (p, f) in enumerate(zip(pts, fuels)):
            windows.append(FeatureWindow(
                driver_id=f"blob{k}", start_index=128 * j, span_s=8.0,
                vector=FeatureVector.from_array(p), mean_speed=90.0,
                fuel_l_per_100km=float(max(f, 0.1)),
            ))
            truth.append(k)
    return BlobSet(windows, np.array(truth), centers, tuple(fuel))


def three_blobs(per_blob: int = 100, seed: int = 0) -> BlobSet:
    return blobs(CENTERS_3, FUEL_3, per_blob, seed)


def five_blobs(per_blob: int = 100, seed: int = 0) -> BlobSet:
    return blobs(CENTERS_5, FUEL_5, per_blob, seed)


@dataclass(frozen=True)
class DrivingStyle:
    """Highway cruise around ``cruise_kmh`` with periodic speed swings.

    Aggression comes from a lower gear (higher rpm), harder accelerations and
    a pedal that follows the acceleration demand more eagerly. The swing
    period divides the 8 s feature window so every window sees whole cycles.
    """

    name: str
    gear: int
    accel_amp: float       # m/s^2
    pedal_base: float
    pedal_gain: float
    cruise_kmh: float = 90.0
    period_s: float = 8.0


STYLES = (
    DrivingStyle("eco", gear=5, accel_amp=0.10, pedal_base=16.0, pedal_gain=6.0),
    DrivingStyle("revving", gear=4, accel_amp=0.20, pedal_base=22.0, pedal_gain=8.0),
    DrivingStyle("brisk", gear=4, accel_amp=0.60, pedal_base=34.0, pedal_gain=14.0),
    DrivingStyle("pushy", gear=3, accel_amp=0.90, pedal_base=44.0, pedal_gain=18.0),
    DrivingStyle("aggressive", gear=3, accel_amp=1.40, pedal_base=54.0, pedal_gain=22.0),
)
SMOOTH = STYLES[0]
AGGRESSIVE = STYLES[-1]


def style_session(style: DrivingStyle, duration_s: float = 300.0, seed: int = 0,
                  params: VehicleParams | None = None, driver_id: str | None = None,
                  session_id: str = "s0", rate_hz: float = 32.0) -> TelemetrySession:
    """A session whose channels are mutually consistent for ``style``.

    Speed is a slow drift plus a two-tone swing around the cruise speed;
    acceleration is its exact derivative plus sensor noise; engine speed
    follows the gear ratio within half a percent so gear inference locks on.
    """
    params = params or VehicleParams()
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz
    w1 = 2 * np.pi / style.period_s
    w2 = 2 * w1
    w0 = 2 * np.pi / 120.0
    p0, p1, p2 = rng.uniform(0, 2 * np.pi, size=3)
    a1 = style.accel_amp * 3.6 / w1          # km/h swing giving the target acceleration
    a2 = 0.25 * a1
    a0 = 3.0
    vs = (style.cruise_kmh + a0 * np.sin(w0 * t + p0) + a1 * np.sin(w1 * t + p1)
          + a2 * np.sin(w2 * t + p2))
    dvdt = a0 * w0 * np.cos(w0 * t + p0) + a1 * w1 * np.cos(w1 * t + p1) + a2 * w2 * np.cos(w2 * t + p2)
    xacc = dvdt / 3.6 + 0.03 * rng.normal(size=n)
    kmh_per_rpm = params.kmh_per_rpm[style.gear - 1]
    erpm = vs / kmh_per_rpm * (1.0 + 0.004 * rng.normal(size=n))
    pgp = np.clip(style.pedal_base + style.pedal_gain * xacc + 1.5 * rng.normal(size=n), 0.0, 100.0)
    gp = np.maximum(1.2 * pgp + 2.0 * rng.normal(size=n), 0.0)
    bp = np.where(xacc < -0.6, 40.0 * (-xacc - 0.6), 0.0)
    swa = 2.0 * rng.normal(size=n)
    return from_arrays(driver_id or style.name, session_id, t, rate_hz=rate_hz,
                       vs=vs, pgp=pgp, erpm=erpm, gp=gp, bp=bp, xacc=xacc, swa=swa)


def fleet(sessions_per_style: int = 2, duration_s: float = 300.0, seed: int = 0,
          styles=STYLES, params: VehicleParams | None = None) -> list[TelemetrySession]:
    """Training sessions covering every style; one driver id per style."""
    out = []
    for k, style in enumerate(styles):
        for j in range(sessions_per_style):
            out.append(style_session(style, duration_s, seed=seed * 1000 + 10 * k + j, params=params,
                                     driver_id=f"D{k + 1}", session_id=f"{style.name}-{j}"))
    return out
