"""Telemetry ingestion, resampling and speed-based segment selection.

Sessions are stored column-wise (one numpy array per channel) and treated as
immutable once built.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

#: Channels carried by every session, in CSV order.
CHANNELS = ("vs", "pgp", "erpm", "gp", "bp", "xacc", "swa")

#: Default CSV header for each logical field.
DEFAULT_SCHEMA = {
    "t": "t_s",
    "vs": "vs_kmh",
    "pgp": "pgp_pct",
    "erpm": "erpm",
    "gp": "gp_raw",
    "bp": "bp_raw",
    "xacc": "xacc_ms2",
    "swa": "swa_deg",
    "driver_id": "driver_id",
    "session_id": "session_id",
}

CSV_HEADER = tuple(DEFAULT_SCHEMA.values())

# swa is carried but never used downstream, so it may be absent.
_OPTIONAL = frozenset({"swa", "driver_id", "session_id"})

DEFAULT_RATE_HZ = 32.0


class TelemetryError(ValueError):
    """Raised for malformed or inconsistent telemetry input."""


@dataclass(frozen=True)
class TelemetrySample:
    t: float
    vs: float
    pgp: float
    erpm: float
    gp: float
    bp: float
    xacc: float
    swa: float = 0.0


@dataclass(frozen=True, eq=False)
class TelemetrySession:
    """A time-ordered, single-driver recording.

    All channel arrays share the length of ``t``. ``rate_hz`` is the nominal
    sampling rate; after :func:`resample` the spacing is exactly ``1/rate_hz``.
    """

    driver_id: str
    session_id: str
    rate_hz: float
    t: np.ndarray
    vs: np.ndarray
    pgp: np.ndarray
    erpm: np.ndarray
    gp: np.ndarray
    bp: np.ndarray
    xacc: np.ndarray
    swa: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.t)
        if self.swa is None:
            object.__setattr__(self, "swa", np.zeros(n))
        for name in ("t",) + CHANNELS:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise TelemetryError(f"channel {name!r} has shape {arr.shape}, expected ({n},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> Iterator[TelemetrySample]:
        for i in range(len(self)):
            yield self.sample(i)

    def sample(self, i: int) -> TelemetrySample:
        return TelemetrySample(float(self.t[i]), *(float(getattr(self, c)[i]) for c in CHANNELS))

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    def slice(self, start: int, stop: int) -> "TelemetrySession":
        return self.replace_channels(**{n: getattr(self, n)[start:stop] for n in ("t",) + CHANNELS})

    def replace_channels(self, rate_hz: float | None = None, **channels) -> "TelemetrySession":
        values = {n: getattr(self, n) for n in ("t",) + CHANNELS}
        values.update(channels)
        rate = self.rate_hz if rate_hz is None else rate_hz
        return TelemetrySession(self.driver_id, self.session_id, rate, **values)

    def channel_dict(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in ("t",) + CHANNELS}


def from_arrays(driver_id: str, session_id: str, t, rate_hz: float | None = None, **channels) -> TelemetrySession:
    """Build a session from raw arrays, checking the sample invariants."""
    t = np.asarray(t, dtype=float)
    missing = [c for c in CHANNELS if c not in channels and c not in _OPTIONAL]
    if missing:
        raise TelemetryError(f"missing mandatory channel(s): {', '.join(missing)}")
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        bad = int(np.argmax(np.diff(t) <= 0)) + 1
        raise TelemetryError(f"non-monotonic timestamps at sample {bad}")
    if rate_hz is None:
        rate_hz = estimate_rate(t)
    _check_ranges(channels)
    return TelemetrySession(driver_id, session_id, float(rate_hz), t, **channels)


def estimate_rate(t: np.ndarray) -> float:
    if len(t) < 2:
        return math.nan
    return float(1.0 / np.median(np.diff(t)))


def _check_ranges(channels: Mapping[str, np.ndarray]) -> None:
    for name, lo, hi in (("vs", 0, math.inf), ("erpm", 0, math.inf), ("pgp", 0, 100),
                         ("gp", 0, math.inf), ("bp", 0, math.inf)):
        arr = np.asarray(channels[name], dtype=float)
        bad = ~((arr >= lo) & (arr <= hi))
        if bad.any():
            i = int(np.argmax(bad))
            raise TelemetryError(f"sample {i}: {name}={arr[i]!r} outside [{lo}, {hi}]")


def parse_session(source: Iterable[Mapping[str, str]], schema: Mapping[str, str] | None = None,
                  driver_id: str | None = None, session_id: str | None = None) -> TelemetrySession:
    """Parse one session from an iterable of CSV-like row mappings.

    ``schema`` maps logical field names (``t``, ``vs``, ...) to column headers
    and defaults to :data:`DEFAULT_SCHEMA`. Unknown columns are ignored.
    Row indices in error messages are 0-based data rows.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    cols: dict[str, list[float]] = {k: [] for k in ("t",) + CHANNELS}
    ids: set[tuple[str, str]] = set()
    header_checked = False
    for idx, row in enumerate(source):
        if not header_checked:
            _check_header(row.keys(), schema)
            header_checked = True
        for name in cols:
            col = schema[name]
            raw = row.get(col)
            if raw is None or raw == "":
                if name in _OPTIONAL:
                    cols[name].append(0.0)
                    continue
                raise TelemetryError(f"row {idx}: empty value in column {col!r}")
            try:
                val = float(raw)
            except (TypeError, ValueError):
                raise TelemetryError(f"row {idx}: cannot parse {col}={raw!r}") from None
            if not math.isfinite(val):
                raise TelemetryError(f"row {idx}: non-finite {col}={raw!r}")
            cols[name].append(val)
        ids.add((row.get(schema["driver_id"]) or "", row.get(schema["session_id"]) or ""))
    if not header_checked:
        raise TelemetryError("no data rows")
    if len(ids) > 1 and (driver_id is None or session_id is None):
        raise TelemetryError(f"stream mixes {len(ids)} driver/session ids; use read_sessions")
    d_id, s_id = next(iter(ids))
    t = np.asarray(cols.pop("t"))
    diffs = np.diff(t)
    if np.any(diffs <= 0):
        bad = int(np.argmax(diffs <= 0)) + 1
        raise TelemetryError(f"non-monotonic timestamps at row {bad}")
    try:
        _check_ranges(cols)
    except TelemetryError as exc:
        raise TelemetryError(str(exc).replace("sample", "row", 1)) from None
    return TelemetrySession(driver_id or d_id, session_id or s_id, estimate_rate(t), t,
                            **{k: np.asarray(v) for k, v in cols.items()})


def _check_header(keys: Iterable[str], schema: Mapping[str, str]) -> None:
    present = set(k for k in keys if k is not None)
    missing = [schema[n] for n in ("t",) + CHANNELS if n not in _OPTIONAL and schema[n] not in present]
    if missing:
        raise TelemetryError(f"missing mandatory column(s): {', '.join(missing)}")


def read_sessions(path: str | Path | io.TextIOBase, schema: Mapping[str, str] | None = None) -> list[TelemetrySession]:
    """Read a telemetry CSV, returning one session per (driver_id, session_id) pair.

    Rows of each session keep their file order; the first occurrence order of
    the pairs decides the output order.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    if isinstance(path, (str, Path)):
        with open(path, newline="", encoding="utf-8") as fh:
            return read_sessions(fh, schema)
    reader = csv.DictReader(path)
    if reader.fieldnames is None:
        raise TelemetryError("empty telemetry file")
    _check_header(reader.fieldnames, schema)
    groups: dict[tuple[str, str], list[tuple[int, dict]]] = {}
    for idx, row in enumerate(reader):
        key = (row.get(schema["driver_id"]) or "", row.get(schema["session_id"]) or "")
        groups.setdefault(key, []).append((idx, row))
    if not groups:
        raise TelemetryError("no data rows")
    sessions = []
    for (d_id, s_id), rows in groups.items():
        try:
            sessions.append(parse_session((r for _, r in rows), schema, d_id, s_id))
        except TelemetryError as exc:
            raise TelemetryError(f"driver {d_id!r} session {s_id!r}: {_global_row(exc, rows)}") from None
    return sessions


def _global_row(exc: TelemetryError, rows: list[tuple[int, dict]]) -> str:
    # map a per-session row index back to the file's data-row index
    msg = str(exc)
    if msg.startswith("row "):
        head, _, rest = msg.partition(":")
        try:
            local = int(head.split()[1])
            return f"row {rows[local][0]}:{rest}"
        except (ValueError, IndexError):
            pass
    if "at row " in msg:
        local = int(msg.rsplit(" ", 1)[1])
        return msg.rsplit(" ", 1)[0] + f" {rows[local][0]}"
    return msg


def write_sessions(sessions: Iterable[TelemetrySession], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in sessions:
            for i in range(len(s)):
                w.writerow([repr(float(s.t[i]))] + [repr(float(getattr(s, c)[i])) for c in CHANNELS]
                           + [s.driver_id, s.session_id])


def resample(session: TelemetrySession, target_hz: float = DEFAULT_RATE_HZ) -> TelemetrySession:
    """Resample every channel onto a uniform ``target_hz`` grid.

    The session is taken to cover ``len(session)`` input periods, so the output
    has ``round(n_in * target_hz / rate_in)`` samples starting at the first
    timestamp. Channels are linearly interpolated; output instants past the last
    input sample hold its value. A session already uniform at ``target_hz`` is
    returned with identical values.
    """
    if target_hz <= 0:
        raise TelemetryError("target_hz must be positive")
    n = len(session)
    if n < 2:
        raise TelemetryError("cannot resample a session with fewer than 2 samples")
    t = session.t
    step = 1.0 / target_hz
    t0 = float(t[0])
    if np.allclose(np.diff(t), step, rtol=1e-9, atol=0.0):
        grid = t0 + np.arange(n) * step
        return session.replace_channels(t=grid, rate_hz=float(target_hz))
    rate_in = estimate_rate(t)
    covered = (t[-1] - t0) + 1.0 / rate_in
    n_out = max(2, int(round(covered * target_hz)))   # keep the output resamplable
    grid = t0 + np.arange(n_out) * step
    out = {c: np.interp(grid, t, getattr(session, c)) for c in CHANNELS}
    return session.replace_channels(t=grid, rate_hz=float(target_hz), **out)


def split_xacc(series) -> tuple[np.ndarray, np.ndarray]:
    """Split longitudinal acceleration into its positive and negative parts."""
    x = np.asarray(series, dtype=float)
    return np.maximum(x, 0.0), np.minimum(x, 0.0)


def window_starts(n: int, window_size: int, shift: int) -> range:
    """Start indices of the sliding-window grid over ``n`` samples."""
    if window_size <= 0 or not 0 < shift <= window_size:
        raise ValueError("need window_size > 0 and 0 < shift <= window_size")
    if n < window_size:
        return range(0)
    return range(0, (n - window_size) // shift * shift + 1, shift)


def filter_highspeed_segments(session: TelemetrySession, min_mean_speed: float = 60.0,
                              window_s: float = 8.0, shift_s: float | None = None) -> list[tuple[int, int]]:
    """Half-open index ranges where the windowed mean speed reaches the threshold.

    Mean speed is evaluated on the same window grid as feature extraction
    (``window_s`` long, ``shift_s`` apart, default half a window). Qualifying
    windows are merged when they are consecutive on that grid, so every
    window inside a returned range qualifies.
    """
    if min_mean_speed < 0:
        raise ValueError("min_mean_speed must be non-negative")
    size = int(round(window_s * session.rate_hz))
    shift = int(round((shift_s if shift_s is not None else window_s / 2) * session.rate_hz))
    ranges: list[tuple[int, int]] = []
    prev = None
    for start in window_starts(len(session), size, shift):
        if session.vs[start:start + size].mean() < min_mean_speed:
            continue
        if prev is not None and start - shift == prev:
            ranges[-1] = (ranges[-1][0], start + size)
        else:
            ranges.append((start, start + size))
        prev = start
    return ranges
