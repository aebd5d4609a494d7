"""Sequential self-organizing map on a hexagonal grid.

Neurons are indexed row-major (``i = row * cols + col``). That order is kept
in the model file and reused as the accelerator's ROM addressing.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .features import Scaler

MODEL_VERSION = 1
DEFAULT_ROWS = DEFAULT_COLS = 11

_SQRT3_2 = math.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class TrainSchedule:
    alpha0: float = 0.5
    T: int = 1000
    sigma0: float = 5.5
    sigma_final: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha0 <= 1.0:
            raise ValueError("alpha0 must lie in (0, 1]")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if not self.sigma0 >= self.sigma_final > 0:
            raise ValueError("need sigma0 >= sigma_final > 0")

    @classmethod
    def default(cls, rows: int, cols: int, n_samples: int, seed: int = 0) -> "TrainSchedule":
        """alpha0 = 0.5, sigma from half the grid's longer side to 0.5, T = 200 K."""
        return cls(alpha0=0.5, T=200 * n_samples, sigma0=max(max(rows, cols) / 2.0, 0.5),
                   sigma_final=0.5, seed=seed)

    def sigma(self, n: float) -> float:
        """Neighborhood radius; held at ``sigma_final`` past the end of the schedule."""
        if self.T == 0:
            return self.sigma0
        return self.sigma0 * (self.sigma_final / self.sigma0) ** min(n / self.T, 1.0)


def hex_positions(rows: int, cols: int) -> np.ndarray:
    """Planar coordinates of a ``rows x cols`` hexagonal grid, unit neighbor spacing.

    Odd rows are shifted right by half a column.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid needs at least one row and one column")
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.column_stack([c + 0.5 * (r % 2), r * _SQRT3_2])


def hex_neighbors(rows: int, cols: int) -> list[list[int]]:
    """Immediate (unit-distance) neighbors of every neuron, ascending index."""
    pos = hex_positions(rows, cols)
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    adj = np.abs(d2 - 1.0) < 1e-9
    return [np.flatnonzero(row).tolist() for row in adj]


@dataclass(eq=False)
class SomModel:
    rows: int
    cols: int
    weights: np.ndarray
    scaler: Scaler | None = None
    schedule: TrainSchedule | None = None
    seed: int | None = None
    grid_pos: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.rows * self.cols:
            raise ValueError(f"weights shape {self.weights.shape} does not fit a {self.rows}x{self.cols} grid")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")
        self.grid_pos = hex_positions(self.rows, self.cols)
        self._grid_d2 = None

    @property
    def n_neurons(self) -> int:
        return self.rows * self.cols

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[1]

    @property
    def grid_d2(self) -> np.ndarray:
        """Squared grid distance between every pair of neurons."""
        if self._grid_d2 is None:
            diff = self.grid_pos[:, None, :] - self.grid_pos[None, :, :]
            self._grid_d2 = (diff ** 2).sum(-1)
        return self._grid_d2

    def copy(self) -> "SomModel":
        return SomModel(self.rows, self.cols, self.weights.copy(), self.scaler, self.schedule, self.seed)

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "grid": {"rows": self.rows, "cols": self.cols, "layout": "hex"},
            "n_inputs": self.n_inputs,
            "weights": self.weights.tolist(),
            "scaler": self.scaler.to_dict() if self.scaler else None,
            "schedule": asdict(self.schedule) if self.schedule else None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SomModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        grid = d["grid"]
        if grid.get("layout", "hex") != "hex":
            raise ValueError(f"unsupported grid layout {grid.get('layout')!r}")
        weights = np.asarray(d["weights"], dtype=float)
        if weights.shape[1:] != (d["n_inputs"],):
            raise ValueError("weights do not match n_inputs")
        return cls(grid["rows"], grid["cols"], weights,
                   Scaler.from_dict(d["scaler"]) if d.get("scaler") else None,
                   TrainSchedule(**d["schedule"]) if d.get("schedule") else None,
                   d.get("seed"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SomModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_dataset(dataset) -> np.ndarray:
    data = np.atleast_2d(np.asarray(dataset, dtype=float))
    if data.size == 0:
        raise ValueError("empty dataset")
    return data


def init_random(dataset, rows: int = DEFAULT_ROWS, cols: int = DEFAULT_COLS, seed: int = 0,
                rng: np.random.Generator | None = None) -> SomModel:
    """Initialize every neuron with a dataset sample drawn uniformly with replacement.

    Draws ``rows * cols`` indices in one call from ``numpy.random.default_rng(seed)``
    (PCG64) unless a generator is supplied.
    """
    data = _as_dataset(dataset)
    rng = np.random.default_rng(seed) if rng is None else rng
    idx = rng.integers(0, len(data), size=rows * cols)
    return SomModel(rows, cols, data[idx].copy(), seed=seed)


def euclidean_sq(x, m) -> float:
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    if x.shape != m.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {m.shape}")
    d = x - m
    return float(d @ d)


def distances_sq(model: SomModel, x) -> np.ndarray:
    d = model.weights - np.asarray(x, dtype=float)
    return np.einsum("ij,ij->i", d, d)


def find_bmu(model: SomModel, x) -> tuple[int, float]:
    """Best matching unit and its squared distance; ties go to the lowest index."""
    d = distances_sq(model, x)
    c = int(np.argmin(d))
    return c, float(d[c])


def bmu_indices(model: SomModel, dataset, chunk: int = 4096) -> np.ndarray:
    """BMU index of every row of ``dataset`` (same tie rule as :func:`find_bmu`)."""
    data = _as_dataset(dataset)
    out = np.empty(len(data), dtype=np.int64)
    for s in range(0, len(data), chunk):
        d = model.weights[None, :, :] - data[s:s + chunk, None, :]
        out[s:s + chunk] = np.argmin(np.einsum("kij,kij->ki", d, d), axis=1)
    return out


def neighborhood(model: SomModel, c: int, i: int, sigma: float) -> float:
    """Gaussian kernel over the grid distance between neurons ``c`` and ``i``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return math.exp(-float(model.grid_d2[c, i]) / (2.0 * sigma * sigma))


def learning_rate(n: float, schedule: TrainSchedule) -> float:
    if n < 0:
        raise ValueError("iteration index must be non-negative")
    if schedule.T == 0:
        return schedule.alpha0
    return schedule.alpha0 * math.exp(-n / schedule.T)


def _pull(grid_row: np.ndarray, n: int, schedule: TrainSchedule) -> np.ndarray:
    sigma = schedule.sigma(n)
    return learning_rate(n, schedule) * np.exp(grid_row * (-0.5 / (sigma * sigma)))


def train_step(model: SomModel, x, n: int, schedule: TrainSchedule) -> SomModel:
    """One competition/cooperation/adaptation step; updates ``model`` in place."""
    x = np.asarray(x, dtype=float)
    c, _ = find_bmu(model, x)
    model.weights -= _pull(model.grid_d2[c], n, schedule)[:, None] * (model.weights - x)
    return model


def train(dataset, rows: int = DEFAULT_ROWS, cols: int = DEFAULT_COLS,
          schedule: TrainSchedule | None = None, scaler: Scaler | None = None) -> SomModel:
    """Random-sample sequential training for ``schedule.T`` iterations.

    RNG contract: one ``default_rng(schedule.seed)`` generator supplies the
    ``rows * cols`` initialization indices first, then ``T`` sample indices in a
    single draw.
    """
    data = _as_dataset(dataset)
    if schedule is None:
        schedule = TrainSchedule.default(rows, cols, len(data))
    rng = np.random.default_rng(schedule.seed)
    model = init_random(data, rows, cols, rng=rng)
    model.seed = schedule.seed
    model.schedule = schedule
    model.scaler = scaler
    order = rng.integers(0, len(data), size=schedule.T)
    w = model.weights
    grid_d2 = model.grid_d2
    for n, k in enumerate(order):
        x = data[k]
        d = w - x
        c = int(np.argmin(np.einsum("ij,ij->i", d, d)))
        w -= _pull(grid_d2[c], n, schedule)[:, None] * d
    return model


def quantization_error(model: SomModel, dataset) -> float:
    """Mean (non-squared) distance from each sample to its BMU weight."""
    data = _as_dataset(dataset)
    idx = bmu_indices(model, data)
    return float(np.linalg.norm(data - model.weights[idx], axis=1).mean())
