"""Cycle-accurate, bit-exact model of the fixed-point SOM inference core.

Data path per inference, one register stage per clock edge:

    launch      input registers latch the N Q0.8 features          (1 cycle)
    distance    per-neuron difference, then square                  (2 cycles)
    adder       pairwise tree sum of the N squares                  (ceil(log2 N))
    comparer    recursive tree over ceil(M/2) registers             (ceil(log2 M))

The comparer's first round (``ini`` low) reads the neuron outputs directly,
so the hand-off into the comparer registers shares a cycle with the first
comparison. Total latency is ``3 + ceil(log2 N) + ceil(log2 M)``.
"""

from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .somanalysis import ClusterMap
from .somcore import SomModel, find_bmu

INPUT_BITS = 8
SCALE = 1 << INPUT_BITS          # Q0.8: k / 256
Q_MAX = SCALE - 1

ROM_MAGIC = b"SOMA"
ROM_VERSION = 1
_ROM_HEADER = struct.Struct(">4sHHH")   # magic, version, N, M (big-endian)


class ProtocolError(RuntimeError):
    """Control-signal sequence the hardware does not support."""


class Phase(enum.Enum):
    IDLE = "idle"
    DISTANCING = "distancing"
    COMPARING = "comparing"
    DONE = "done"


def ceil_log2(n: int) -> int:
    if n < 1:
        raise ValueError("ceil_log2 needs n >= 1")
    return (n - 1).bit_length()


def tree_adder_cycles(n_inputs: int) -> int:
    return ceil_log2(n_inputs)


def latency_cycles(n_inputs: int, n_neurons: int) -> int:
    """Closed-form latency from ``launch`` to a valid result."""
    return 3 + ceil_log2(n_inputs) + ceil_log2(n_neurons)


@dataclass(frozen=True)
class FixedConfig:
    n_inputs: int
    n_neurons: int
    input_bits: int = INPUT_BITS
    diff_sq_bits: int = 2 * INPUT_BITS

    @property
    def accum_bits(self) -> int:
        return self.diff_sq_bits + ceil_log2(self.n_inputs)

    @property
    def index_bits(self) -> int:
        return ceil_log2(self.n_neurons)

    @property
    def max_distance(self) -> int:
        """Largest reachable accumulator value, ``N * 255**2``."""
        return self.n_inputs * Q_MAX * Q_MAX

    @property
    def neutral_distance(self) -> int:
        """All-ones accumulator word used to fill idle comparer slots."""
        return (1 << self.accum_bits) - 1

    @property
    def neutral_index(self) -> int:
        return (1 << max(self.index_bits, 1)) - 1

    @property
    def comparer_slots(self) -> int:
        return (self.n_neurons + 1) // 2

    def check(self) -> None:
        if self.max_distance > self.neutral_distance:
            raise OverflowError(f"{self.accum_bits}-bit accumulator cannot hold {self.max_distance}")


def quantize(v) -> np.ndarray:
    """Round normalized values onto the Q0.8 grid (nearest, ties away from zero).

    Values at or above 255.5/256 saturate to 255; the normalized feature
    range tops out at 255/256, so in practice the error stays within 1/512.
    """
    v = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v < 0.0) or np.any(v >= 1.0):
        raise ValueError("Q0.8 inputs must lie in [0, 1)")
    k = np.floor(v * SCALE + 0.5)
    return np.minimum(k, Q_MAX).astype(np.int64)


def dequantize(q) -> np.ndarray:
    return np.asarray(q, dtype=float) / SCALE


def neuron_distance_fixed(x, w) -> int:
    """Exact squared Euclidean distance of two Q0.8 vectors, in LSB^2 units."""
    x = [int(a) for a in x]
    w = [int(b) for b in w]
    if len(x) != len(w):
        raise ValueError("dimension mismatch")
    return int(sum((a - b) * (a - b) for a, b in zip(x, w)))


def _pair_sum(level: np.ndarray) -> np.ndarray:
    # one adder-tree level over the last axis; an odd tail passes through
    width = level.shape[-1]
    half = width // 2
    out = level[..., 0:2 * half:2] + level[..., 1:2 * half:2]
    if width % 2:
        out = np.concatenate([out, level[..., -1:]], axis=-1)
    return out


class TreeComparer:
    """Recursive minimum search over ``ceil(M/2)`` compare-and-store registers.

    A comparison keeps the left operand unless the right one is strictly
    smaller, so ties resolve to the lowest neuron index.
    """

    def __init__(self, n_values: int, neutral_value, neutral_index: int, dtype=np.int64):
        self.n_values = n_values
        self.n_slots = max(1, (n_values + 1) // 2)
        self.neutral_value = neutral_value
        self.neutral_index = neutral_index
        self.dtype = dtype
        self.reset()

    def reset(self) -> None:
        self.values = np.full(self.n_slots, self.neutral_value, dtype=self.dtype)
        self.indices = np.full(self.n_slots, self.neutral_index, dtype=np.int64)
        self.live = 0
        self.rounds = 0

    @property
    def loaded(self) -> bool:
        return self.live > 0

    @property
    def done(self) -> bool:
        return self.live == 1

    def _compare(self, vals: np.ndarray, idxs: np.ndarray) -> None:
        if len(vals) % 2:
            vals = np.append(vals, np.array([self.neutral_value], dtype=self.dtype))
            idxs = np.append(idxs, self.neutral_index)
        left_v, right_v = vals[0::2], vals[1::2]
        left_i, right_i = idxs[0::2], idxs[1::2]
        take_right = right_v < left_v
        n = len(left_v)
        self.values[:n] = np.where(take_right, right_v, left_v)
        self.indices[:n] = np.where(take_right, right_i, left_i)
        self.values[n:] = self.neutral_value
        self.indices[n:] = self.neutral_index
        self.live = n
        self.rounds += 1

    def load(self, values: np.ndarray, indices: np.ndarray | None = None) -> None:
        """First round: pairwise minima of the raw inputs into the registers."""
        values = np.asarray(values, dtype=self.dtype)
        if len(values) != self.n_values:
            raise ValueError(f"expected {self.n_values} values, got {len(values)}")
        indices = np.arange(self.n_values) if indices is None else np.asarray(indices, dtype=np.int64)
        self.rounds = 0
        if self.n_values == 1:
            self.values[0], self.indices[0] = values[0], indices[0]
            self.live = 1
            return
        self._compare(values, indices)

    def recurse(self) -> None:
        if not self.loaded:
            raise ProtocolError("comparer registers are empty")
        if self.live > 1:
            self._compare(self.values[:self.live].copy(), self.indices[:self.live].copy())

    @property
    def result(self) -> tuple[int, object]:
        return int(self.indices[0]), self.values[0]


def recursive_tree_compare(distances: Sequence, indices: Sequence[int] | None = None) -> tuple[int, int]:
    """Index of the minimum (lowest index on ties) and the number of rounds used."""
    values = np.asarray(distances)
    m = len(values)
    if m < 1:
        raise ValueError("need at least one value")
    if np.issubdtype(values.dtype, np.integer):
        dtype, neutral = np.int64, np.iinfo(np.int64).max
    else:
        dtype, neutral = float, math.inf
    idx = np.arange(m) if indices is None else np.asarray(indices, dtype=np.int64)
    comp = TreeComparer(m, neutral, m if indices is None else int(idx.max()) + 1, dtype)
    comp.load(values.astype(dtype), idx)
    while not comp.done:
        comp.recurse()
    return comp.result[0], comp.rounds


@dataclass
class InferenceResult:
    bmu_index: int
    bmu_distance: int        # accumulator value, LSB^2 = 2**-16
    cluster_id: int
    cycles_elapsed: int

    @property
    def distance(self) -> float:
        return self.bmu_distance / float(SCALE * SCALE)


@dataclass
class TraceRow:
    cycle: int
    phase: str
    rst: int
    launch: int
    ini: int
    done: int
    bmu_candidate: int | None


class AccelCore:
    """Register-level state of one accelerator instance.

    Drive it with :meth:`write_inputs` (the bus write into the input
    registers' D side) and :meth:`step`, one call per rising clock edge.
    A single instance is not safe for concurrent use.
    """

    def __init__(self, n_inputs: int, n_neurons: int, weight_rom=None, cluster_rom=None, trace: bool = False):
        self.config = FixedConfig(n_inputs, n_neurons)
        self.config.check()
        self.weight_rom: np.ndarray | None = None
        self.cluster_rom: np.ndarray | None = None
        self.tracing = trace
        self.trace: list[TraceRow] = []
        self.comparer = TreeComparer(n_neurons, self.config.neutral_distance, self.config.neutral_index)
        self._bus = np.zeros(n_inputs, dtype=np.int64)
        if weight_rom is not None:
            self.load_roms(weight_rom, cluster_rom)
        self._clear()

    @property
    def n_inputs(self) -> int:
        return self.config.n_inputs

    @property
    def n_neurons(self) -> int:
        return self.config.n_neurons

    @property
    def loaded(self) -> bool:
        return self.weight_rom is not None

    def load_roms(self, weight_rom, cluster_rom) -> None:
        if self.loaded:
            raise ProtocolError("ROMs are already initialized")
        w = np.asarray(weight_rom, dtype=np.int64)
        c = np.asarray(cluster_rom, dtype=np.int64)
        if w.shape != (self.n_neurons, self.n_inputs):
            raise ValueError(f"weight ROM shape {w.shape} != ({self.n_neurons}, {self.n_inputs})")
        if c.shape != (self.n_neurons,):
            raise ValueError(f"cluster ROM depth {c.shape} != ({self.n_neurons},)")
        if w.min(initial=0) < 0 or w.max(initial=0) > Q_MAX:
            raise ValueError("weight ROM words must be 8-bit unsigned")
        if c.min(initial=0) < 0 or c.max(initial=0) > 255:
            raise ValueError("cluster ids must fit one byte")
        w.setflags(write=False)
        c.setflags(write=False)
        self.weight_rom, self.cluster_rom = w, c

    def _clear(self) -> None:
        self.phase = Phase.IDLE
        self.cycle = 0
        self.input_regs = np.zeros(self.n_inputs, dtype=np.int64)
        self._stage = None
        self._level = None           # current (M, width) register bank of the distance pipeline
        self.distances = None
        self.comparer.reset()
        self.result: InferenceResult | None = None

    @property
    def done(self) -> bool:
        return self.phase is Phase.DONE

    def write_inputs(self, q) -> None:
        q = np.asarray(q, dtype=np.int64)
        if q.shape != (self.n_inputs,):
            raise ValueError(f"expected {self.n_inputs} inputs, got shape {q.shape}")
        if q.min() < 0 or q.max() > Q_MAX:
            raise ValueError("inputs must be Q0.8 words")
        self._bus = q.copy()

    def step(self, rst: bool = False, launch: bool = False, ini: bool = False) -> "AccelCore":
        """Advance one clock edge under the given control levels.

        ``rst`` wins over everything and returns the core to idle with a zero
        cycle counter. ``launch`` is only legal when idle after a reset.
        ``ini`` selects the comparer input: low loads the neuron outputs
        (first round), high recurses over its own registers. It is ignored
        while the distance pipeline is still filling.
        """
        if rst:
            self._clear()
        elif launch:
            if self.phase is not Phase.IDLE:
                raise ProtocolError(f"launch while {self.phase.value}; assert rst first")
            if not self.loaded:
                raise ProtocolError("launch on a core without ROM contents")
            self.input_regs = self._bus.copy()
            self._stage = "load"
            self.phase = Phase.DISTANCING
            self.cycle = 1
        elif self.phase is Phase.DISTANCING:
            self.cycle += 1
            self._advance_distance()
        elif self.phase is Phase.COMPARING:
            self.cycle += 1
            if not ini:
                self.comparer.load(self.distances)
            else:
                self.comparer.recurse()
            if self.comparer.done:
                self._finish(*self.comparer.result)
        if self.tracing:
            self._record(rst, launch, ini)
        return self

    def _advance_distance(self) -> None:
        if self._stage == "load":
            self._level = self.input_regs[None, :] - self.weight_rom       # 9-bit signed
            self._stage = "diff"
            return
        if self._stage == "diff":
            self._level = self._level * self._level                         # 16-bit unsigned
            self._stage = "adder"
        else:
            self._level = _pair_sum(self._level)
        if self._level.shape[1] == 1:
            self.distances = self._level[:, 0].copy()
            self._stage = None
            if self.n_neurons == 1:
                self._finish(0, self.distances[0])
            else:
                self.phase = Phase.COMPARING

    def _finish(self, index: int, distance) -> None:
        self.phase = Phase.DONE
        self.result = InferenceResult(int(index), int(distance), int(self.cluster_rom[index]), self.cycle)

    def _record(self, rst, launch, ini) -> None:
        cand = None
        if self.result is not None:
            cand = self.result.bmu_index
        elif self.comparer.loaded:
            cand = int(self.comparer.indices[0])
        self.trace.append(TraceRow(self.cycle, self.phase.value, int(rst), int(launch), int(ini),
                                   int(self.done), cand))

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("cycle", "phase", "rst", "launch", "ini", "done", "bmu_candidate"))
            for r in self.trace:
                w.writerow((r.cycle, r.phase, r.rst, r.launch, r.ini, r.done,
                            "" if r.bmu_candidate is None else r.bmu_candidate))

    # ROM image: header, M*N weight bytes (neuron-major), M cluster-id bytes
    def rom_image(self) -> bytes:
        if not self.loaded:
            raise ProtocolError("core has no ROM contents")
        return (_ROM_HEADER.pack(ROM_MAGIC, ROM_VERSION, self.n_inputs, self.n_neurons)
                + self.weight_rom.astype(np.uint8).tobytes(order="C")
                + self.cluster_rom.astype(np.uint8).tobytes())

    @classmethod
    def from_rom_image(cls, blob: bytes, trace: bool = False) -> "AccelCore":
        if len(blob) < _ROM_HEADER.size:
            raise ValueError("truncated ROM image")
        magic, version, n, m = _ROM_HEADER.unpack_from(blob)
        if magic != ROM_MAGIC:
            raise ValueError(f"bad ROM magic {magic!r}")
        if version != ROM_VERSION:
            raise ValueError(f"unsupported ROM version {version}")
        body = blob[_ROM_HEADER.size:]
        if len(body) != m * n + m:
            raise ValueError(f"ROM body is {len(body)} bytes, expected {m * n + m}")
        w = np.frombuffer(body[:m * n], dtype=np.uint8).reshape(m, n)
        c = np.frombuffer(body[m * n:], dtype=np.uint8)
        return cls(n, m, w, c, trace=trace)


def load_model(model: SomModel, clustermap: ClusterMap, trace: bool = False) -> AccelCore:
    """Quantize a trained map and its cluster assignment into a new core."""
    w = model.weights
    if np.any(w < 0.0) or np.any(w >= 1.0):
        raise ValueError("model weights must lie in [0, 1) to be stored as Q0.8")
    assignment = np.asarray(clustermap.assignment)
    if assignment.shape != (model.n_neurons,):
        raise ValueError(f"cluster map covers {assignment.shape[0]} neurons, model has {model.n_neurons}")
    if np.any(assignment < 0):
        raise ValueError(f"unassigned neuron(s): {np.flatnonzero(assignment < 0).tolist()}")
    return AccelCore(model.n_inputs, model.n_neurons, quantize(w), assignment, trace=trace)


def run_inference(core: AccelCore, x) -> InferenceResult:
    """Drive rst, launch and ini through one classification and return the result."""
    if not core.loaded:
        raise ProtocolError("core has no ROM contents")
    q = quantize(x)
    core.step(rst=True)
    core.write_inputs(q)
    core.step(launch=True)
    while core.phase is Phase.DISTANCING:
        core.step()
    if not core.done:
        core.step(ini=False)
    while not core.done:
        core.step(ini=True)
    return core.result


def quantization_bound(n_inputs: int) -> float:
    """Worst-case change of any Euclidean distance caused by Q0.8 rounding.

    Both the input and the weight move by at most 1/512 per coordinate, so a
    distance moves by at most ``2 * sqrt(N) / 512``; a BMU is preserved when
    the float gap between the two nearest neurons exceeds twice that.
    """
    return 4.0 * math.sqrt(n_inputs) / (2 * SCALE)


@dataclass
class CrosscheckRow:
    float_bmu: int
    fixed_bmu: int
    float_cluster: int
    fixed_cluster: int
    margin: float
    guaranteed: bool

    @property
    def agree(self) -> bool:
        return self.float_bmu == self.fixed_bmu

    @property
    def cluster_agree(self) -> bool:
        return self.float_cluster == self.fixed_cluster


@dataclass
class CrosscheckReport:
    bound: float
    rows: list[CrosscheckRow] = field(default_factory=list)
    cycles: set[int] = field(default_factory=set)

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def guaranteed(self) -> list[CrosscheckRow]:
        return [r for r in self.rows if r.guaranteed]

    @property
    def guaranteed_agreement(self) -> float:
        g = self.guaranteed
        return 1.0 if not g else sum(r.agree and r.cluster_agree for r in g) / len(g)

    @property
    def disagreements(self) -> list[tuple[int, CrosscheckRow]]:
        return [(i, r) for i, r in enumerate(self.rows) if not (r.agree and r.cluster_agree)]

    def summary(self) -> dict:
        return {
            "inputs": self.n,
            "bound": self.bound,
            "above_bound": len(self.guaranteed),
            "bmu_agreement": sum(r.agree for r in self.rows) / self.n if self.n else 1.0,
            "cluster_agreement": sum(r.cluster_agree for r in self.rows) / self.n if self.n else 1.0,
            "agreement_above_bound": self.guaranteed_agreement,
            "disagreements": [{"input": i, "float_bmu": r.float_bmu, "fixed_bmu": r.fixed_bmu,
                               "margin": r.margin, "above_bound": r.guaranteed}
                              for i, r in self.disagreements],
            "cycles": sorted(self.cycles),
        }


def crosscheck_float(core: AccelCore, model: SomModel, clustermap: ClusterMap,
                     inputs: Iterable) -> CrosscheckReport:
    """Compare fixed-point and floating-point classification of normalized inputs.

    Every disagreement is kept in the report; rows whose float top-2 margin
    exceeds :func:`quantization_bound` are flagged as guaranteed to agree.
    """
    half_lsb = 0.5 / SCALE
    w_err = float(np.abs(dequantize(core.weight_rom) - model.weights).max())
    bound = max(quantization_bound(model.n_inputs),
                2.0 * math.sqrt(model.n_inputs) * (half_lsb + w_err))
    report = CrosscheckReport(bound)
    assignment = clustermap.assignment
    for x in inputs:
        x = np.asarray(x, dtype=float)
        d = np.sqrt(((model.weights - x) ** 2).sum(axis=1))
        c, _ = find_bmu(model, x)
        margin = float(np.partition(d, 1)[1] - d[c]) if len(d) > 1 else math.inf
        # saturated inputs break the half-LSB rounding assumption
        exact_rounding = bool(np.all(np.abs(dequantize(quantize(x)) - x) <= half_lsb))
        res = run_inference(core, x)
        report.cycles.add(res.cycles_elapsed)
        report.rows.append(CrosscheckRow(c, res.bmu_index, int(assignment[c]), res.cluster_id,
                                         margin, exact_rounding and margin > bound))
    return report
