"""U-matrix clustering and fuel labeling of a trained map."""

from __future__ import annotations

import heapq
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import FeatureWindow, as_matrix
from .somcore import SomModel, bmu_indices, hex_neighbors

log = logging.getLogger(__name__)

CLUSTERMAP_VERSION = 1

LABELS = {
    3: ("Very low", "Low", "Medium-High"),
    5: ("Very low", "Low", "Medium", "High", "Very high"),
}

#: Starting U-matrix threshold fractions for the named schemes.
DEFAULT_THRESHOLDS = {3: 0.55, 5: 0.40}


class ClusteringError(ValueError):
    pass


def scheme_labels(k: int) -> tuple[str, ...]:
    """Label names for ``k`` clusters ordered by ascending consumption."""
    return LABELS.get(k) or tuple(f"Cluster {i + 1}" for i in range(k))


@dataclass
class UMatrix:
    values: np.ndarray           # per-neuron mean distance to its grid neighbors
    edges: np.ndarray            # (M, M) edge distances, NaN where not adjacent
    neighbors: list[list[int]]

    def edge(self, i: int, j: int) -> float:
        return float(self.edges[i, j])


@dataclass
class Cluster:
    id: int
    members: list[int]
    label: str = ""
    avg: float = float("nan")
    var: float = float("nan")
    max: float = float("nan")
    n_windows: int = 0


@dataclass
class ClusterMap:
    assignment: list[int]        # neuron -> cluster id
    clusters: list[Cluster]
    threshold: float
    eligible: list[bool] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.clusters)

    def cluster(self, cid: int) -> Cluster:
        for c in self.clusters:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def label_of_neuron(self, i: int) -> str:
        return self.cluster(self.assignment[i]).label

    def avg_by_label(self) -> dict[str, float]:
        return {c.label: c.avg for c in self.clusters}

    def to_dict(self) -> dict:
        return {
            "version": CLUSTERMAP_VERSION,
            "threshold": self.threshold,
            "assignment": list(self.assignment),
            "clusters": [{"id": c.id, "label": c.label, "avg": c.avg, "var": c.var, "max": c.max,
                          "n_windows": c.n_windows} for c in self.clusters],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterMap":
        if d.get("version") != CLUSTERMAP_VERSION:
            raise ValueError(f"unsupported cluster map version {d.get('version')!r}")
        assignment = [int(a) for a in d["assignment"]]
        clusters = []
        for c in d["clusters"]:
            members = [i for i, a in enumerate(assignment) if a == c["id"]]
            clusters.append(Cluster(int(c["id"]), members, c["label"], float(c["avg"]), float(c["var"]),
                                    float(c["max"]), int(c.get("n_windows", 0))))
        return cls(assignment, clusters, float(d["threshold"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ClusterMap":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def u_matrix(model: SomModel) -> UMatrix:
    nbrs = hex_neighbors(model.rows, model.cols)
    m = model.n_neurons
    edges = np.full((m, m), np.nan)
    values = np.zeros(m)
    w = model.weights
    for i, js in enumerate(nbrs):
        for j in js:
            if j > i:
                edges[i, j] = edges[j, i] = float(np.linalg.norm(w[i] - w[j]))
    for i, js in enumerate(nbrs):
        if js:
            values[i] = float(np.mean(edges[i, js]))
    return UMatrix(values, edges, nbrs)


def hit_histogram(model: SomModel, dataset) -> np.ndarray:
    data = np.atleast_2d(np.asarray(dataset, dtype=float))
    if data.size == 0:
        raise ValueError("empty dataset")
    return np.bincount(bmu_indices(model, data), minlength=model.n_neurons)


def _components(eligible: np.ndarray, nbrs: list[list[int]]) -> list[list[int]]:
    seen = np.zeros(len(eligible), dtype=bool)
    comps = []
    for s in range(len(eligible)):
        if not eligible[s] or seen[s]:
            continue
        seen[s] = True
        comp, queue = [], deque([s])
        while queue:
            i = queue.popleft()
            comp.append(i)
            for j in nbrs[i]:
                if eligible[j] and not seen[j]:
                    seen[j] = True
                    queue.append(j)
        comps.append(sorted(comp))
    return comps


def count_clusters(umatrix: UMatrix, threshold_fraction: float) -> int:
    top = umatrix.values.max()
    eligible = umatrix.values <= threshold_fraction * top if top > 0 else np.ones(len(umatrix.values), bool)
    return len(_components(eligible, umatrix.neighbors))


def threshold_clusters(model: SomModel, threshold_fraction: float, umatrix: UMatrix | None = None) -> ClusterMap:
    """Partition the map into connected low-U regions.

    Neurons whose U-value is at most ``threshold_fraction * max(U)`` seed
    clusters (connected components under hex adjacency). The remaining border
    neurons are grown onto adjacent clusters, always taking the globally
    cheapest (border, assigned-neighbor) weight distance next, so every
    cluster stays connected.
    """
    if not 0.0 < threshold_fraction <= 1.0:
        raise ValueError("threshold_fraction must lie in (0, 1]")
    um = umatrix if umatrix is not None else u_matrix(model)
    top = float(um.values.max())
    eligible = um.values <= threshold_fraction * top if top > 0 else np.ones(model.n_neurons, bool)
    comps = _components(eligible, um.neighbors)
    if not comps:
        raise ClusteringError(f"threshold {threshold_fraction} leaves no cluster-eligible neuron")
    assignment = np.full(model.n_neurons, -1)
    for cid, comp in enumerate(comps):
        assignment[comp] = cid
    w = model.weights
    heap: list[tuple[float, int, int]] = []

    def push_from(i: int) -> None:
        for j in um.neighbors[i]:
            if assignment[j] < 0:
                heapq.heappush(heap, (float(np.linalg.norm(w[i] - w[j])), j, i))

    for i in np.flatnonzero(assignment >= 0):
        push_from(int(i))
    while heap:
        _, j, i = heapq.heappop(heap)
        if assignment[j] >= 0:
            continue
        assignment[j] = assignment[i]
        push_from(j)
    if np.any(assignment < 0):
        # only reachable on a disconnected grid, which hex grids never are
        raise ClusteringError("unreachable neurons left unassigned")
    clusters = [Cluster(cid, comp_members(assignment, cid)) for cid in range(len(comps))]
    return ClusterMap(assignment.tolist(), clusters, float(threshold_fraction), eligible.tolist())


def comp_members(assignment: np.ndarray, cid: int) -> list[int]:
    return np.flatnonzero(np.asarray(assignment) == cid).tolist()


def threshold_candidates(umatrix: UMatrix) -> list[float]:
    """Distinct meaningful threshold fractions, descending (one per U-value level)."""
    top = float(umatrix.values.max())
    if top <= 0:
        return [1.0]
    return sorted({float(v) / top for v in umatrix.values if v > 0} | {1.0}, reverse=True)


def find_threshold(model: SomModel, n_clusters: int, start: float | None = None,
                   umatrix: UMatrix | None = None) -> float:
    """Largest threshold fraction (not above ``start``) giving exactly ``n_clusters`` regions.

    Candidate thresholds are the map's own U-value levels, swept downward;
    only the exact count is accepted.
    """
    um = umatrix if umatrix is not None else u_matrix(model)
    start = 1.0 if start is None else start
    for frac in threshold_candidates(um):
        if frac > start:
            continue
        if count_clusters(um, frac) == n_clusters:
            return frac
    raise ClusteringError(f"no U-matrix threshold at or below {start} yields {n_clusters} clusters")


def _window_matrix(model: SomModel, windows: Sequence[FeatureWindow]) -> np.ndarray:
    raw = as_matrix(w.vector for w in windows)
    if model.scaler is None:
        return raw
    return np.clip(model.scaler.transform(raw), 0.0, None)


def label_clusters(cmap: ClusterMap, windows: Sequence[FeatureWindow], model: SomModel,
                   strict: bool = True) -> ClusterMap:
    """Attach fuel statistics and consumption labels to every cluster.

    Windows reach clusters through their BMU. Clusters are renumbered by
    ascending average consumption (id 0 is the most economical) and named
    after the 3- or 5-cluster scheme, or ``Cluster k`` for other counts.
    """
    labeled = [w for w in windows if w.fuel_l_per_100km is not None]
    if not labeled:
        raise ClusteringError("no fuel-labeled windows")
    fuel = np.array([w.fuel_l_per_100km for w in labeled])
    bmus = bmu_indices(model, _window_matrix(model, labeled))
    cids = np.asarray(cmap.assignment)[bmus]
    stats = []
    for c in cmap.clusters:
        vals = fuel[cids == c.id]
        if vals.size == 0:
            if strict:
                raise ClusteringError(f"cluster {c.id} ({len(c.members)} neurons) received no windows")
            stats.append((c, float("inf"), float("nan"), float("nan"), 0))
            continue
        stats.append((c, float(vals.mean()), float(vals.var()), float(vals.max()), int(vals.size)))
    stats.sort(key=lambda s: (s[1], s[0].id))
    k = len(stats)
    if k not in LABELS:
        log.warning("%d clusters found; using generic labels", k)
    names = scheme_labels(k)
    remap = {c.id: new for new, (c, *_rest) in enumerate(stats)}
    assignment = [remap[a] for a in cmap.assignment]
    clusters = [Cluster(remap[c.id], comp_members(np.asarray(assignment), remap[c.id]), names[remap[c.id]],
                        avg, var, mx, n) for c, avg, var, mx, n in stats]
    return ClusterMap(assignment, clusters, cmap.threshold, list(cmap.eligible))


def classify_windows(cmap: ClusterMap, model: SomModel, windows: Sequence[FeatureWindow]) -> list[str]:
    if not windows:
        return []
    bmus = bmu_indices(model, _window_matrix(model, windows))
    return [cmap.label_of_neuron(int(b)) for b in bmus]


def distribution(labels: Sequence[str], order: Sequence[str]) -> dict[str, float]:
    """Percentage of ``labels`` falling on each label of ``order``."""
    n = len(labels)
    if n == 0:
        raise ValueError("distribution of zero windows")
    return {lab: 100.0 * sum(1 for x in labels if x == lab) / n for lab in order}


def driver_distribution(cmap: ClusterMap, model: SomModel, windows: Sequence[FeatureWindow]) -> dict[str, float]:
    """Share of a driver's windows classified into each labeled cluster, in percent."""
    if not windows:
        raise ValueError("driver has no windows")
    return distribution(classify_windows(cmap, model, windows), cmap.labels)


def cluster_scheme(model: SomModel, windows: Sequence[FeatureWindow], n_clusters: int,
                   threshold: float | None = None) -> ClusterMap:
    """Cluster and label ``model`` into ``n_clusters`` consumption classes.

    With ``threshold`` given the fraction is used as is; otherwise the largest
    fraction at or below the scheme default that yields exactly ``n_clusters``
    regions is searched, falling back to the full range.
    """
    um = u_matrix(model)
    if threshold is None:
        try:
            threshold = find_threshold(model, n_clusters, DEFAULT_THRESHOLDS.get(n_clusters, 1.0), um)
        except ClusteringError:
            threshold = find_threshold(model, n_clusters, 1.0, um)
    cmap = threshold_clusters(model, threshold, um)
    if cmap.n_clusters != n_clusters:
        log.warning("threshold %.3f gives %d clusters, expected %d", threshold, cmap.n_clusters, n_clusters)
    return label_clusters(cmap, windows, model)
