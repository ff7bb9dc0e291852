"""Vacant-cluster structure of a trap field.

Vacant sites are joined by nearest-neighbour adjacency.  The largest vacant
cluster stands in for the infinite cluster on a finite box.  Occupied
(trap) sites use the wider adjacency 1 <= |x - y|_1 <= 2d.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .errors import ConfigError
from .lattice import TrapField
from .rng import generator

NO_CLUSTER = -1


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    """Labels of vacant clusters; traps carry ``NO_CLUSTER``.

    Labels are canonical: cluster ``i`` is the i-th cluster met in row-major
    order, i.e. labels increase with each cluster's smallest member site.
    """

    labels: np.ndarray
    sizes: np.ndarray
    representatives: np.ndarray
    largest_label: int | None
    spans_box: bool

    @property
    def cluster_count(self) -> int:
        return int(self.sizes.size)

    @cached_property
    def graph(self) -> sparse.csr_matrix:
        """Nearest-neighbour adjacency of vacant sites, over flat indices."""
        shape = self.labels.shape
        vac = self.labels.ravel() >= 0
        rows, cols = [], []
        for axis in range(len(shape)):
            lo = [slice(None)] * len(shape)
            hi = [slice(None)] * len(shape)
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            idx = np.arange(vac.size).reshape(shape)
            a = idx[tuple(lo)].ravel()
            b = idx[tuple(hi)].ravel()
            keep = vac[a] & vac[b]
            rows.append(a[keep])
            cols.append(b[keep])
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        data = np.ones(2 * r.size, dtype=np.int8)
        return sparse.csr_matrix((data, (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(vac.size, vac.size))

    def label_of(self, field: TrapField, site: Sequence[int]) -> int:
        return int(self.labels[field.array_index(site)])


def label_vacant_clusters(field: TrapField) -> ClusterLabeling:
    d = field.dimension
    structure = ndimage.generate_binary_structure(d, 1)
    raw, count = ndimage.label(field.vacant, structure=structure)
    labels = raw.astype(np.int64) - 1
    labels.flags.writeable = False
    if count == 0:
        empty = np.zeros(0, dtype=np.int64)
        return ClusterLabeling(labels, empty, empty, None, False)
    flat = labels.ravel()
    vac = np.flatnonzero(flat >= 0)
    sizes = np.bincount(flat[vac], minlength=count)
    reps = np.full(count, flat.size, dtype=np.int64)
    np.minimum.at(reps, flat[vac], vac)
    # raster-scan labelling: label order already follows smallest member
    order = np.argsort(reps, kind="stable")
    if not np.array_equal(order, np.arange(count)):
        remap = np.empty(count, dtype=np.int64)
        remap[order] = np.arange(count)
        labels = np.where(labels >= 0, remap[np.maximum(labels, 0)], NO_CLUSTER)
        labels.flags.writeable = False
        sizes, reps = sizes[order], reps[order]
    largest = int(np.argmax(sizes))  # first maximum: smallest representative wins ties
    spans = _touches_all_faces(labels == largest)
    return ClusterLabeling(labels, sizes, reps, largest, spans)


def _touches_all_faces(mask: np.ndarray) -> bool:
    for axis in range(mask.ndim):
        if not (np.take(mask, 0, axis=axis).any() and np.take(mask, -1, axis=axis).any()):
            return False
    return True


def infinite_cluster_proxy(labeling: ClusterLabeling, require_spanning: bool = False) -> int | None:
    """Label of the largest vacant cluster, or None if there is none (or it does
    not span the box while ``require_spanning`` is set)."""
    if labeling.largest_label is None:
        return None
    if require_spanning and not labeling.spans_box:
        return None
    return labeling.largest_label


def occupied_cluster(field: TrapField, site: Sequence[int]) -> set[tuple[int, ...]]:
    """Occupied cluster W(x) under the adjacency 1 <= |x - y|_1 <= 2d.

    Returns the empty set for a vacant site.
    """
    start = field.array_index(site)
    traps = field.traps
    if not traps[start]:
        return set()
    d = field.dimension
    reach = 2 * d
    offsets = [
        off for off in itertools.product(range(-reach, reach + 1), repeat=d)
        if 1 <= sum(abs(c) for c in off) <= reach
    ]
    shape = traps.shape
    seen = {start}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for off in offsets:
            nxt = tuple(c + o for c, o in zip(cur, off))
            if nxt in seen or any(c < 0 or c >= s for c, s in zip(nxt, shape)):
                continue
            if traps[nxt]:
                seen.add(nxt)
                queue.append(nxt)
    L = field.box_radius
    return {tuple(c - L for c in s) for s in seen}


def chemical_distance(field: TrapField, labeling: ClusterLabeling, x: Sequence[int], y: Sequence[int]) -> int | None:
    """Graph distance through vacant sites; None when x, y are not connected."""
    ix, iy = field.array_index(x), field.array_index(y)
    lx, ly = labeling.labels[ix], labeling.labels[iy]
    if lx < 0 or ly < 0 or lx != ly:
        return None
    fx = field.flat_index(x)
    fy = field.flat_index(y)
    if fx == fy:
        return 0
    dist = csgraph.shortest_path(labeling.graph, method="D", unweighted=True, directed=False, indices=fx)
    return int(dist[fy])


@dataclass(frozen=True)
class PsiEstimate:
    pair_count: int
    max_ratio: float
    ratios: np.ndarray
    pairs: np.ndarray
    l1: np.ndarray
    chem: np.ndarray

    def histogram(self, bins: int | Sequence[float] = 20) -> tuple[np.ndarray, np.ndarray]:
        return np.histogram(self.ratios, bins=bins)

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.ratios, q))


def estimate_psi(
    field: TrapField,
    labeling: ClusterLabeling,
    sample_count: int,
    min_separation: int,
    rng_seed: int,
    pairs_per_source: int = 100,
) -> PsiEstimate:
    """Sample pairs of proxy-cluster sites and record d_C(x, y) / |x - y|_1.

    x is uniform on the cluster and y is uniform on the cluster, redrawn until
    |x - y|_1 >= min_separation.  Up to ``pairs_per_source`` pairs share one x
    so that a single breadth-first search serves several pairs.
    """
    label = infinite_cluster_proxy(labeling)
    if label is None:
        raise ConfigError("field has no vacant cluster")
    members = np.flatnonzero(labeling.labels.ravel() == label)
    coords = np.stack(np.unravel_index(members, labeling.labels.shape), axis=1)
    # l1 diameter: max over sign vectors s of (max s.x - min s.x)
    signs = np.array(list(itertools.product((1, -1), repeat=coords.shape[1])))
    proj = coords @ signs.T
    diameter = int((proj.max(axis=0) - proj.min(axis=0)).max())
    if diameter < min_separation:
        raise ConfigError(f"proxy cluster has l1 diameter {diameter} < min_separation {min_separation}")
    rng = generator(rng_seed)
    pairs, l1s, chems = [], [], []
    remaining = sample_count
    while remaining > 0:
        src = int(rng.integers(members.size))
        far = np.abs(coords - coords[src]).sum(axis=1) >= min_separation
        candidates = np.flatnonzero(far)
        if candidates.size == 0:
            continue
        take = min(pairs_per_source, remaining)
        tgt = candidates[rng.integers(candidates.size, size=take)]
        dist = csgraph.shortest_path(labeling.graph, method="D", unweighted=True, directed=False, indices=members[src])
        for t in tgt:
            pairs.append((coords[src], coords[t]))
            l1s.append(int(np.abs(coords[t] - coords[src]).sum()))
            chems.append(int(dist[members[t]]))
        remaining -= take
    L = field.box_radius
    pairs_arr = np.array(pairs, dtype=np.int64) - L
    l1 = np.array(l1s, dtype=np.int64)
    chem = np.array(chems, dtype=np.int64)
    ratios = chem / l1
    return PsiEstimate(len(l1s), float(ratios.max()), ratios, pairs_arr, l1, chem)


def vacant_fraction(field: TrapField) -> float:
    return float(np.count_nonzero(field.vacant)) / field.config.n_sites


def cluster_mask(labeling: ClusterLabeling, label: int | None) -> np.ndarray:
    if label is None:
        return np.zeros(labeling.labels.shape, dtype=bool)
    return labeling.labels == label


__all__ = [
    "ClusterLabeling",
    "PsiEstimate",
    "NO_CLUSTER",
    "label_vacant_clusters",
    "infinite_cluster_proxy",
    "occupied_cluster",
    "chemical_distance",
    "estimate_psi",
    "vacant_fraction",
    "cluster_mask",
]
