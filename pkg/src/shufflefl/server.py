"""Server-side logic: shuffled model validation, clustering and aggregation.

Nothing in this module accepts a shuffle rule. The server only ever handles
:class:`ClientUpdate` objects, whose parameters and probes are already in the
clients' shared (secret) shuffled space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .core import cosine_sim, softmax_rows
from .exceptions import DegenerateInputError, InvariantError, ShapeError
from .nn.functional import forward

NOISE = -1


@dataclass
class ClientUpdate:
    client_id: int
    params: object
    probe: np.ndarray
    sample_count: int

    def __post_init__(self):
        self.probe = np.asarray(self.probe, dtype=np.float64)
        if self.probe.shape[0] == 0:
            raise DegenerateInputError(f"client {self.client_id} sent an empty probe")


@dataclass
class SimilarityMatrix:
    S: np.ndarray
    client_ids: List[int]

    def distance(self) -> np.ndarray:
        """``1 - S`` clipped at zero, exact zero diagonal, exactly symmetric."""
        D = np.maximum(1.0 - self.S, 0.0)
        D = np.minimum(D, D.T)
        np.fill_diagonal(D, 0.0)
        return D


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.15
    min_pts: int = 2

    def __post_init__(self):
        if self.eps <= 0 or self.min_pts < 1:
            raise ValueError("DBSCAN needs eps > 0 and min_pts >= 1")


def _check_arch(updates: Sequence[ClientUpdate]):
    ref = updates[0].params
    for u in updates[1:]:
        if not ref.same_shape(u.params):
            raise ShapeError(f"client {u.client_id} uploaded a different architecture")


def shuffled_validation(updates: Sequence[ClientUpdate], output: str = "softmax") -> SimilarityMatrix:
    """Pairwise cosine similarity of every model's outputs on the pooled probes.

    Probes are pooled in ascending client-id order and pushed through every
    model; each model's (row-wise softmax) outputs are concatenated into one
    vector. ``output="logits"`` compares raw logits instead.
    """
    if len(updates) < 2:
        raise DegenerateInputError("validation needs at least two updates")
    updates = sorted(updates, key=lambda u: u.client_id)
    _check_arch(updates)
    widths = {u.probe.shape[1:] for u in updates}
    if len(widths) != 1:
        raise ShapeError(f"probe shapes disagree: {sorted(widths)}")
    pool = np.concatenate([u.probe for u in updates], axis=0)
    vecs = []
    for u in updates:
        out = forward(u.params, pool)
        vecs.append((softmax_rows(out) if output == "softmax" else out).reshape(-1))
    m = len(updates)
    S = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            S[i, j] = S[j, i] = cosine_sim(vecs[i], vecs[j])
    return SimilarityMatrix(S, [u.client_id for u in updates])


def dbscan(dist, params: DbscanParams = DbscanParams()) -> np.ndarray:
    """Density clustering on a precomputed distance matrix.

    Neighbourhoods include the point itself. Seeds are visited in ascending
    index order and each cluster is expanded breadth-first before the next one
    starts, so labels are deterministic. Noise is ``-1``.
    """
    D = np.asarray(dist, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ShapeError("distance matrix must be square")
    if not np.array_equal(D, D.T):
        raise InvariantError("distance matrix is not symmetric")
    if np.any(np.diag(D) != 0) or np.any(D < 0):
        raise InvariantError("distance matrix needs a zero diagonal and non-negative entries")
    n = D.shape[0]
    neighbours = [np.flatnonzero(D[i] <= params.eps) for i in range(n)]
    core = np.array([len(nb) >= params.min_pts for nb in neighbours])
    labels = np.full(n, NOISE, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        queue = [i]
        while queue:
            p = queue.pop(0)
            for q in neighbours[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                if not visited[q] and core[q]:
                    visited[q] = True
                    queue.append(q)
        cluster += 1
    return labels


class PrecomputedDBSCAN(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`dbscan` for ``1 - S`` style distance matrices."""

    def __init__(self, eps: float = 0.15, min_pts: int = 2):
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, X, y=None):
        self.labels_ = dbscan(X, DbscanParams(self.eps, self.min_pts))
        return self


# ---------------------------------------------------------------- cluster-aware aggregation

@dataclass
class GlobalClusterRegistry:
    """Persistent client -> global cluster map plus each cluster's latest model.

    ``models`` maps a label to ``(params, tag)`` where ``tag`` is an opaque
    round marker the clients use to look up which rule the model is shuffled
    under; the server never learns the rule itself.
    """

    labels: Dict[int, int] = field(default_factory=dict)
    next_label: int = 0
    models: Dict[int, Tuple[object, int]] = field(default_factory=dict)

    def fresh(self) -> int:
        g = self.next_label
        self.next_label += 1
        return g

    def members(self, label: int) -> List[int]:
        return sorted(c for c, g in self.labels.items() if g == label)

    def clusters(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {}
        for c in sorted(self.labels):
            out.setdefault(self.labels[c], []).append(c)
        return dict(sorted(out.items()))

    def copy(self) -> "GlobalClusterRegistry":
        return GlobalClusterRegistry(dict(self.labels), self.next_label, dict(self.models))


def pseudo_clusters(client_ids: Sequence[int], pseudo_labels: Sequence[int]) -> List[List[int]]:
    """Group ids by pseudo label; every noise point becomes its own singleton (after real clusters)."""
    groups: Dict[int, List[int]] = {}
    noise = []
    for c, lab in sorted(zip(client_ids, pseudo_labels), key=lambda t: t[0]):
        if lab == NOISE:
            noise.append([c])
        else:
            groups.setdefault(int(lab), []).append(c)
    return [groups[k] for k in sorted(groups)] + noise


def weighted_average(params_list: Sequence[object], weights: Sequence[float]):
    w = np.asarray(weights, dtype=np.float64)
    if w.sum() <= 0:
        raise DegenerateInputError("aggregation weights sum to zero")
    w = w / w.sum()
    arrays = [p.arrays() for p in params_list]
    out = [sum(wi * a[k] for wi, a in zip(w, arrays)) for k in range(len(arrays[0]))]
    return params_list[0].from_arrays(out)


def cluster_aware_aggregate(updates: Sequence[ClientUpdate], pseudo_labels: Sequence[int],
                            registry: GlobalClusterRegistry, tag: int = 0):
    """Assign global labels from this round's pseudo clusters and average within clusters.

    Returns ``(registry, aggregated)`` where ``registry`` is an updated copy and
    ``aggregated`` maps each global label touched this round to the sample-count
    weighted mean of its present members. Members absent this round keep their
    label and contribute nothing.
    """
    if len(updates) != len(pseudo_labels):
        raise ShapeError("one pseudo label per update required")
    if updates:
        _check_arch(updates)
    reg = registry.copy()
    by_id = {u.client_id: u for u in updates}
    for group in pseudo_clusters(list(by_id), list(pseudo_labels)):
        existing = [registry.labels[c] for c in group if c in registry.labels]
        if not existing:
            g = reg.fresh()
        elif len(set(existing)) == 1:
            g = existing[0]
        else:
            # several global clusters meet: only the overlapping (present) clients move
            g = reg.fresh()
        for c in group:
            reg.labels[c] = g
    touched: Dict[int, List[ClientUpdate]] = {}
    for c in sorted(by_id):
        touched.setdefault(reg.labels[c], []).append(by_id[c])
    aggregated = {}
    for g in sorted(touched):
        members = touched[g]
        aggregated[g] = weighted_average([u.params for u in members],
                                         [u.sample_count for u in members])
        reg.models[g] = (aggregated[g], tag)
    return reg, aggregated


# ---------------------------------------------------------------- baseline aggregators

def _stack(updates: Sequence[ClientUpdate]):
    if not updates:
        raise DegenerateInputError("no updates to aggregate")
    _check_arch(updates)
    return [np.stack(arrs) for arrs in zip(*(u.params.arrays() for u in updates))]


def fedavg(updates: Sequence[ClientUpdate]):
    updates = sorted(updates, key=lambda u: u.client_id)
    return weighted_average([u.params for u in updates], [u.sample_count for u in updates])


def median_agg(updates: Sequence[ClientUpdate]):
    """Coordinate-wise median (mean of the middle two for even counts)."""
    stacks = _stack(updates)
    return updates[0].params.from_arrays([np.median(s, axis=0) for s in stacks])


def trimmed_mean_agg(updates: Sequence[ClientUpdate], beta: int):
    """Drop the ``beta`` largest and smallest values per coordinate, average the rest."""
    m = len(updates)
    if 2 * beta >= m:
        raise DegenerateInputError(f"cannot trim {beta} from each side of {m} updates")
    stacks = _stack(updates)
    out = [np.mean(np.sort(s, axis=0)[beta:m - beta], axis=0) for s in stacks]
    return updates[0].params.from_arrays(out)


def krum_scores(updates: Sequence[ClientUpdate], f: int) -> np.ndarray:
    flat = np.stack([u.params.flat() for u in updates])
    sq = np.sum(flat * flat, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T, 0.0)
    m = len(updates)
    k = m - f - 2
    scores = np.empty(m)
    for i in range(m):
        others = np.sort(np.delete(d2[i], i))
        scores[i] = others[:k].sum()
    return scores


def multikrum_select(updates: Sequence[ClientUpdate], f: int, m_select: int) -> List[int]:
    """Client ids of the ``m_select`` lowest Krum scores (ties by client id)."""
    m = len(updates)
    if m < 2 * f + 3:
        raise DegenerateInputError(f"multi-krum needs m >= 2f + 3, got m={m}, f={f}")
    if not 1 <= m_select <= m:
        raise DegenerateInputError("m_select must be in 1..m")
    updates = sorted(updates, key=lambda u: u.client_id)
    scores = krum_scores(updates, f)
    chosen = sorted(range(m), key=lambda i: (scores[i], updates[i].client_id))[:m_select]
    return sorted(updates[i].client_id for i in chosen)


def multikrum(updates: Sequence[ClientUpdate], f: int, m_select: int):
    """Unweighted average of the updates picked by :func:`multikrum_select`."""
    ids = set(multikrum_select(updates, f, m_select))
    picked = sorted((u for u in updates if u.client_id in ids), key=lambda u: u.client_id)
    return weighted_average([u.params for u in picked], [1.0] * len(picked))


AGGREGATORS = ("cluster_aware", "fedavg", "median", "trimmed_mean", "multikrum")
