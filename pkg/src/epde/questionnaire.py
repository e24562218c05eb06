"""Iteratively informed questionnaire metric for matrices and 3-axis tensors.

For one axis of a tensor, each channel is a vector of values over the other
axes.  Its informed distance to another channel is the L1 distance of the raw
vectors plus the L1 distance of multiscale cluster sums, where the clusters
come from bottom-up hierarchical trees built on the *other* axes.  Trees and
metrics are refined alternately until the distance matrices settle.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .diffmaps import DiffusionConfig, EmbeddingError, embed, select_unique
from .tensor import AXES


@dataclass(frozen=True)
class ClusterTree:
    """Nested partitions of ``n`` channels.

    ``levels[0]`` labels every channel as its own cluster; the last level has
    a single root.  ``thresholds[l]`` is the join threshold used to build
    level ``l + 1``.  Cluster labels on each level are ordered by smallest
    member channel.
    """

    levels: tuple
    thresholds: np.ndarray

    @property
    def n(self):
        return int(self.levels[0].shape[0])

    def partition(self, level):
        lab = self.levels[level]
        return [np.flatnonzero(lab == c) for c in range(int(lab.max()) + 1)]

    def clusters(self):
        """Distinct clusters across all levels as (level, members), lowest level first."""
        seen = set()
        out = []
        for lev, lab in enumerate(self.levels):
            for c in range(int(lab.max()) + 1):
                members = np.flatnonzero(lab == c)
                key = members.tobytes()
                if key not in seen:
                    seen.add(key)
                    out.append((lev, members))
        return out

    def indicator(self, level_weight=0.5):
        """Indicator basis G (K x n) and per-row weights ``2**(-level_weight * level)``."""
        cl = self.clusters()
        G = np.zeros((len(cl), self.n))
        w = np.empty(len(cl))
        for k, (lev, members) in enumerate(cl):
            G[k, members] = 1.0
            w[k] = 2.0 ** (-level_weight * lev)
        return G, w

    def truncated(self, n_levels=1):
        return ClusterTree(self.levels[:n_levels], self.thresholds[: max(0, n_levels - 1)])

    def to_json(self):
        return {"levels": [lab.tolist() for lab in self.levels], "thresholds": self.thresholds.tolist()}


def _cluster_sums(dist, labels, m):
    S = np.zeros((m, labels.shape[0]))
    S[labels, np.arange(labels.shape[0])] = 1.0
    return S @ dist @ S.T, S.sum(axis=1)


def hierarchical_cluster(dist, threshold_growth=2.0, quantile=25.0, max_levels=64):
    """Bottom-up questionnaire clustering of the channels behind ``dist``.

    On every level each cluster is attempted once, closest (cluster, target)
    pair first, where targets are untouched clusters or super-clusters
    already formed on this level; a join happens only when the average
    member distance is within the level threshold ``q * growth**level``
    (``q`` = ``quantile``-th percentile of the pairwise distances).  If no
    single root emerges within ``max_levels`` levels, the last level is
    forced into one.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n == 0:
        raise ValueError("cannot cluster zero channels")
    if threshold_growth <= 1.0:
        raise ValueError("threshold_growth must exceed 1")
    labels = np.arange(n)
    levels = [labels]
    thresholds = []
    if n == 1:
        return ClusterTree(tuple(levels), np.zeros(0))
    off = dist[np.triu_indices(n, 1)]
    q = float(np.percentile(off, quantile))
    if q <= 0.0:
        pos = off[off > 0]
        q = float(pos.min()) if pos.size else 0.0
    lev = 0
    while labels.max() > 0:
        thr = q * threshold_growth ** lev
        m = int(labels.max()) + 1
        if lev + 1 >= max_levels:
            labels = np.zeros(n, dtype=np.int64)
        else:
            dsum, sizes = _cluster_sums(dist, labels, m)
            labels = kernels.cluster_level(dsum, sizes, thr)[labels]
        thresholds.append(thr)
        levels.append(labels)
        lev += 1
    return ClusterTree(tuple(levels), np.asarray(thresholds))


# ---------------------------------------------------------------------------
# transforms and distances


def transform_F(Y, trees, level_weight=None):
    """Cluster sums of ``Y`` over the other axes' trees.

    ``Y`` has trailing dimensions matching ``trees`` (one tree for a matrix
    view, two for a tensor view); leading dimensions are batch.  Every
    output coordinate sums ``Y`` over one cluster (or the intersection of one
    cluster per tree).  With ``level_weight`` set, coordinates are scaled by
    ``2**(-level_weight * level)`` (summed levels for cluster pairs).
    """
    Y = np.asarray(Y, dtype=np.float64)
    trees = list(trees)
    if Y.ndim < len(trees):
        raise ValueError("Y has fewer dimensions than trees")
    for ax, tr in enumerate(trees):
        if Y.shape[Y.ndim - len(trees) + ax] != tr.n:
            raise ValueError("tree size does not match the data vector")
    batch = Y.shape[: Y.ndim - len(trees)]
    lw = 0.0 if level_weight is None else level_weight
    if len(trees) == 1:
        G, w = trees[0].indicator(lw)
        F = Y @ G.T
        if level_weight is not None:
            F = F * w
        return F
    if len(trees) == 2:
        Ga, wa = trees[0].indicator(lw)
        Gb, wb = trees[1].indicator(lw)
        F = np.einsum("ka,...ab,lb->...kl", Ga, Y, Gb, optimize=True)
        if level_weight is not None:
            F = F * np.outer(wa, wb)
        return F.reshape(batch + (-1,))
    raise ValueError("only one or two trees are supported")


def quest_distance(y_i, y_j, trees, level_weight=0.5):
    """Raw L1 distance plus L1 distance of the weighted cluster sums."""
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if y_i.shape != y_j.shape:
        raise ValueError("shape mismatch")
    Fi = transform_F(y_i, trees, level_weight)
    Fj = transform_F(y_j, trees, level_weight)
    return float(np.abs(y_i - y_j).sum() + np.abs(Fi - Fj).sum())


def uninformed_distances(Y):
    """Mean absolute difference between channels (rows of the unfolded ``Y``)."""
    flat = np.asarray(Y, dtype=np.float64).reshape(Y.shape[0], -1)
    return kernels.pairwise_l1(flat) / flat.shape[1]


def informed_distances(Y, trees, level_weight=0.5):
    """Questionnaire distances between the leading-axis channels of ``Y``.

    Each term is divided by its vector length so raw and cluster-sum parts
    stay comparable whatever the axis sizes.
    """
    flat = np.asarray(Y, dtype=np.float64).reshape(Y.shape[0], -1)
    F = transform_F(Y, trees, level_weight)
    return kernels.pairwise_l1(flat) / flat.shape[1] + kernels.pairwise_l1(F) / F.shape[1]


# ---------------------------------------------------------------------------
# alternating organization


@dataclass(frozen=True)
class QuestConfig:
    threshold_growth: float = 2.0
    quantile: float = 25.0
    level_weight: float = 0.5
    max_sweeps: int = 6
    tol: float = 1e-3
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    axis_diffusion: dict = field(default_factory=dict)  # axis name -> DiffusionConfig override
    unique_limit: int = 5

    def diffusion_for(self, axis):
        return self.axis_diffusion.get(axis, self.diffusion)


@dataclass
class QuestState:
    distances: dict
    trees: dict
    iterations: int = 0
    history: dict = field(default_factory=dict)

    def dump(self, directory):
        """Write distance matrices (CSV) and trees (JSON) for debugging."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for ax, D in self.distances.items():
            np.savetxt(d / f"distances_{ax}.csv", D, delimiter=",", fmt="%.17g")
        for ax, tr in self.trees.items():
            (d / f"tree_{ax}.json").write_text(json.dumps(tr.to_json()))
        (d / "history.json").write_text(json.dumps({"iterations": self.iterations, "history": self.history}))


@dataclass
class Organization:
    embeddings: dict
    errors: dict
    state: QuestState


def _rel_change(new, old):
    den = np.linalg.norm(old)
    if den == 0:
        return 0.0 if np.linalg.norm(new) == 0 else np.inf
    return float(np.linalg.norm(new - old) / den)


def _cluster(D, cfg):
    return hierarchical_cluster(D, cfg.threshold_growth, cfg.quantile)


def _embed_axes(distances, names, cfg):
    embs, errs = {}, {}
    for ax in names:
        try:
            dcfg = cfg.diffusion_for(ax)
            e = embed(distances[ax], dcfg)
            select_unique(e, dcfg.unique_threshold, limit=cfg.unique_limit)
            embs[ax] = e
        except (EmbeddingError, ValueError) as exc:
            embs[ax] = None
            errs[ax] = str(exc)
    return embs, errs


def _views(values):
    """Each axis first, with the remaining axes in their original order."""
    return {ax: np.moveaxis(values, i, 0) for i, ax in enumerate(AXES)}


def organize_2d(m, cfg=QuestConfig()):
    """Co-organize rows and columns of matrix ``m``.

    Returns an :class:`Organization` whose embeddings are keyed ``"rows"``
    and ``"cols"``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 4:
        raise ValueError("need a matrix with at least 4 rows and 4 columns")
    views = {"rows": m, "cols": m.T}
    D = {"cols": uninformed_distances(views["cols"])}
    T = {"cols": _cluster(D["cols"], cfg)}
    D["rows"] = informed_distances(views["rows"], [T["cols"]], cfg.level_weight)
    T["rows"] = _cluster(D["rows"], cfg)
    hist = {"rows": [], "cols": []}
    it = 0
    for it in range(1, cfg.max_sweeps + 1):
        changes = {}
        for ax, other in (("cols", "rows"), ("rows", "cols")):
            new = informed_distances(views[ax], [T[other]], cfg.level_weight)
            changes[ax] = _rel_change(new, D[ax])
            D[ax] = new
            T[ax] = _cluster(new, cfg)
            hist[ax].append(changes[ax])
        if all(c < cfg.tol for c in changes.values()):
            break
    state = QuestState(D, T, it, hist)
    embs, errs = _embed_axes(D, ("rows", "cols"), cfg)
    return Organization(embs, errs, state)


def organize_3d(t, cfg=QuestConfig()):
    """Co-organize the parameter, time and space axes of a DataTensor.

    Embeddings are keyed ``"p"``, ``"t"``, ``"s"``; an axis whose distances
    degenerate (e.g. a constant axis) gets ``None`` and an entry in
    ``errors`` while the other axes are still organized.
    """
    values = t.values if hasattr(t, "values") else np.asarray(t, dtype=np.float64)
    if values.ndim != 3 or min(values.shape) < 4:
        raise ValueError("need at least 4 channels on every axis")
    V = _views(values)
    others = {"p": ("t", "s"), "t": ("p", "s"), "s": ("p", "t")}
    D = {"p": uninformed_distances(V["p"]), "s": uninformed_distances(V["s"])}
    T = {"p": _cluster(D["p"], cfg), "s": _cluster(D["s"], cfg)}
    D["t"] = informed_distances(V["t"], [T["p"], T["s"]], cfg.level_weight)
    T["t"] = _cluster(D["t"], cfg)
    hist = {ax: [] for ax in AXES}
    it = 0
    for it in range(1, cfg.max_sweeps + 1):
        changes = {}
        for ax in ("p", "s", "t"):
            new = informed_distances(V[ax], [T[o] for o in others[ax]], cfg.level_weight)
            changes[ax] = _rel_change(new, D[ax])
            D[ax] = new
            T[ax] = _cluster(new, cfg)
            hist[ax].append(changes[ax])
        if all(c < cfg.tol for c in changes.values()):
            break
    state = QuestState(D, T, it, hist)
    embs, errs = _embed_axes(D, AXES, cfg)
    return Organization(embs, errs, state)
