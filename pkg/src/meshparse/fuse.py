"""Multi-view label voting, DBSCAN denoising and nearest-neighbor label transfer."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import workers
from .model import ContractError, LabeledCloud, LabelSpace, Mesh
from .render import provoking_vertices

log = logging.getLogger(__name__)


class FusionError(RuntimeError):
    """Denoising demoted every labeled point."""


# ------------------------------------------------------------------ voting

class VoteTable:
    """Per-vertex label vote counts, stored densely as a (vertices, labels) array."""

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.int64)

    @property
    def n_vertices(self) -> int:
        return self.counts.shape[0]

    @property
    def voted(self) -> np.ndarray:
        return self.counts.sum(axis=1) > 0

    def votes_for(self, vertex: int) -> dict[int, int]:
        row = self.counts[vertex]
        return {int(i): int(row[i]) for i in np.flatnonzero(row)}

    def __add__(self, other: "VoteTable") -> "VoteTable":
        return VoteTable(self.counts + other.counts)


def accumulate_votes(mesh: Mesh, views, n_labels: int) -> VoteTable:
    """One vote per covered pixel, cast for the pixel's provoking vertex.

    ``views`` yields ``(RenderBuffers, label_image)`` pairs. Background-labeled
    pixels that cover geometry still vote for label 0.
    """
    counts = np.zeros(mesh.n_vertices * n_labels, dtype=np.int64)
    for k, (buffers, label_image) in enumerate(views):
        label_image = np.asarray(label_image)
        if label_image.shape != buffers.shape:
            raise ContractError(
                f"view {k}: label image is {label_image.shape} but buffers are {buffers.shape}"
            )
        vert = provoking_vertices(mesh, buffers)
        mask = vert >= 0
        lab = label_image[mask].astype(np.int64)
        if lab.size and (lab.min() < 0 or lab.max() >= n_labels):
            raise ContractError(f"view {k}: label {int(lab.max())} outside a space of {n_labels} labels")
        counts += np.bincount(vert[mask] * n_labels + lab, minlength=counts.size)
    return VoteTable(counts.reshape(mesh.n_vertices, n_labels))


def finalize_labels(mesh: Mesh, votes: VoteTable, label_space: LabelSpace) -> LabeledCloud:
    """Most-voted label per vertex (ties to the lower label).

    Vertices nobody voted for copy the label of the nearest voted vertex.
    With no votes at all every vertex falls back to background.
    """
    if votes.n_vertices != mesh.n_vertices:
        raise ContractError("vote table and mesh disagree on vertex count")
    if votes.counts.shape[1] > len(label_space):
        raise ContractError("vote table has more labels than the label space")
    voted = votes.voted
    if not voted.any():
        log.warning("no vertex received a vote; labeling everything background")
        return LabeledCloud(mesh.vertices, np.zeros(mesh.n_vertices, dtype=np.int64), label_space)
    labels = np.argmax(votes.counts, axis=1)
    if not voted.all():
        tree = cKDTree(mesh.vertices[voted])
        _, nearest = tree.query(mesh.vertices[~voted])
        labels[~voted] = labels[voted][nearest]
    return LabeledCloud(mesh.vertices, labels, label_space)


# ------------------------------------------------------------------ DBSCAN

@dataclass(frozen=True)
class DbscanParams:
    epsilon: float = 0.03
    min_samples: int = 100
    knn_k: int = 40

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractError(f"epsilon must be positive, got {self.epsilon}")
        if self.min_samples < 1:
            raise ContractError("min_samples must be at least 1")
        if self.knn_k < 1:
            raise ContractError("knn_k must be at least 1")


def radius_pairs(points, eps: float, chunk: int = 1 << 21) -> tuple[np.ndarray, np.ndarray]:
    """All ordered pairs (i, j), self pairs included, with |p_i - p_j| <= eps.

    Uses a uniform grid with cell size ``eps``: neighbors lie in the 27
    surrounding cells.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(p)
    if n == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    cell = np.floor((p - p.min(axis=0)) / eps).astype(np.int64) + 1
    dims = cell.max(axis=0) + 2
    if float(dims[0]) * float(dims[1]) * float(dims[2]) > 2.0 ** 62:
        # cell grid too fine to key in 64 bits
        tree = cKDTree(p)
        pairs = tree.query_pairs(eps, output_type="ndarray")
        i = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        j = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        return i, j
    key = (cell[:, 0] * dims[1] + cell[:, 1]) * dims[2] + cell[:, 2]
    order = np.argsort(key, kind="stable")
    skey = key[order]
    ukeys, start, count = np.unique(skey, return_index=True, return_counts=True)
    eps2 = eps * eps
    out_i, out_j = [], []
    offsets = [(dx * dims[1] + dy) * dims[2] + dz
               for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    for off in offsets:
        nkey = key + off
        pos = np.searchsorted(ukeys, nkey)
        pos_c = np.minimum(pos, len(ukeys) - 1)
        hit = ukeys[pos_c] == nkey
        qi = np.flatnonzero(hit)
        if not len(qi):
            continue
        cstart, ccount = start[pos_c[qi]], count[pos_c[qi]]
        # expand in pieces to bound memory
        csum = np.cumsum(ccount)
        lo = 0
        while lo < len(qi):
            base = csum[lo - 1] if lo else 0
            hi = max(int(np.searchsorted(csum, base + chunk, side="right")), lo + 1)
            q, cs, cc = qi[lo:hi], cstart[lo:hi], ccount[lo:hi]
            rep_i = np.repeat(q, cc)
            local = np.arange(int(cc.sum())) - np.repeat(np.cumsum(cc) - cc, cc)
            rep_j = order[np.repeat(cs, cc) + local]
            d = p[rep_i] - p[rep_j]
            keep = np.einsum("ij,ij->i", d, d) <= eps2
            out_i.append(rep_i[keep])
            out_j.append(rep_j[keep])
            lo = hi
    return np.concatenate(out_i), np.concatenate(out_j)


def dbscan(points, params: DbscanParams | None = None, *, epsilon: float | None = None,
           min_samples: int | None = None) -> np.ndarray:
    """Cluster ids per point, -1 for noise.

    A core point has at least ``min_samples`` points (itself included)
    within ``epsilon``. Clusters are the connected components of core points
    and are numbered by their lowest-index core point. A border point joins
    the lowest-numbered cluster among its core neighbors.
    """
    params = params or DbscanParams()
    eps = params.epsilon if epsilon is None else float(epsilon)
    min_pts = params.min_samples if min_samples is None else int(min_samples)
    if not eps > 0:
        raise ContractError("epsilon must be positive")
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(p)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    i, j = radius_pairs(p, eps)
    core = np.bincount(i, minlength=n) >= min_pts
    if not core.any():
        return labels
    cc = core[i] & core[j]
    graph = coo_matrix((np.ones(int(cc.sum()), dtype=np.int8), (i[cc], j[cc])), shape=(n, n)).tocsr()
    _, comp = connected_components(graph, directed=False)
    core_idx = np.flatnonzero(core)
    comps, first = np.unique(comp[core_idx], return_index=True)
    comp_to_cluster = np.empty(comp.max() + 1, dtype=np.int64)
    comp_to_cluster[comps[np.argsort(first)]] = np.arange(len(comps))
    labels[core_idx] = comp_to_cluster[comp[core_idx]]
    border = ~core[i] & core[j]
    if border.any():
        bi, bc = i[border], labels[j[border]]
        best = np.full(n, np.iinfo(np.int64).max)
        np.minimum.at(best, bi, bc)
        hit = best != np.iinfo(np.int64).max
        labels[hit] = best[hit]
    return labels


# --------------------------------------------------------------- denoising

def scale_to_unit_cube(points) -> np.ndarray:
    """Shift to the origin and divide by the largest extent (aspect preserved)."""
    p = np.asarray(points, dtype=np.float64)
    lo = p.min(axis=0)
    extent = float((p.max(axis=0) - lo).max())
    return (p - lo) / (extent if extent > 0 else 1.0)


def majority_vote(neighbor_labels: np.ndarray, n_labels: int) -> np.ndarray:
    """Row-wise most frequent label; ties go to the lower label."""
    rows = np.repeat(np.arange(len(neighbor_labels)), neighbor_labels.shape[1])
    counts = np.zeros((len(neighbor_labels), n_labels), dtype=np.int64)
    np.add.at(counts, (rows, neighbor_labels.ravel()), 1)
    return np.argmax(counts, axis=1)


def _largest_cluster_mask(points: np.ndarray, params: DbscanParams) -> np.ndarray:
    cid = dbscan(points, params)
    if not (cid >= 0).any():
        return np.zeros(len(points), dtype=bool)
    return cid == int(np.argmax(np.bincount(cid[cid >= 0])))


def denoise_labels(cloud: LabeledCloud, params: DbscanParams | None = None) -> LabeledCloud:
    """Keep the largest DBSCAN cluster of every non-background class.

    Everything else in a class is demoted and then takes the majority label
    of its ``knn_k`` nearest surviving points. Clustering runs on the cloud
    scaled into the unit cube, so ``epsilon`` is relative to the cloud size.
    """
    params = params or DbscanParams()
    if len(cloud) == 0:
        return cloud
    pts = scale_to_unit_cube(cloud.points)
    labels = cloud.labels.copy()
    classes = [int(c) for c in np.unique(labels) if c != 0]
    members = [np.flatnonzero(labels == c) for c in classes]

    n_threads = workers.get_threads()
    if n_threads > 1 and len(classes) > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            keeps = list(pool.map(lambda idx: _largest_cluster_mask(pts[idx], params), members))
    else:
        keeps = [_largest_cluster_mask(pts[idx], params) for idx in members]

    assigned = np.ones(len(labels), dtype=bool)
    for c, idx, keep in zip(classes, members, keeps):
        assigned[idx[~keep]] = False
        if not keep.any():
            log.info("class %d vanished during denoising (%d points)", c, len(idx))
    if not assigned.any():
        raise FusionError("denoising demoted every point")
    if assigned.all():
        return cloud
    k = min(params.knn_k, int(assigned.sum()))
    _, nn = cKDTree(pts[assigned]).query(pts[~assigned], k=k)
    nn = np.asarray(nn).reshape(-1, k)
    labels[~assigned] = majority_vote(labels[assigned][nn], len(cloud.label_space))
    return cloud.relabeled(labels)


# ------------------------------------------------------------------- rules

@dataclass(frozen=True)
class RelabelRule:
    source: int
    target: int
    where: str  # "v_above" or "v_below"
    fraction: float


def load_rules(path, label_space: LabelSpace) -> list[RelabelRule]:
    """Rule file: JSON list of ``{"from", "to", "where": "v_above"|"v_below", "fraction"}``.

    Labels may be given by name or index.
    """
    with open(Path(path), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_rules(doc, label_space)


def parse_rules(doc, label_space: LabelSpace) -> list[RelabelRule]:
    if not isinstance(doc, list):
        raise ContractError("rule file must hold a JSON list")
    rules = []
    for k, r in enumerate(doc):
        if set(r) != {"from", "to", "where", "fraction"}:
            raise ContractError(f"rule {k}: expected keys from/to/where/fraction, got {sorted(r)}")
        if r["where"] not in ("v_above", "v_below"):
            raise ContractError(f"rule {k}: 'where' must be v_above or v_below")
        frac = float(r["fraction"])
        if not 0.0 <= frac <= 1.0:
            raise ContractError(f"rule {k}: fraction must be in [0, 1]")
        rules.append(RelabelRule(label_space.index(r["from"]), label_space.index(r["to"]), r["where"], frac))
    return rules


def apply_rules(cloud: LabeledCloud, rules) -> LabeledCloud:
    """Apply relabel rules in order.

    A rule moves points of label ``source`` to ``target`` when their height,
    as a fraction of the cloud's vertical (+y) extent, is above or below
    ``fraction``.
    """
    if not rules or len(cloud) == 0:
        return cloud
    y = cloud.points[:, 1]
    span = np.ptp(y)
    height = (y - y.min()) / (span if span > 0 else 1.0)
    labels = cloud.labels.copy()
    for r in rules:
        side = height > r.fraction if r.where == "v_above" else height < r.fraction
        labels[(labels == r.source) & side] = r.target
    return cloud.relabeled(labels)


# --------------------------------------------------------------- upsampling

def upsample_labels(sampled: LabeledCloud, full_points, k: int = 3) -> LabeledCloud:
    """Label every full-resolution point from its ``k`` nearest sampled points.

    A point that coincides with a sample keeps that sample's label.
    Otherwise the majority wins, and without a majority the single nearest
    sample decides (equal distances resolve to the lower sample index).
    """
    if len(sampled) == 0:
        raise ContractError("cannot upsample from an empty sample")
    full = np.asarray(full_points, dtype=np.float64).reshape(-1, 3)
    kk = min(k, len(sampled))
    dist, nn = cKDTree(sampled.points).query(full, k=kk)
    dist, nn = np.asarray(dist).reshape(-1, kk), np.asarray(nn).reshape(-1, kk)
    order = np.lexsort((nn, dist), axis=1) if kk > 1 else np.zeros((len(full), 1), dtype=np.int64)
    nn = np.take_along_axis(nn, order, axis=1)
    nlab = sampled.labels[nn]
    n_labels = len(sampled.label_space)
    rows = np.repeat(np.arange(len(full)), kk)
    counts = np.zeros((len(full), n_labels), dtype=np.int64)
    np.add.at(counts, (rows, nlab.ravel()), 1)
    top = counts.max(axis=1)
    winners = (counts == top[:, None]).sum(axis=1)
    labels = np.where(winners == 1, np.argmax(counts, axis=1), nlab[:, 0])
    exact = np.take_along_axis(dist, order, axis=1)[:, 0] == 0
    labels[exact] = nlab[exact, 0]
    return LabeledCloud(full, labels, sampled.label_space)
