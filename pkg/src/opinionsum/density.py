"""HDBSCAN, written out stage by stage.

core distances -> mutual reachability -> Prim MST -> single-linkage
hierarchy -> condensed tree -> excess-of-mass selection (+ epsilon merge)
-> flat labels.

Tie-breaking follows the usual reference implementation (first index wins in
Prim, the default numpy sort for MST edges, breadth-first condensing), so
outputs agree with it label-for-label up to renaming.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .gateway import DimensionMismatch

# above this many points the distance matrix is streamed row by row
_DENSE_LIMIT = 4096


@dataclass(frozen=True)
class HdbscanParams:
    min_samples: int = 5
    min_cluster_size: int = 5
    cluster_selection_epsilon: float = 0.05
    # False reproduces the reference default; a group whose opinions form one
    # tight blob needs True to come back as a single cluster
    allow_single_cluster: bool = False

    def __post_init__(self):
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be >= 2")
        if not self.cluster_selection_epsilon >= 0:
            raise ValueError("cluster_selection_epsilon must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ClusteringResult:
    labels: tuple[int, ...]
    clusters: tuple[tuple[int, ...], ...]
    params: HdbscanParams = field(default_factory=HdbscanParams)

    @property
    def noise(self) -> tuple[int, ...]:
        return tuple(i for i, lab in enumerate(self.labels) if lab == -1)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def as_matrix(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        X = points
    else:
        rows = list(points)
        if not rows:
            return np.zeros((0, 0))
        dims = {len(r) for r in rows}
        if len(dims) != 1:
            raise DimensionMismatch(f"points have differing dimensions {sorted(dims)}")
        X = np.asarray(rows)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if X.size else X.reshape(0, 0)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array of points, got shape {X.shape}")
    if X.size and not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    return X


# --- stage 1+2: core distances and the mutual-reachability MST ----------------

class _Distances:
    def __init__(self, X: np.ndarray):
        self.X = X
        self.full = cdist(X, X) if len(X) <= _DENSE_LIMIT else None

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        return cdist(self.X[i : i + 1], self.X)[0]

    def rows(self, start: int, stop: int) -> np.ndarray:
        if self.full is not None:
            return self.full[start:stop]
        return cdist(self.X[start:stop], self.X)


def core_distances(dist: _Distances, n: int, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbour, counting the point itself."""
    out = np.empty(n)
    step = 256
    for s in range(0, n, step):
        block = dist.rows(s, min(n, s + step))
        out[s : s + len(block)] = np.partition(block, k - 1, axis=1)[:, k - 1]
    return out


def prim_mst(dist: _Distances, core: np.ndarray) -> np.ndarray:
    """Edges (a, b, weight) in the order Prim adds them, starting from node 0.

    As in the reference, each edge is recorded against the most recently added
    node; the implied single-linkage hierarchy is the same.
    """
    n = len(core)
    edges = np.empty((n - 1, 3))
    in_tree = np.zeros(n, dtype=bool)
    min_reach = np.full(n, np.inf)
    current = 0
    for i in range(n - 1):
        in_tree[current] = True
        mrd = np.maximum(np.maximum(dist.row(current), core[current]), core)
        min_reach = np.minimum(min_reach, mrd)
        candidates = np.where(in_tree, np.inf, min_reach)
        nxt = int(np.argmin(candidates))
        edges[i] = (current, nxt, candidates[nxt])
        current = nxt
    return edges


# --- stage 3: single linkage ---------------------------------------------------

def single_linkage(edges: np.ndarray, n: int) -> np.ndarray:
    """scipy-style linkage rows (left, right, distance, size); node ids >= n are merges."""
    order = np.argsort(edges[:, 2])
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    out = np.empty((n - 1, 4))
    for i, e in enumerate(order):
        a, b, d = int(edges[e, 0]), int(edges[e, 1]), edges[e, 2]
        ra, rb = find(a), find(b)
        new = n + i
        out[i] = (ra, rb, d, size[ra] + size[rb])
        parent[ra] = parent[rb] = new
        size[new] = size[ra] + size[rb]
    return out


# --- stage 4: condensed tree -----------------------------------------------------

def _bfs_hierarchy(hier: np.ndarray, root: int, n: int) -> list[int]:
    out, queue = [], [root]
    while queue:
        out.extend(queue)
        nxt = []
        for node in queue:
            if node >= n:
                row = hier[node - n]
                nxt.extend((int(row[0]), int(row[1])))
        queue = nxt
    return out


def condense_tree(hier: np.ndarray, min_cluster_size: int) -> list[tuple[int, int, float, int]]:
    """Rows (parent_cluster, child, lambda, child_size). Points keep ids < n; clusters start at n."""
    n = len(hier) + 1
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    ignore: set[int] = set()
    rows: list[tuple[int, int, float, int]] = []

    def size_of(node: int) -> int:
        return int(hier[node - n, 3]) if node >= n else 1

    def spill(parent_label: int, node: int, lam: float):
        for sub in _bfs_hierarchy(hier, node, n):
            if sub < n:
                rows.append((parent_label, sub, lam, 1))
            ignore.add(sub)

    for node in _bfs_hierarchy(hier, root, n):
        if node < n or node in ignore:
            continue
        left, right, d, _ = hier[node - n]
        left, right = int(left), int(right)
        lam = 1.0 / d if d > 0.0 else np.inf
        lc, rc = size_of(left), size_of(right)
        label = relabel[node]
        if lc >= min_cluster_size and rc >= min_cluster_size:
            relabel[left] = next_label
            rows.append((label, next_label, lam, lc))
            relabel[right] = next_label + 1
            rows.append((label, next_label + 1, lam, rc))
            next_label += 2
        elif lc < min_cluster_size and rc < min_cluster_size:
            spill(label, left, lam)
            spill(label, right, lam)
        elif lc < min_cluster_size:
            relabel[right] = label
            spill(label, left, lam)
        else:
            relabel[left] = label
            spill(label, right, lam)
    return rows


# --- stage 5: cluster selection ------------------------------------------------------

def _stability(rows, root: int) -> dict[int, float]:
    birth = {root: 0.0}
    for _, child, lam, _ in rows:
        birth[child] = lam
    stab: dict[int, float] = {}
    with np.errstate(invalid="ignore"):
        for parent, _, lam, size in rows:
            stab[parent] = stab.get(parent, 0.0) + (lam - birth[parent]) * size
    return stab


def select_clusters(rows, n: int, epsilon: float, allow_single_cluster: bool) -> set[int]:
    root = n
    stability = _stability(rows, root)
    tree = [(p, c, lam, s) for p, c, lam, s in rows if s > 1]
    children: dict[int, list[int]] = {}
    parent_of: dict[int, int] = {}
    birth: dict[int, float] = {}
    for p, c, lam, _ in tree:
        children.setdefault(p, []).append(c)
        parent_of[c] = p
        birth[c] = lam

    def descendants(node: int) -> list[int]:
        out, queue = [], [node]
        while queue:
            out.extend(queue)
            queue = [c for q in queue for c in children.get(q, ())]
        return out[1:]

    nodes = sorted(stability, reverse=True)
    if not allow_single_cluster:
        nodes = nodes[:-1]
    selected = {c: True for c in nodes}
    for node in nodes:
        sub = float(np.sum([stability[c] for c in children.get(node, ())]))
        if sub > stability[node]:
            selected[node] = False
            stability[node] = sub
        else:
            for d in descendants(node):
                selected[d] = False

    if epsilon != 0.0 and tree:
        eom = [c for c in selected if selected[c]]
        if len(eom) == 1 and eom[0] == root:
            chosen = set(eom) if allow_single_cluster else set()
        else:
            chosen = _epsilon_search(eom, parent_of, birth, root, epsilon, allow_single_cluster, descendants)
        for c in selected:
            selected[c] = c in chosen
    return {c for c in selected if selected[c]}


def _epsilon_search(leaves, parent_of, birth, root, epsilon, allow_single, descendants) -> set[int]:
    def upwards(leaf: int) -> int:
        parent = parent_of[leaf]
        if parent == root:
            return parent if allow_single else leaf
        if 1.0 / birth[parent] > epsilon:
            return parent
        return upwards(parent)

    chosen: list[int] = []
    processed: set[int] = set()
    for leaf in sorted(leaves):
        if 1.0 / birth[leaf] < epsilon:
            if leaf not in processed:
                top = upwards(leaf)
                chosen.append(top)
                processed.update(descendants(top))
        else:
            chosen.append(leaf)
    return set(chosen)


def _label_points(rows, n: int, clusters: set[int], epsilon: float, allow_single: bool) -> np.ndarray:
    root = n
    up: dict[int, int] = {}
    point_lambda = np.zeros(n)
    for p, c, lam, _ in rows:
        up[c] = p
        if c < n:
            point_lambda[c] = lam
    labels = np.full(n, -1, dtype=np.int64)
    resolved: dict[int, int] = {}

    def top(node: int) -> int:
        trail = []
        while node not in clusters and node != root and node not in resolved:
            trail.append(node)
            node = up[node]
        found = resolved.get(node, node)
        for t in trail:
            resolved[t] = found
        return found

    single_threshold = None
    if root in clusters and allow_single and len(clusters) == 1:
        if epsilon != 0.0:
            single_threshold = 1.0 / epsilon
        else:
            single_threshold = max(lam for p, _, lam, _ in rows if p == root)
    order = sorted(clusters)
    for i in range(n):
        c = top(up[i])
        if c != root:
            labels[i] = order.index(c)
        elif single_threshold is not None and point_lambda[i] >= single_threshold:
            labels[i] = 0
    return labels


# --- entry point ----------------------------------------------------------------------

def _canonical(labels: np.ndarray, min_cluster_size: int) -> tuple[tuple[int, ...], tuple[tuple[int, ...], ...]]:
    members: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        if lab >= 0:
            members.setdefault(int(lab), []).append(i)
    # a single-cluster root can shed most members to its threshold; never report
    # a cluster below min_cluster_size
    groups = sorted((m for m in members.values() if len(m) >= min_cluster_size), key=lambda m: m[0])
    out = [-1] * len(labels)
    for cid, m in enumerate(groups):
        for i in m:
            out[i] = cid
    return tuple(out), tuple(tuple(m) for m in groups)


def hdbscan(points: Sequence[Sequence[float]] | np.ndarray, params: HdbscanParams = HdbscanParams()) -> ClusteringResult:
    """Cluster ``points`` with Euclidean distance.

    Cluster ids are renumbered 0..C-1 in order of each cluster's smallest
    member index; -1 marks noise.
    """
    X = as_matrix(points)
    n = X.shape[0]
    if n < params.min_cluster_size or n < 2:
        return ClusteringResult(tuple([-1] * n), (), params)
    k = min(params.min_samples, n)
    # equal mutual-reachability weights are common, and the index-order tie-break
    # then leaks the input order into the tree; fix the order by content instead
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    dist = _Distances(Xs)
    core = core_distances(dist, n, k)
    hier = single_linkage(prim_mst(dist, core), n)
    rows = condense_tree(hier, params.min_cluster_size)
    chosen = select_clusters(rows, n, params.cluster_selection_epsilon, params.allow_single_cluster)
    raw = np.empty(n, dtype=np.int64)
    raw[order] = _label_points(rows, n, chosen, params.cluster_selection_epsilon, params.allow_single_cluster)
    labels, clusters = _canonical(raw, params.min_cluster_size)
    return ClusteringResult(labels, clusters, params)
