"""Per-group opinion clustering: embeddings -> HDBSCAN -> cohesion + representatives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .density import ClusteringResult, HdbscanParams, as_matrix, hdbscan
from .domain import GroupKey, OpinionTuple
from .gateway import Gateway, l2_normalize


@dataclass(frozen=True)
class CohesionStats:
    avg_centroid_distance: float
    avg_pairwise_similarity: float
    size: int

    def to_dict(self) -> dict:
        return {
            "avg_centroid_distance": self.avg_centroid_distance,
            "avg_pairwise_similarity": self.avg_pairwise_similarity,
            "size": self.size,
        }

    @classmethod
    def from_dict(cls, d) -> "CohesionStats":
        return cls(float(d["avg_centroid_distance"]), float(d["avg_pairwise_similarity"]), int(d["size"]))


def cosine_matrix(A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    a = l2_normalize(A)
    b = a if B is None else l2_normalize(B)
    return np.clip(a @ b.T, -1.0, 1.0)


def cohesion(cluster_points) -> CohesionStats:
    """Mean cosine distance to the centroid and mean pairwise cosine similarity."""
    X = as_matrix(cluster_points)
    n = len(X)
    if n == 0:
        raise ValueError("cohesion needs at least one point")
    if n == 1:
        return CohesionStats(0.0, 1.0, 1)
    centroid = X.mean(axis=0)
    if np.linalg.norm(centroid) == 0:
        to_centroid = np.zeros(n)
    else:
        to_centroid = cosine_matrix(X, centroid[None, :])[:, 0]
    sims = cosine_matrix(X)
    iu = np.triu_indices(n, k=1)
    return CohesionStats(
        avg_centroid_distance=float(np.mean(1.0 - to_centroid)),
        avg_pairwise_similarity=float(np.mean(sims[iu])),
        size=n,
    )


def select_representatives(cluster_points, texts: Sequence[str] | None = None, count: int = 3) -> list[int]:
    """Medoid first, then farthest-point picks; ties go to the lowest index.

    ``texts`` is accepted so callers can pass the aligned opinion strings; it
    only has to match ``cluster_points`` in length.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    X = as_matrix(cluster_points)
    n = len(X)
    if texts is not None and len(texts) != n:
        raise ValueError("texts and cluster_points differ in length")
    if n == 0:
        return []
    D = cdist(X, X)
    picks = [int(np.argmin(D.mean(axis=1)))]
    nearest = D[picks[0]].copy()
    while len(picks) < min(count, n):
        masked = nearest.copy()
        masked[picks] = -np.inf
        nxt = int(np.argmax(masked))
        picks.append(nxt)
        nearest = np.minimum(nearest, D[nxt])
    return picks


@dataclass(frozen=True)
class ClusterSummary:
    cluster_id: int
    members: tuple[int, ...]
    cohesion: CohesionStats
    representatives: tuple[int, ...]


@dataclass(frozen=True)
class GroupClustering:
    group: GroupKey
    result: ClusteringResult
    clusters: tuple[ClusterSummary, ...]
    noise: tuple[int, ...]
    embeddings: np.ndarray

    def to_record(self, opinion_ids: Sequence[str]) -> dict:
        return {
            "group_key": self.group.to_dict(),
            "params": self.result.params.to_dict(),
            "clusters": [
                {
                    "id": c.cluster_id,
                    "member_opinion_ids": [opinion_ids[i] for i in c.members],
                    "cohesion": c.cohesion.to_dict(),
                    "representative_ids": [opinion_ids[i] for i in c.representatives],
                }
                for c in self.clusters
            ],
            "noise_opinion_ids": [opinion_ids[i] for i in self.noise],
        }


def summarize_clusters(embeddings: np.ndarray, result: ClusteringResult, n_representatives: int = 3) -> list[ClusterSummary]:
    out = []
    for cid, members in enumerate(result.clusters):
        pts = embeddings[list(members)]
        local = select_representatives(pts, count=n_representatives)
        out.append(ClusterSummary(cid, members, cohesion(pts), tuple(members[i] for i in local)))
    return out


# a group made of one tight blob of near-duplicates should come back as one cluster
GROUP_PARAMS = HdbscanParams(allow_single_cluster=True)


def cluster_group(
    group: GroupKey,
    tuples: Sequence[OpinionTuple],
    gateway: Gateway,
    params: HdbscanParams = GROUP_PARAMS,
    n_representatives: int = 3,
) -> GroupClustering:
    if not tuples:
        raise ValueError(f"group {group.slug()} has no opinions")
    emb = np.asarray(gateway.embed_batch([t.opinion for t in tuples]))
    result = hdbscan(emb, params)
    clusters = summarize_clusters(emb, result, n_representatives)
    return GroupClustering(group, result, tuple(clusters), result.noise, emb)
