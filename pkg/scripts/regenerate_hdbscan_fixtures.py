"""Record scikit-learn HDBSCAN labels for the synthetic 2-D datasets in tests/fixtures.

scikit-learn is only the reference here; the package never imports it.
Points are stored in lexicographic order: the reference breaks distance ties
by input position, and opinionsum clusters in that same canonical order.
Each dataset is re-checked against opinionsum.density.hdbscan before it is
written, and the script exits non-zero on any disagreement.

    python3 scripts/regenerate_hdbscan_fixtures.py
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
import sklearn
from sklearn.cluster import HDBSCAN
from sklearn.metrics import adjusted_rand_score

from opinionsum.density import HdbscanParams, hdbscan

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "hdbscan"


def datasets() -> dict[str, tuple[np.ndarray, HdbscanParams]]:
    rng = np.random.default_rng(20240611)
    base = HdbscanParams(min_samples=5, min_cluster_size=5, cluster_selection_epsilon=0.05)
    blob = lambda c, n, s: rng.normal(c, s, size=(n, 2))  # noqa: E731
    out = {}
    out["two_blobs"] = (np.vstack([blob((0, 0), 60, 0.3), blob((5, 5), 60, 0.3)]), base)
    out["three_blobs"] = (
        np.vstack([blob((0, 0), 50, 0.4), blob((6, 0), 50, 0.4), blob((3, 5), 50, 0.4)]),
        base,
    )
    out["blob_plus_noise"] = (np.vstack([blob((2, 2), 80, 0.25), rng.uniform(-6, 10, size=(40, 2))]), base)
    out["two_blobs_five_outliers"] = (
        np.vstack([blob((0, 0), 30, 0.3), blob((4, 4), 30, 0.3), rng.uniform(-8, 12, size=(5, 2))]),
        base,
    )
    out["all_noise"] = (rng.uniform(0, 100, size=(12, 2)), base)
    dup = np.repeat(np.array([[0.0, 0.0], [3.0, 3.0], [3.0, 0.0]]), [20, 15, 3], axis=0)
    out["duplicates"] = (dup + 0.0, base)
    out["unequal_density"] = (
        np.vstack([blob((0, 0), 100, 0.2), blob((4, 0), 40, 1.0), rng.uniform(-4, 8, size=(20, 2))]),
        base,
    )
    out["single_blob_allow_single"] = (
        blob((1, 1), 70, 0.5),
        HdbscanParams(min_samples=5, min_cluster_size=5, cluster_selection_epsilon=0.05, allow_single_cluster=True),
    )
    out["single_blob_allow_single_eps0"] = (
        blob((1, 1), 70, 0.5),
        HdbscanParams(min_samples=4, min_cluster_size=5, cluster_selection_epsilon=0.0, allow_single_cluster=True),
    )
    out["nested_eps_merge"] = (
        np.vstack([blob((0, 0), 40, 0.1), blob((0.8, 0), 40, 0.1), blob((6, 6), 40, 0.3)]),
        HdbscanParams(min_samples=5, min_cluster_size=8, cluster_selection_epsilon=1.0),
    )
    return out


def reference_labels(X: np.ndarray, p: HdbscanParams) -> np.ndarray:
    model = HDBSCAN(
        min_cluster_size=p.min_cluster_size,
        min_samples=p.min_samples,
        cluster_selection_epsilon=p.cluster_selection_epsilon,
        allow_single_cluster=p.allow_single_cluster,
        algorithm="brute",
        metric="euclidean",
    )
    return model.fit_predict(X)


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    bad = 0
    for name, (X, p) in datasets().items():
        X = np.round(X, 6)  # stored values are exactly what gets clustered
        X = X[np.lexsort(X.T[::-1])]
        ref = reference_labels(X, p)
        ours = np.asarray(hdbscan(X, p).labels)
        ari = adjusted_rand_score(ref, ours)
        same_noise = bool(np.array_equal(ref == -1, ours == -1))
        ok = ari == 1.0 and same_noise
        bad += not ok
        print(f"{name:30s} n={len(X):3d} clusters={len(set(ref) - {-1})} noise={int((ref == -1).sum()):3d} "
              f"ari={ari:.4f} {'ok' if ok else 'MISMATCH'}")
        record = {
            "name": name,
            "reference": f"sklearn {sklearn.__version__} HDBSCAN(algorithm='brute')",
            "params": p.to_dict(),
            "points": X.tolist(),
            "labels": ref.tolist(),
        }
        (OUT / f"{name}.json").write_text(json.dumps(record) + "\n", encoding="utf-8")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
