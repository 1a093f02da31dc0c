"""Knowledge-base poisoning attacks against the functional code corpus.

Two attacker models, both operating with their own embedder so the attack
never touches the defender's retrieval stack:

* Scenario I (exposed intents): for every known query, inject the m most
  query-similar vulnerable examples.
* Scenario II (intent-agnostic): cluster the functional corpus, take the
  nearest-to-centroid representative of each cluster (top p% of the corpus),
  and inject each representative's most similar vulnerable example.

Injected examples keep their original summaries (similarity to plausible
queries is exactly the attack channel) and are marked ``tainted`` for
evaluation bookkeeping only.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .embedding import Embedder, build_index, top_k
from .models import CodeExample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoisonPlan:
    """Audit record of one attack: what was injected and why.

    ``trigger`` names the query id (scenario I) or the cluster ordinal
    (scenario II) that first selected the vulnerable example; the injected
    pool has set semantics, so each vulnerable id appears at most once.
    """

    mode: str
    seed: int | None
    injections: tuple[tuple[str, str], ...]
    resulting_corpus_size: int

    def __post_init__(self):
        object.__setattr__(self, "injections",
                           tuple((str(v), str(t)) for v, t in self.injections))
        ids = [v for v, _ in self.injections]
        if len(set(ids)) != len(ids):
            raise ValueError("injected pool must not contain duplicate example ids")


def _taint(example: CodeExample) -> CodeExample:
    return replace(example, tainted=True)


def poison_scenario_1(queries: Sequence[tuple[str, str]], functional: Sequence[CodeExample],
                      vulnerable: Sequence[CodeExample], m: int,
                      attacker_embedder: Embedder) -> tuple[list[CodeExample], PoisonPlan]:
    """Intent-exposed attack: per query, inject its top-m similar vulnerable examples."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not vulnerable:
        raise ValueError("vulnerable corpus is empty")
    if m > len(vulnerable):
        log.warning("m=%d exceeds vulnerable corpus size %d; taking all", m, len(vulnerable))
        m = len(vulnerable)

    index = build_index("attacker-vuln",
                        [(v.id, attacker_embedder.embed(v.summary)) for v in vulnerable],
                        attacker_embedder.identifier, attacker_embedder.dimension)
    by_id = {v.id: v for v in vulnerable}
    injections: dict[str, str] = {}
    for query_id, query_text in queries:
        for vuln_id, _score in top_k(attacker_embedder.embed(query_text), index, m):
            injections.setdefault(vuln_id, str(query_id))

    poisoned = list(functional) + [_taint(by_id[vid]) for vid in injections]
    plan = PoisonPlan(mode="scenario1", seed=None,
                      injections=tuple(injections.items()),
                      resulting_corpus_size=len(poisoned))
    return poisoned, plan


def kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 100,
           ) -> tuple[np.ndarray, np.ndarray]:
    """Seeded Lloyd's k-means with k-means++ style initialization.

    Fully deterministic for a given (points, k, seed): initialization draws
    from ``random.Random(seed)``, assignment ties go to the lowest center
    index, and a center that loses all members keeps its previous position.
    Returns (labels, centers).
    """
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} points")
    rng = random.Random(seed)

    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.randrange(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining points coincide with a center; spread over
            # lowest-index points for determinism.
            centers[j] = points[(j - 1) % n]
            continue
        threshold = rng.random() * total
        cumulative = np.cumsum(d2)
        idx = int(np.searchsorted(cumulative, threshold, side="right"))
        idx = min(idx, n - 1)
        centers[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))

    labels = np.zeros(n, dtype=np.int64)
    points_sq = np.sum(points ** 2, axis=1)
    for _ in range(max_iter):
        # |x - c|^2 expanded; keeps memory at n*k instead of n*k*d.
        distances = (points_sq[:, None] + np.sum(centers ** 2, axis=1)[None, :]
                     - 2.0 * points @ centers.T)
        new_labels = np.argmin(distances, axis=1)
        for j in range(k):
            members = points[new_labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centers


def cluster_representatives(points: np.ndarray, k: int, seed: int) -> list[int]:
    """Nearest-to-centroid member per cluster (ties: lowest point index),
    ordered by cluster ordinal, deduplicated on collapse."""
    labels, centers = kmeans(points, k, seed)
    representatives: list[int] = []
    for j in range(k):
        member_idx = np.flatnonzero(labels == j)
        if len(member_idx) == 0:
            continue
        dists = np.sum((points[member_idx] - centers[j]) ** 2, axis=1)
        representatives.append(int(member_idx[int(np.argmin(dists))]))
    deduped: list[int] = []
    for idx in representatives:
        if idx not in deduped:
            deduped.append(idx)
    if len(deduped) < k:
        log.warning("cluster collapse: %d representatives for k=%d", len(deduped), k)
    return deduped


def poison_scenario_2(functional: Sequence[CodeExample], vulnerable: Sequence[CodeExample],
                      p_percent: float, seed: int, attacker_embedder: Embedder,
                      ) -> tuple[list[CodeExample], PoisonPlan]:
    """Intent-agnostic attack via cluster representatives of the functional corpus.

    ceil(p% of |functional|) clusters are formed over attacker embeddings of
    the summaries; each cluster's nearest-to-centroid example picks its single
    most similar vulnerable example for injection.
    """
    if not 0.0 < p_percent <= 100.0:
        raise ValueError("p_percent must be in (0, 100]")
    if not functional or not vulnerable:
        raise ValueError("both corpora must be non-empty")

    n_rep = math.ceil(p_percent / 100.0 * len(functional))
    points = np.stack([attacker_embedder.embed(e.summary) for e in functional])
    rep_indices = cluster_representatives(points, n_rep, seed)

    vuln_index = build_index("attacker-vuln",
                             [(v.id, attacker_embedder.embed(v.summary)) for v in vulnerable],
                             attacker_embedder.identifier, attacker_embedder.dimension)
    by_id = {v.id: v for v in vulnerable}
    injections: dict[str, str] = {}
    for ordinal, rep_idx in enumerate(rep_indices):
        rep_vector = points[rep_idx]
        vuln_id, _score = top_k(rep_vector, vuln_index, 1)[0]
        injections.setdefault(vuln_id, str(ordinal))

    poisoned = list(functional) + [_taint(by_id[vid]) for vid in injections]
    plan = PoisonPlan(mode="scenario2", seed=seed,
                      injections=tuple(injections.items()),
                      resulting_corpus_size=len(poisoned))
    return poisoned, plan
