"""Sample-selection strategies for the active loop.

The importance-weight score for an unlabeled candidate x is

    s(x) = (1 - g(x)) / g(x) * H(class_probs(x))

where g is the discriminator's probability that x belongs to the labeled
side. (1-g)/g estimates the target/source density ratio (diversity cue);
H is the prediction entropy (uncertainty cue). The remaining strategies
are the usual active-learning baselines: best-versus-second-best margins,
k-means centroids, greedy k-center cover, mean-distance diversity, and
uniform random.

Ties everywhere break toward the lowest index so selections are
deterministic across platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import dann, nn
from .errors import DimensionMismatchError, SelectionError


class Strategy(str, Enum):
    IMPORTANCE_WEIGHT = "importance-weight"
    DIVERSITY_CUE_ONLY = "diversity-cue"
    UNCERTAINTY_CUE_ONLY = "uncertainty-cue"
    KMEANS = "kmeans"
    KCENTER = "kcenter"
    AVG_DISTANCE_DIVERSITY = "avg-distance"
    BVSB = "bvsb"
    ENTROPY_ONLY = "entropy"
    RANDOM = "random"


@dataclass
class ScoredCandidate:
    """A candidate's position in the unlabeled pool plus its score breakdown.

    Cues are NaN for strategies where the diversity/uncertainty
    factorization does not apply.
    """

    index: int
    score: float
    diversity_cue: float = math.nan
    uncertainty_cue: float = math.nan


def importance_scores(
    domain_probs: np.ndarray, class_probs: np.ndarray
) -> list[ScoredCandidate]:
    """Score candidates by density ratio times prediction entropy."""
    g = np.asarray(domain_probs, dtype=np.float64).reshape(-1)
    p = np.asarray(class_probs, dtype=np.float64)
    if g.shape[0] != p.shape[0]:
        raise DimensionMismatchError(
            f"{g.shape[0]} domain probabilities but {p.shape[0]} class rows"
        )
    ratio = (1.0 - g) / g
    h = nn.entropy(p)
    return [
        ScoredCandidate(i, float(ratio[i] * h[i]), float(ratio[i]), float(h[i]))
        for i in range(g.shape[0])
    ]


def bvsb_scores(class_probs: np.ndarray) -> np.ndarray:
    """Margin between the best and second-best class probability per row.

    Small margin = high uncertainty, so selection takes ascending margins.
    """
    p = np.asarray(class_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise SelectionError("best-versus-second-best needs at least two classes")
    part = np.partition(p, p.shape[1] - 2, axis=1)
    return part[:, -1] - part[:, -2]


def top_by_score(scores: np.ndarray, b: int, *, descending: bool = True) -> np.ndarray:
    """Indices of the b best scores; ties resolve to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    key = -scores if descending else scores
    order = np.argsort(key, kind="stable")
    return order[:b]


def kcenter_select(
    features_unlabeled: np.ndarray, features_labeled: np.ndarray, b: int
) -> list[int]:
    """Greedy farthest-first cover of the unlabeled pool.

    Repeatedly picks the unlabeled point farthest (L2) from the labeled
    set plus everything picked so far. With no labeled points, the first
    center is index 0.
    """
    x = np.asarray(features_unlabeled, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise SelectionError("k-center needs a nonempty unlabeled pool")
    if b > n:
        raise SelectionError(f"budget {b} exceeds pool size {n}")
    labeled = np.asarray(features_labeled, dtype=np.float64)
    if labeled.shape[0] > 0:
        diffs = x[:, None, :] - labeled[None, :, :]
        min_dist = np.sqrt((diffs**2).sum(axis=2)).min(axis=1)
    else:
        min_dist = np.full(n, np.inf)
    selected: list[int] = []
    for _ in range(b):
        pick = int(np.argmax(min_dist))  # argmax takes the first max: lowest index
        selected.append(pick)
        d_new = np.sqrt(((x - x[pick]) ** 2).sum(axis=1))
        min_dist = np.minimum(min_dist, d_new)
        min_dist[pick] = -np.inf
    return selected


def kcenter_radius(
    features_unlabeled: np.ndarray, features_labeled: np.ndarray, selected: list[int]
) -> float:
    """Covering radius: max over unselected points of the distance to the
    labeled-plus-selected set."""
    x = np.asarray(features_unlabeled, dtype=np.float64)
    centers = [np.asarray(features_labeled, dtype=np.float64).reshape(-1, x.shape[1])]
    if selected:
        centers.append(x[np.asarray(selected, dtype=int)])
    c = np.vstack(centers)
    if c.shape[0] == 0:
        return math.inf
    rest = np.setdiff1d(np.arange(x.shape[0]), np.asarray(selected, dtype=int))
    if rest.shape[0] == 0:
        return 0.0
    diffs = x[rest][:, None, :] - c[None, :, :]
    return float(np.sqrt((diffs**2).sum(axis=2)).min(axis=1).max())


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a center; reuse index order
            centers[j] = x[j % n]
            continue
        r = rng.random() * total
        pick = int(np.searchsorted(np.cumsum(d2), r, side="right"))
        pick = min(pick, n - 1)
        centers[j] = x[pick]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans_select(
    features_unlabeled: np.ndarray, b: int, rng: np.random.Generator,
    *, max_iter: int = 100, rel_tol: float = 1e-6,
) -> list[int]:
    """Lloyd's algorithm with seeded k-means++ init; picks the sample
    nearest each centroid. Degenerate pools fall back to ascending-index
    fill so the result always has b distinct indices."""
    x = np.asarray(features_unlabeled, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise SelectionError("k-means needs a nonempty unlabeled pool")
    if b > n:
        raise SelectionError(f"budget {b} exceeds pool size {n}")
    if b == n:
        return list(range(n))
    centers = _kmeans_pp_init(x, b, rng)
    prev_inertia = math.inf
    assign = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), assign].sum())
        for j in range(b):
            members = x[assign == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
        if prev_inertia < math.inf and prev_inertia > 0:
            if abs(prev_inertia - inertia) / prev_inertia < rel_tol:
                break
        elif inertia == prev_inertia:
            break
        prev_inertia = inertia
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    picks: list[int] = []
    taken = np.zeros(n, dtype=bool)
    for j in range(b):
        members = np.where(assign == j)[0]
        members = members[~taken[members]]
        if members.shape[0] == 0:
            continue
        best = members[int(np.argmin(d2[members, j]))]
        picks.append(int(best))
        taken[best] = True
    for i in range(n):  # fill from empty or duplicate clusters
        if len(picks) == b:
            break
        if not taken[i]:
            picks.append(i)
            taken[i] = True
    return picks


def avg_distance_select(
    features_unlabeled: np.ndarray, features_labeled_target: np.ndarray, b: int
) -> list[int]:
    """Rank by mean L2 distance to the labeled target pool, descending."""
    x = np.asarray(features_unlabeled, dtype=np.float64)
    lt = np.asarray(features_labeled_target, dtype=np.float64)
    if lt.shape[0] == 0:
        raise SelectionError("mean-distance diversity needs labeled target data")
    if b > x.shape[0]:
        raise SelectionError(f"budget {b} exceeds pool size {x.shape[0]}")
    diffs = x[:, None, :] - lt[None, :, :]
    mean_dist = np.sqrt((diffs**2).sum(axis=2)).mean(axis=1)
    return [int(i) for i in top_by_score(mean_dist, b)]


@dataclass
class SelectionResult:
    indices: list[int]  # positions within the unlabeled pool, selection order
    scored: list[ScoredCandidate] | None  # None for set-construction strategies


def select(
    strategy: Strategy,
    model: dann.DannModel,
    unlabeled_features: np.ndarray,
    labeled_target_features: np.ndarray,
    b: int,
    rng: np.random.Generator,
) -> SelectionResult:
    """Pick b distinct unlabeled candidates under the given strategy.

    Strategies that need labeled target data fall back to uniform random
    in the first round, when that pool is still empty.
    """
    n = unlabeled_features.shape[0]
    if b > n:
        raise SelectionError(f"budget {b} exceeds unlabeled pool size {n}")
    if strategy == Strategy.AVG_DISTANCE_DIVERSITY and labeled_target_features.shape[0] == 0:
        strategy = Strategy.RANDOM

    if strategy == Strategy.RANDOM:
        picks = rng.permutation(n)[:b]
        return SelectionResult([int(i) for i in picks], None)

    if strategy in (
        Strategy.IMPORTANCE_WEIGHT,
        Strategy.DIVERSITY_CUE_ONLY,
        Strategy.UNCERTAINTY_CUE_ONLY,
        Strategy.ENTROPY_ONLY,
        Strategy.BVSB,
    ):
        class_probs = dann.predict_class_probs(model, unlabeled_features)
        if strategy == Strategy.BVSB:
            margins = bvsb_scores(class_probs)
            order = top_by_score(margins, b, descending=False)
            scored = [ScoredCandidate(i, float(margins[i])) for i in range(n)]
            return SelectionResult([int(i) for i in order], scored)
        domain_probs = dann.predict_domain_prob(model, unlabeled_features)
        scored = importance_scores(domain_probs, class_probs)
        if strategy == Strategy.IMPORTANCE_WEIGHT:
            scores = np.array([c.score for c in scored])
        elif strategy == Strategy.DIVERSITY_CUE_ONLY:
            scores = np.array([c.diversity_cue for c in scored])
        else:  # uncertainty cue and plain entropy are the same ranking
            scores = np.array([c.uncertainty_cue for c in scored])
        order = top_by_score(scores, b)
        return SelectionResult([int(i) for i in order], scored)

    feats_unl = dann.extract_features(model, unlabeled_features)
    if strategy == Strategy.KMEANS:
        return SelectionResult(kmeans_select(feats_unl, b, rng), None)
    if strategy == Strategy.KCENTER:
        if labeled_target_features.shape[0] > 0:
            feats_lab = dann.extract_features(model, labeled_target_features)
        else:
            feats_lab = np.zeros((0, feats_unl.shape[1]))
        return SelectionResult(kcenter_select(feats_unl, feats_lab, b), None)
    if strategy == Strategy.AVG_DISTANCE_DIVERSITY:
        feats_lab = dann.extract_features(model, labeled_target_features)
        indices = avg_distance_select(feats_unl, feats_lab, b)
        diffs = feats_unl[:, None, :] - feats_lab[None, :, :]
        mean_dist = np.sqrt((diffs**2).sum(axis=2)).mean(axis=1)
        scored = [ScoredCandidate(i, float(mean_dist[i])) for i in range(n)]
        return SelectionResult(indices, scored)
    raise SelectionError(f"unknown strategy {strategy!r}")  # pragma: no cover
