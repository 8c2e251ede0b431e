"""Round-based active learning over a fixed source/target split.

One run: train an initial model on labeled source plus unlabeled target,
then repeatedly score the unlabeled pool, buy labels for the top
candidates from the oracle, move them into the labeled-target pool,
retrain from scratch under the configured scheme, and evaluate on the
held-out target test set.

All randomness is drawn from substreams keyed by (seed, purpose, round),
so two strategies under the same seed share identical training streams
until the first round where their selections differ.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dann, sampling
from .errors import EmptyBatchError, SelectionError

# substream purposes; keep stable or old runs stop replaying
_SS_TRAIN = 3
_SS_SELECT = 4


def substream(seed: int, purpose: int, round_index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose, round_index]))


@dataclass
class Oracle:
    """Ground-truth label source for the target pool.

    Re-queries must agree with what was handed out before; the record of
    answered queries makes that checkable.
    """

    labels: np.ndarray
    answered: dict[int, int] = field(default_factory=dict)

    def query(self, indices: np.ndarray) -> np.ndarray:
        out = []
        for i in np.asarray(indices, dtype=int):
            label = int(self.labels[i])
            if i in self.answered and self.answered[i] != label:
                raise RuntimeError(f"oracle label for index {i} changed between queries")
            self.answered[i] = label
            out.append(label)
        return np.asarray(out, dtype=int)


@dataclass
class ActiveState:
    """Evolving partition of the target pool into labeled and unlabeled."""

    labeled_target: np.ndarray  # original dataset indices
    unlabeled_target: np.ndarray
    round: int = 0

    @classmethod
    def fresh(cls, pool_indices: np.ndarray) -> "ActiveState":
        return cls(np.empty(0, dtype=int), np.asarray(pool_indices, dtype=int).copy())

    def acquire(self, chosen: np.ndarray) -> None:
        chosen = np.asarray(chosen, dtype=int)
        mask = np.isin(self.unlabeled_target, chosen)
        if mask.sum() != chosen.shape[0]:
            raise SelectionError("selection included indices outside the unlabeled pool")
        self.labeled_target = np.concatenate([self.labeled_target, chosen])
        self.unlabeled_target = self.unlabeled_target[~mask]
        self.round += 1


@dataclass
class RoundRecord:
    round: int
    selected: list[int]  # original target indices, selection order
    n_labeled: int
    accuracy: float
    loss_traces: list[dict]
    scores: list[dict] | None  # per-candidate snapshot, original indices
    wall_clock_seconds: float  # volatile; excluded from the canonical log


def evaluate(model: dann.DannModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax class matches; argmax ties resolve to
    the lowest class index."""
    if features.shape[0] == 0:
        raise EmptyBatchError("evaluation needs a nonempty test set")
    probs = dann.predict_class_probs(model, features)
    pred = probs.argmax(axis=1)
    return float((pred == np.asarray(labels, dtype=int)).mean())


def _scores_snapshot(
    result: sampling.SelectionResult, pool: np.ndarray, chosen: set[int]
) -> list[dict] | None:
    if result.scored is None:
        return None
    rows = []
    for cand in result.scored:
        orig = int(pool[cand.index])
        rows.append(
            {
                "index": orig,
                "score": None if np.isnan(cand.score) else cand.score,
                "diversity_cue": None if np.isnan(cand.diversity_cue) else cand.diversity_cue,
                "uncertainty_cue": None
                if np.isnan(cand.uncertainty_cue)
                else cand.uncertainty_cue,
                "selected": orig in chosen,
            }
        )
    return rows


@dataclass
class LoopInputs:
    """Everything a run needs once datasets are materialized."""

    source_features: np.ndarray
    source_labels: np.ndarray
    target_features: np.ndarray  # full target set; indices select pool/test
    pool_indices: np.ndarray
    test_indices: np.ndarray
    test_labels: np.ndarray
    oracle: Oracle
    model_spec: dann.ModelSpec
    scheme: dann.TrainScheme
    strategy: sampling.Strategy
    schedule: dann.TrainingSchedule
    budgets: list[int]
    seed: int
    first_round_random: bool = False
    warm_start: bool = False
    labeled_target_domain_label: int = 1
    record_scores: bool = True


def _train_for_round(
    inputs: LoopInputs, state: ActiveState, acquired: dict[int, int], round_index: int,
    warm_model: dann.DannModel | None,
) -> tuple[dann.DannModel, list[dict]]:
    lt = state.labeled_target
    data = dann.RoundData(
        source_features=inputs.source_features,
        source_labels=inputs.source_labels,
        target_features=inputs.target_features[lt],
        target_labels=np.asarray([acquired[int(i)] for i in lt], dtype=int),
        unlabeled_features=inputs.target_features[state.unlabeled_target],
    )
    rng = substream(inputs.seed, _SS_TRAIN, round_index)
    if inputs.scheme == dann.TrainScheme.TARGET_ONLY and lt.shape[0] == 0:
        # nothing to train on yet; evaluate a fresh untrained model
        return dann.build_model(inputs.model_spec, rng), []
    return dann.train_round(
        inputs.model_spec,
        inputs.scheme,
        data,
        inputs.schedule,
        rng,
        warm_model=warm_model,
        labeled_target_domain_label=inputs.labeled_target_domain_label,
    )


def run_active_loop(inputs: LoopInputs) -> tuple[list[RoundRecord], dann.DannModel]:
    """Execute the full selection loop; returns per-round records and the
    final model."""
    if any(b <= 0 for b in inputs.budgets):
        raise SelectionError("budgets must be positive")
    if sum(inputs.budgets) > inputs.pool_indices.shape[0]:
        raise SelectionError(
            f"total budget {sum(inputs.budgets)} exceeds pool size "
            f"{inputs.pool_indices.shape[0]}"
        )
    state = ActiveState.fresh(inputs.pool_indices)
    acquired: dict[int, int] = {}
    records: list[RoundRecord] = []

    t0 = time.perf_counter()
    model, traces = _train_for_round(inputs, state, acquired, 0, None)
    acc = evaluate(model, inputs.target_features[inputs.test_indices], inputs.test_labels)
    records.append(
        RoundRecord(0, [], 0, acc, traces, None, time.perf_counter() - t0)
    )

    for r, budget in enumerate(inputs.budgets, start=1):
        t0 = time.perf_counter()
        strategy = inputs.strategy
        if inputs.first_round_random and r == 1:
            strategy = sampling.Strategy.RANDOM
        result = sampling.select(
            strategy,
            model,
            inputs.target_features[state.unlabeled_target],
            inputs.target_features[state.labeled_target],
            budget,
            substream(inputs.seed, _SS_SELECT, r),
        )
        chosen = state.unlabeled_target[np.asarray(result.indices, dtype=int)]
        labels = inputs.oracle.query(chosen)
        for i, y in zip(chosen, labels):
            acquired[int(i)] = int(y)
        snapshot = (
            _scores_snapshot(result, state.unlabeled_target, set(int(i) for i in chosen))
            if inputs.record_scores
            else None
        )
        state.acquire(chosen)
        model, traces = _train_for_round(
            inputs, state, acquired, r, model if inputs.warm_start else None
        )
        acc = evaluate(model, inputs.target_features[inputs.test_indices], inputs.test_labels)
        records.append(
            RoundRecord(
                r,
                [int(i) for i in chosen],
                int(state.labeled_target.shape[0]),
                acc,
                traces,
                snapshot,
                time.perf_counter() - t0,
            )
        )
    return records, model
