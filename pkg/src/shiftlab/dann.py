"""Domain-adversarial model: feature extractor, class predictor, domain
discriminator, and the four training schemes built on top of them.

The adversarial step realizes the min-max game with a gradient-reversal
construction: the discriminator descends its own logistic loss, while the
feature extractor receives that loss's gradient scaled by minus the
adversarial weight. The reversal is implemented by scaling the fully
backpropagated feature-parameter gradients, so the sign law

    grad_f(domain term) == -weight * grad_f(unreversed domain loss)

holds exactly in floating point, not just analytically.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import nn
from .errors import DimensionMismatchError, EmptyBatchError, SchemeDataError

DOMAIN_PROB_CLAMP = 1e-6  # keeps the density-ratio (1-g)/g finite


class TrainScheme(str, Enum):
    ADVERSARIAL = "adversarial"
    JOINT = "joint"
    FINE_TUNE = "fine-tune"
    TARGET_ONLY = "target-only"


@dataclass
class LabeledBatch:
    features: np.ndarray
    class_labels: np.ndarray
    domain_labels: np.ndarray  # 1 = drawn from the labeled/source side

    def __post_init__(self):
        n = self.features.shape[0]
        if self.class_labels.shape[0] != n or self.domain_labels.shape[0] != n:
            raise DimensionMismatchError("labeled batch arrays disagree on row count")


@dataclass
class UnlabeledBatch:
    features: np.ndarray
    domain_labels: np.ndarray  # 0 = unlabeled target side

    @classmethod
    def of(cls, features: np.ndarray) -> "UnlabeledBatch":
        return cls(features, np.zeros(features.shape[0]))


@dataclass
class ModelSpec:
    """Architecture and loss weights for one model instance."""

    input_dim: int
    num_classes: int
    feature_dims: list[int] = field(default_factory=lambda: [32, 32])
    predictor_dims: list[int] = field(default_factory=list)
    discriminator_dims: list[int] = field(default_factory=lambda: [16])
    adversarial_weight: float = 0.1
    entropy_weight: float = 0.1
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.adversarial_weight < 0 or self.entropy_weight < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class DannModel:
    feature_extractor: nn.DenseStack
    class_predictor: nn.DenseStack
    discriminator: nn.DenseStack
    adam_feature: nn.AdamState
    adam_predictor: nn.AdamState
    adam_discriminator: nn.AdamState
    adversarial_weight: float
    entropy_weight: float
    num_classes: int
    rng: np.random.Generator

    def __post_init__(self):
        feat = self.feature_extractor.output_dim
        if self.class_predictor.input_dim != feat or self.discriminator.input_dim != feat:
            raise DimensionMismatchError(
                "predictor and discriminator must consume the feature dimension "
                f"{feat}, got {self.class_predictor.input_dim} and "
                f"{self.discriminator.input_dim}"
            )
        if self.discriminator.output_dim != 1:
            raise DimensionMismatchError("discriminator must emit a single logit")

    @property
    def input_dim(self) -> int:
        return self.feature_extractor.input_dim

    def set_learning_rate(self, lr: float) -> None:
        for state in (self.adam_feature, self.adam_predictor, self.adam_discriminator):
            state.learning_rate = lr


def build_model(spec: ModelSpec, rng: np.random.Generator) -> DannModel:
    """Fresh model with Glorot-initialized stacks and zeroed Adam state."""
    feature = nn.glorot_stack(
        [spec.input_dim, *spec.feature_dims], rng, final_activation="relu"
    )
    feat_dim = spec.feature_dims[-1]
    predictor = nn.glorot_stack([feat_dim, *spec.predictor_dims, spec.num_classes], rng)
    discriminator = nn.glorot_stack([feat_dim, *spec.discriminator_dims, 1], rng)
    return DannModel(
        feature_extractor=feature,
        class_predictor=predictor,
        discriminator=discriminator,
        adam_feature=nn.AdamState.for_parameters(feature.parameters(), spec.learning_rate),
        adam_predictor=nn.AdamState.for_parameters(predictor.parameters(), spec.learning_rate),
        adam_discriminator=nn.AdamState.for_parameters(
            discriminator.parameters(), spec.learning_rate
        ),
        adversarial_weight=spec.adversarial_weight,
        entropy_weight=spec.entropy_weight,
        num_classes=spec.num_classes,
        rng=rng,
    )


def extract_features(model: DannModel, x: np.ndarray) -> np.ndarray:
    out, _ = nn.forward(model.feature_extractor, x)
    return out


def predict_class_probs(model: DannModel, x: np.ndarray) -> np.ndarray:
    """Softmax class distribution per row."""
    feats, _ = nn.forward(model.feature_extractor, x)
    logits, _ = nn.forward(model.class_predictor, feats)
    return nn.softmax(logits)


def predict_domain_prob(model: DannModel, x: np.ndarray) -> np.ndarray:
    """Probability each row came from the labeled/source side, clamped away
    from 0 and 1 so downstream density ratios stay finite."""
    feats, _ = nn.forward(model.feature_extractor, x)
    logit, _ = nn.forward(model.discriminator, feats)
    prob = nn.sigmoid(logit[:, 0])
    return np.clip(prob, DOMAIN_PROB_CLAMP, 1.0 - DOMAIN_PROB_CLAMP)


def _zero_grads_like(stack: nn.DenseStack) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in stack.parameters()]


def _accumulate(target: list[np.ndarray], term: list[np.ndarray], scale: float) -> None:
    # scale == 0 terms are skipped by callers so that disabling a loss is
    # bitwise identical to never computing it.
    for t, g in zip(target, term):
        t += scale * g


def adversarial_gradients(
    model: DannModel, labeled: LabeledBatch, unlabeled: UnlabeledBatch
) -> tuple[dict[str, list[np.ndarray]], dict[str, float]]:
    """All head gradients for one adversarial update, without applying them.

    Feature-extractor gradient = class term + entropy_weight * entropy term
    - adversarial_weight * domain term, each term backpropagated separately.
    The unreversed domain term is returned under "feature_domain_unreversed"
    for the sign-law check.
    """
    if labeled.features.shape[0] == 0:
        raise EmptyBatchError("adversarial step needs a nonempty labeled batch")
    n_unl = unlabeled.features.shape[0]

    feats_lab, cache_f_lab = nn.forward(model.feature_extractor, labeled.features)
    logits_lab, cache_y_lab = nn.forward(model.class_predictor, feats_lab)
    class_loss, d_logits = nn.softmax_cross_entropy(logits_lab, labeled.class_labels)
    grads_y, d_feat_class = nn.backward(model.class_predictor, cache_y_lab, d_logits)
    grads_f, _ = nn.backward(model.feature_extractor, cache_f_lab, d_feat_class)

    entropy_loss = 0.0
    if n_unl > 0:
        feats_unl, cache_f_unl = nn.forward(model.feature_extractor, unlabeled.features)
        logits_unl, cache_y_unl = nn.forward(model.class_predictor, feats_unl)
        h, dh = nn.entropy_of_logits(logits_unl)
        entropy_loss = float(h.mean())
        if model.entropy_weight != 0.0:
            grads_y_ent, d_feat_ent = nn.backward(model.class_predictor, cache_y_unl, dh / n_unl)
            grads_f_ent, _ = nn.backward(model.feature_extractor, cache_f_unl, d_feat_ent)
            _accumulate(grads_y, grads_y_ent, model.entropy_weight)
            _accumulate(grads_f, grads_f_ent, model.entropy_weight)

    domain_loss = 0.0
    grads_d = _zero_grads_like(model.discriminator)
    grads_f_dom = _zero_grads_like(model.feature_extractor)
    if n_unl > 0:
        all_feats = np.vstack([feats_lab, feats_unl])
        dom_logit, cache_d = nn.forward(model.discriminator, all_feats)
        dom_targets = np.concatenate([labeled.domain_labels, unlabeled.domain_labels])
        domain_loss, d_dom = nn.binary_logistic_loss(dom_logit[:, 0], dom_targets)
        grads_d, d_feat_dom = nn.backward(model.discriminator, cache_d, d_dom[:, None])
        n_lab = feats_lab.shape[0]
        g_lab, _ = nn.backward(model.feature_extractor, cache_f_lab, d_feat_dom[:n_lab])
        g_unl, _ = nn.backward(model.feature_extractor, cache_f_unl, d_feat_dom[n_lab:])
        for tot, a, b in zip(grads_f_dom, g_lab, g_unl):
            tot += a
            tot += b

    grads = {
        "feature": grads_f,
        "predictor": grads_y,
        "discriminator": grads_d,
        "feature_domain_unreversed": grads_f_dom,
    }
    if model.adversarial_weight != 0.0:
        _accumulate(grads_f, grads_f_dom, -model.adversarial_weight)
    losses = {
        "class_loss": class_loss,
        "domain_loss": domain_loss,
        "entropy_loss": entropy_loss,
    }
    return grads, losses


def adversarial_step(
    model: DannModel, labeled: LabeledBatch, unlabeled: UnlabeledBatch
) -> dict[str, float]:
    """One simultaneous min-max update of all three heads."""
    grads, losses = adversarial_gradients(model, labeled, unlabeled)
    nn.adam_step(model.feature_extractor.parameters(), grads["feature"], model.adam_feature)
    nn.adam_step(model.class_predictor.parameters(), grads["predictor"], model.adam_predictor)
    nn.adam_step(
        model.discriminator.parameters(), grads["discriminator"], model.adam_discriminator
    )
    return losses


def supervised_step(
    model: DannModel,
    labeled: LabeledBatch,
    unlabeled: UnlabeledBatch | None = None,
    *,
    train_discriminator: bool = False,
) -> dict[str, float]:
    """Descend the class loss only; optionally keep training the
    discriminator on the labeled-vs-unlabeled split without feeding any
    gradient back into the feature extractor."""
    if labeled.features.shape[0] == 0:
        raise EmptyBatchError("supervised step needs a nonempty labeled batch")
    feats_lab, cache_f = nn.forward(model.feature_extractor, labeled.features)
    logits, cache_y = nn.forward(model.class_predictor, feats_lab)
    class_loss, d_logits = nn.softmax_cross_entropy(logits, labeled.class_labels)
    grads_y, d_feat = nn.backward(model.class_predictor, cache_y, d_logits)
    grads_f, _ = nn.backward(model.feature_extractor, cache_f, d_feat)

    domain_loss = 0.0
    grads_d = None
    if train_discriminator and unlabeled is not None and unlabeled.features.shape[0] > 0:
        all_feats = np.vstack([feats_lab, extract_features(model, unlabeled.features)])
        dom_logit, cache_d = nn.forward(model.discriminator, all_feats)
        dom_targets = np.concatenate([labeled.domain_labels, unlabeled.domain_labels])
        domain_loss, d_dom = nn.binary_logistic_loss(dom_logit[:, 0], dom_targets)
        grads_d, _ = nn.backward(model.discriminator, cache_d, d_dom[:, None])

    nn.adam_step(model.feature_extractor.parameters(), grads_f, model.adam_feature)
    nn.adam_step(model.class_predictor.parameters(), grads_y, model.adam_predictor)
    if grads_d is not None:
        nn.adam_step(
            model.discriminator.parameters(), grads_d, model.adam_discriminator
        )
    return {"class_loss": class_loss, "domain_loss": domain_loss, "entropy_loss": 0.0}


@dataclass
class Phase:
    epochs: int
    learning_rate: float


@dataclass
class TrainingSchedule:
    phases: list[Phase]
    batch_size: int = 64

    def scaled(self, factor: float) -> "TrainingSchedule":
        return TrainingSchedule(
            [Phase(p.epochs, p.learning_rate * factor) for p in self.phases],
            self.batch_size,
        )


@dataclass
class RoundData:
    """Pools available to one training round. Arrays may have zero rows."""

    source_features: np.ndarray
    source_labels: np.ndarray
    target_features: np.ndarray  # labeled target rows
    target_labels: np.ndarray
    unlabeled_features: np.ndarray

    @property
    def n_labeled_target(self) -> int:
        return self.target_features.shape[0]


def _pooled_labeled(data: RoundData, labeled_target_domain_label: int):
    feats = np.vstack([data.source_features, data.target_features])
    labels = np.concatenate([data.source_labels, data.target_labels]).astype(int)
    domains = np.concatenate(
        [
            np.ones(data.source_features.shape[0]),
            np.full(data.target_features.shape[0], float(labeled_target_domain_label)),
        ]
    )
    return feats, labels, domains


def _run_phases(
    model: DannModel,
    feats: np.ndarray,
    labels: np.ndarray,
    domains: np.ndarray,
    unlabeled: np.ndarray,
    schedule: TrainingSchedule,
    rng: np.random.Generator,
    step_fn,
) -> list[dict[str, float]]:
    """Shared epoch/batch loop. step_fn(model, labeled, unlabeled) -> losses."""
    n = feats.shape[0]
    n_unl = unlabeled.shape[0]
    traces = []
    for phase in schedule.phases:
        model.set_learning_rate(phase.learning_rate)
        sums = {"class_loss": 0.0, "domain_loss": 0.0, "entropy_loss": 0.0}
        steps = 0
        for _ in range(phase.epochs):
            order = rng.permutation(n)
            for start in range(0, n, schedule.batch_size):
                idx = order[start : start + schedule.batch_size]
                batch = LabeledBatch(feats[idx], labels[idx], domains[idx])
                if n_unl > 0:
                    pick = rng.choice(n_unl, size=idx.shape[0], replace=n_unl < idx.shape[0])
                    unl = UnlabeledBatch.of(unlabeled[pick])
                else:
                    unl = UnlabeledBatch.of(unlabeled.reshape(0, feats.shape[1]))
                losses = step_fn(model, batch, unl)
                for k in sums:
                    sums[k] += losses[k]
                steps += 1
        traces.append(
            {
                "epochs": phase.epochs,
                "learning_rate": phase.learning_rate,
                **{k: (sums[k] / steps if steps else 0.0) for k in sums},
            }
        )
    return traces


def train_round(
    spec: ModelSpec,
    scheme: TrainScheme,
    data: RoundData,
    schedule: TrainingSchedule,
    rng: np.random.Generator,
    *,
    warm_model: DannModel | None = None,
    labeled_target_domain_label: int = 1,
    fine_tune_lr_factor: float = 0.5,
) -> tuple[DannModel, list[dict[str, float]]]:
    """Train one model for one round of the active loop.

    By default the model is rebuilt from a fresh initialization so that
    rounds are comparable; pass warm_model to resume instead.
    """
    if scheme == TrainScheme.TARGET_ONLY and data.n_labeled_target == 0:
        raise SchemeDataError("target-only training requires labeled target data")
    if scheme != TrainScheme.TARGET_ONLY and data.source_features.shape[0] == 0:
        raise SchemeDataError(f"{scheme.value} training requires labeled source data")

    if warm_model is not None:
        model = warm_model
        model.rng = rng  # checkpoint should capture the active stream
    else:
        model = build_model(spec, rng)
    unl = data.unlabeled_features

    if scheme == TrainScheme.ADVERSARIAL:
        feats, labels, domains = _pooled_labeled(data, labeled_target_domain_label)
        traces = _run_phases(model, feats, labels, domains, unl, schedule, rng, adversarial_step)
    elif scheme == TrainScheme.JOINT:
        feats, labels, domains = _pooled_labeled(data, labeled_target_domain_label)
        step = lambda m, b, u: supervised_step(m, b, u, train_discriminator=True)
        traces = _run_phases(model, feats, labels, domains, unl, schedule, rng, step)
    elif scheme == TrainScheme.FINE_TUNE:
        step = lambda m, b, u: supervised_step(m, b, u, train_discriminator=True)
        traces = _run_phases(
            model,
            data.source_features,
            data.source_labels.astype(int),
            np.ones(data.source_features.shape[0]),
            unl,
            schedule,
            rng,
            step,
        )
        if data.n_labeled_target > 0:
            traces += _run_phases(
                model,
                data.target_features,
                data.target_labels.astype(int),
                np.full(data.target_features.shape[0], float(labeled_target_domain_label)),
                unl,
                schedule.scaled(fine_tune_lr_factor),
                rng,
                step,
            )
    elif scheme == TrainScheme.TARGET_ONLY:
        step = lambda m, b, u: supervised_step(m, b, u, train_discriminator=True)
        traces = _run_phases(
            model,
            data.target_features,
            data.target_labels.astype(int),
            np.full(data.target_features.shape[0], float(labeled_target_domain_label)),
            unl,
            schedule,
            rng,
            step,
        )
    else:  # pragma: no cover - enum is exhaustive
        raise SchemeDataError(f"unknown scheme {scheme!r}")
    return model, traces


# ---------------------------------------------------------------------------
# Checkpointing


CHECKPOINT_FORMAT = "shiftlab-checkpoint"
CHECKPOINT_VERSION = 1


def _stack_to_doc(stack: nn.DenseStack) -> list[dict]:
    return [
        {
            "weight": layer.weight.tolist(),
            "bias": layer.bias.tolist(),
            "activation": layer.activation,
        }
        for layer in stack.layers
    ]


def _stack_from_doc(doc: list[dict]) -> nn.DenseStack:
    return nn.DenseStack(
        [nn.DenseLayer(np.array(l["weight"]), np.array(l["bias"]), l["activation"]) for l in doc]
    )


def _adam_to_doc(state: nn.AdamState) -> dict:
    return {
        "learning_rate": state.learning_rate,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "epsilon": state.epsilon,
        "step_count": state.step_count,
        "first_moment": [m.tolist() for m in state.first_moment],
        "second_moment": [v.tolist() for v in state.second_moment],
    }


def _adam_from_doc(doc: dict) -> nn.AdamState:
    state = nn.AdamState(
        learning_rate=doc["learning_rate"],
        beta1=doc["beta1"],
        beta2=doc["beta2"],
        epsilon=doc["epsilon"],
        step_count=doc["step_count"],
    )
    state.first_moment = [np.array(m) for m in doc["first_moment"]]
    state.second_moment = [np.array(v) for v in doc["second_moment"]]
    return state


def checkpoint_doc(model: DannModel) -> dict:
    """Self-describing document with every parameter and the RNG state.

    JSON float serialization round-trips bit-exactly, so save/load
    reproduces the model down to the last ulp.
    """
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "num_classes": model.num_classes,
        "adversarial_weight": model.adversarial_weight,
        "entropy_weight": model.entropy_weight,
        "stacks": {
            "feature_extractor": _stack_to_doc(model.feature_extractor),
            "class_predictor": _stack_to_doc(model.class_predictor),
            "discriminator": _stack_to_doc(model.discriminator),
        },
        "optimizer": {
            "feature": _adam_to_doc(model.adam_feature),
            "predictor": _adam_to_doc(model.adam_predictor),
            "discriminator": _adam_to_doc(model.adam_discriminator),
        },
        "rng_state": model.rng.bit_generator.state,
    }


def save_checkpoint(model: DannModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(checkpoint_doc(model), indent=1, sort_keys=True))


def model_from_doc(doc: dict) -> DannModel:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    return DannModel(
        feature_extractor=_stack_from_doc(doc["stacks"]["feature_extractor"]),
        class_predictor=_stack_from_doc(doc["stacks"]["class_predictor"]),
        discriminator=_stack_from_doc(doc["stacks"]["discriminator"]),
        adam_feature=_adam_from_doc(doc["optimizer"]["feature"]),
        adam_predictor=_adam_from_doc(doc["optimizer"]["predictor"]),
        adam_discriminator=_adam_from_doc(doc["optimizer"]["discriminator"]),
        adversarial_weight=doc["adversarial_weight"],
        entropy_weight=doc["entropy_weight"],
        num_classes=doc["num_classes"],
        rng=rng,
    )


def load_checkpoint(path: str | Path) -> DannModel:
    return model_from_doc(json.loads(Path(path).read_text()))
