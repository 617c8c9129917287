"""
Evaluation protocols.

A `basis`, when passed, projects the prompt before scoring. Composite
prompts coming out of `compose(..., basis)` are already projected and are
scored with `basis=None`.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import trapezoid

from core.algebra import compose, equal_weights
from core.data import TEST, MultiViewDataset, SupportSet
from core.errors import ConfigError, InputError, ProtocolError
from core.linalg import ProjectionBasis, project
from core.tuning import TrainConfig, train_prompt
from core.vlm import Prompt, TextEncoder

logger = logging.getLogger(__name__)


def _prompt_values(prompt: Optional[Prompt], basis: Optional[ProjectionBasis]) -> Optional[np.ndarray]:
    if prompt is None:
        return None
    return project(basis, prompt.values) if basis is not None else prompt.values


def _predict(
    encoder: TextEncoder,
    images: np.ndarray,
    common_tokens: Sequence[int],
    class_token_ids: Sequence[Sequence[int]],
    values: Optional[np.ndarray],
) -> np.ndarray:
    sums, counts = encoder.class_table(common_tokens, class_token_ids)
    features, _ = encoder.encode_pooled(sums, counts, values)
    return np.argmax(images @ features.T, axis=1)


def view_accuracy(
    prompt: Optional[Prompt],
    dataset: MultiViewDataset,
    view,
    encoder: TextEncoder,
    basis: Optional[ProjectionBasis] = None,
    split: str = TEST,
) -> float:
    """Fraction of `split` images whose nearest class text is the true label (prompt=None is zero-shot)"""
    v = dataset.view_index(view)
    idx = dataset.indices(split)
    if len(idx) == 0:
        raise InputError(f"Dataset has no {split} images")
    predicted = _predict(
        encoder, dataset.features[idx], dataset.common_tokens,
        dataset.views[v].class_token_ids, _prompt_values(prompt, basis),
    )
    return float(np.mean(predicted == dataset.labels[idx, v]))


def union_accuracy(
    prompt: Optional[Prompt],
    dataset: MultiViewDataset,
    view,
    groups: Dict[str, Sequence[int]],
    encoder: TextEncoder,
    basis: Optional[ProjectionBasis] = None,
) -> Dict[str, float]:
    """Per-group and overall test accuracy, always classifying over every class of the view"""
    v = dataset.view_index(view)
    idx = dataset.indices(TEST)
    if len(idx) == 0:
        raise InputError("Dataset has no test images")
    labels = dataset.labels[idx, v]
    correct = _predict(
        encoder, dataset.features[idx], dataset.common_tokens,
        dataset.views[v].class_token_ids, _prompt_values(prompt, basis),
    ) == labels

    result = {}
    for name, classes in groups.items():
        members = np.isin(labels, list(classes))
        if not members.any():
            raise InputError(f"Class group '{name}' has no test images")
        result[name] = float(correct[members].mean())
    result["overall"] = float(correct.mean())
    return result


@dataclass
class PairScoreTable:
    scores: np.ndarray
    pairs: List[Tuple[int, int]]
    seen_mask: np.ndarray
    true_pair: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.seen_mask = np.asarray(self.seen_mask, dtype=bool)
        self.true_pair = np.asarray(self.true_pair, dtype=np.int64)
        if self.scores.shape != (len(self.true_pair), len(self.pairs)) or len(self.seen_mask) != len(self.pairs):
            raise ConfigError(f"Inconsistent pair table shapes: scores {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise ConfigError("Pair scores must be finite")


def pair_scores(
    prompt: Optional[Prompt],
    dataset: MultiViewDataset,
    encoder: TextEncoder,
    scale: float,
    basis: Optional[ProjectionBasis] = None,
) -> PairScoreTable:
    """Scaled similarity of every test image to [t_common, v, attribute, object] for every candidate pair"""
    if not dataset.is_two_view:
        raise ConfigError("Pair scores need a two-view dataset")
    objects, attributes = dataset.views
    pairs = sorted(set(dataset.seen_pairs) | {dataset.pair_of(i) for i in dataset.indices()})
    column = {p: c for c, p in enumerate(pairs)}

    token_lists = [
        tuple(attributes.class_token_ids[a]) + tuple(objects.class_token_ids[o]) for o, a in pairs
    ]
    sums, counts = encoder.class_table(dataset.common_tokens, token_lists)
    features, _ = encoder.encode_pooled(sums, counts, _prompt_values(prompt, basis))

    idx = dataset.indices(TEST)
    return PairScoreTable(
        scores=scale * (dataset.features[idx] @ features.T),
        pairs=pairs,
        seen_mask=np.array([p in dataset.seen_pairs for p in pairs], dtype=bool),
        true_pair=np.array([column[dataset.pair_of(i)] for i in idx], dtype=np.int64),
    )


@dataclass
class SeenUnseenResult:
    best_seen: float
    best_unseen: float
    auc: float
    best_hm: float
    seen_at_zero: float
    unseen_at_zero: float
    curve: List[Tuple[float, float, float]] = field(default_factory=list)

    def metrics(self) -> Dict[str, float]:
        return {
            "best_seen": self.best_seen,
            "best_unseen": self.best_unseen,
            "auc": self.auc,
            "best_hm": self.best_hm,
            "seen_at_zero": self.seen_at_zero,
            "unseen_at_zero": self.unseen_at_zero,
        }


def _accuracies_at(table: PairScoreTable, bias: float, seen_rows: np.ndarray) -> Tuple[float, float]:
    shifted = table.scores + bias * (~table.seen_mask)
    correct = np.argmax(shifted, axis=1) == table.true_pair
    return float(correct[seen_rows].mean()), float(correct[~seen_rows].mean())


def critical_biases(table: PairScoreTable) -> np.ndarray:
    """Biases where some image's prediction can flip between its best seen and best unseen column"""
    best_seen = table.scores[:, table.seen_mask].max(axis=1)
    best_unseen = table.scores[:, ~table.seen_mask].max(axis=1)
    return np.unique(best_seen - best_unseen)


def auc_seen_unseen(table: PairScoreTable) -> SeenUnseenResult:
    """
    Calibration-bias sweep over unseen-pair columns.

    Accuracy is piecewise constant in the bias with breakpoints at the
    critical gaps, so one bias per interval (below, between, above) traces
    the exact curve.
    """
    seen_rows = table.seen_mask[table.true_pair]
    if not seen_rows.any() or seen_rows.all():
        raise ProtocolError("The seen/unseen protocol needs both seen-pair and unseen-pair test images")
    if table.seen_mask.all() or not table.seen_mask.any():
        raise ProtocolError("The candidate set needs both seen and unseen pairs")

    gaps = critical_biases(table)
    margin = 1.0 + float(np.abs(gaps).max())
    biases = np.concatenate([[gaps[0] - margin], (gaps[:-1] + gaps[1:]) / 2.0, [gaps[-1] + margin]])

    curve = []
    for bias in biases:
        seen_acc, unseen_acc = _accuracies_at(table, float(bias), seen_rows)
        curve.append((float(bias), seen_acc, unseen_acc))

    seen = np.array([c[1] for c in curve])
    unseen = np.array([c[2] for c in curve])
    hm = np.where(seen + unseen > 0, 2 * seen * unseen / np.maximum(seen + unseen, 1e-12), 0.0)
    seen_zero, unseen_zero = _accuracies_at(table, 0.0, seen_rows)
    return SeenUnseenResult(
        best_seen=float(seen.max()),
        best_unseen=float(unseen.max()),
        auc=float(trapezoid(seen, unseen)),
        best_hm=float(hm.max()),
        seen_at_zero=seen_zero,
        unseen_at_zero=unseen_zero,
        curve=curve,
    )


def evaluate_prompt(
    prompt: Optional[Prompt],
    dataset: MultiViewDataset,
    encoder: TextEncoder,
    scale: float,
    basis: Optional[ProjectionBasis] = None,
) -> Dict[str, float]:
    """Every view accuracy plus, for two-view data, the seen/unseen pair metrics"""
    metrics = {
        f"{view.view_name}_acc": view_accuracy(prompt, dataset, view, encoder, basis)
        for view in dataset.views
    }
    if dataset.is_two_view:
        table = pair_scores(prompt, dataset, encoder, scale, basis)
        metrics.update(auc_seen_unseen(table).metrics())
    return metrics


class ContinualConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_classes: int = Field(100, ge=1)
    n_steps: int = Field(10, ge=1)
    classes_per_step: int = Field(10, ge=1)
    view: Optional[str] = None
    shuffle_classes: bool = False
    seed: int = Field(0, ge=0)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def _check(self):
        if self.n_steps * self.classes_per_step != self.n_classes:
            raise ValueError(
                f"n_steps x classes_per_step = {self.n_steps * self.classes_per_step}, expected n_classes={self.n_classes}"
            )
        return self


@dataclass
class ContinualResult:
    average_acc: float
    last_acc: float
    per_step: List[float]
    first_step_union_acc: float
    groups: List[List[int]]

    def to_dict(self) -> Dict[str, object]:
        return {
            "average_acc": self.average_acc,
            "last_acc": self.last_acc,
            "per_step": self.per_step,
            "first_step_union_acc": self.first_step_union_acc,
            "groups": self.groups,
        }


def continual_run(
    config: ContinualConfig,
    dataset: MultiViewDataset,
    encoder: TextEncoder,
    basis: Optional[ProjectionBasis] = None,
    support: Optional[SupportSet] = None,
) -> ContinualResult:
    """
    Class-incremental protocol: one prompt per class group, trained only on
    that group; after each step the equal-weight composite of all prompts so
    far is scored on every class seen so far.
    """
    view = config.view or dataset.views[0].view_name
    v = dataset.view_index(view)
    n_available = dataset.views[v].n_classes
    if config.n_classes != n_available:
        raise ConfigError(
            f"n_classes={config.n_classes} but view '{view}' has {n_available} classes", key="n_classes"
        )
    if config.train.use_projection != (basis is not None):
        raise ConfigError("train.use_projection must match whether a basis is supplied", key="use_projection")

    order = np.arange(n_available)
    if config.shuffle_classes:
        order = np.random.default_rng(config.seed).permutation(n_available)
    groups = [order[s * config.classes_per_step:(s + 1) * config.classes_per_step].tolist()
              for s in range(config.n_steps)]

    prompts: List[Prompt] = []
    per_step: List[float] = []
    seen_classes: List[int] = []
    for step, group in enumerate(groups):
        task = dataset.restrict(view, group)
        prompt = train_prompt(task, view, config.train, encoder, basis, support)
        prompt.source_task = f"{view}-step{step + 1}"
        prompts.append(prompt)

        seen_classes.extend(group)
        union = dataset.restrict(view, seen_classes)
        composite = compose(prompts, equal_weights(len(prompts)), basis)
        accuracy = view_accuracy(composite, union, view, encoder)
        per_step.append(accuracy)
        logger.info(f"step {step + 1}/{config.n_steps}: {len(seen_classes)} classes, accuracy={accuracy:.4f}")

    first_only = view_accuracy(prompts[0], union, view, encoder, basis)
    return ContinualResult(
        average_acc=float(np.mean(per_step)),
        last_acc=per_step[-1],
        per_step=per_step,
        first_step_union_acc=first_only,
        groups=groups,
    )
