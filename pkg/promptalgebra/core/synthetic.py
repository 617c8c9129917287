"""
Seeded synthetic multi-view datasets with known ground truth.

Objects and attributes get orthonormal concept directions; an image of
pair (i, j) is normalize(alpha * o_i + beta * a_j + noise_sigma * gaussian).
Class-name tokens are the concept directions themselves, template tokens
live in the orthogonal complement of the concepts, and distractor and
support-class tokens are random unit vectors.

Three knobs give the text side a bias that images never carry:
`class_token_spread` scales each class-name token by a seeded gain in
[1 - s, 1 + s], so low-gain classes lose score against the template.
`template_bias` tilts every template token toward a seeded mix of concept
directions. `family_offset` adds a shared offset to each run of
`family_size` consecutive object tokens, along one direction per family
that is orthogonal to the concepts and the template. All three draw from
their own stream, so at 0 the output matches a generator without them.
"""

import logging
from typing import Any, Dict, List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.data import (
    DEFAULT_SUPPORT_CLASSES,
    TEST,
    TRAIN,
    MultiViewDataset,
    SupportSet,
    ViewLabelSpace,
)
from core.config import settings
from core.errors import ConfigError
from core.vlm import Vocabulary

logger = logging.getLogger(__name__)


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d: int = Field(64, gt=0)
    n_objects: int = Field(8, ge=1)
    n_attributes: int = Field(6, ge=0)
    samples_per_pair: int = Field(20, ge=1)
    noise_sigma: float = Field(0.0, ge=0.0)
    alpha: float = 1.0
    beta: float = 0.5
    distractor_tokens: int = Field(16, ge=0)
    seed: int = Field(0, ge=0)
    unseen_fraction: float = Field(0.3, ge=0.0, lt=1.0)
    test_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    template: List[str] = Field(default_factory=lambda: ["image", "of", "a"])
    template_norm: float = Field(1.0, ge=0.0)
    template_bias: float = Field(0.0, ge=0.0)
    class_token_spread: float = Field(0.0, ge=0.0, lt=1.0)
    family_size: int = Field(0, ge=0)
    family_offset: float = Field(0.0, ge=0.0)
    support_classes: List[str] = Field(default_factory=lambda: list(DEFAULT_SUPPORT_CLASSES))
    object_view: str = "object"
    attribute_view: str = "attribute"
    encoder_weight: Literal["identity", "orthogonal"] = Field(default_factory=lambda: settings.encoder_weight)
    encoder_seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.d < self.n_objects + self.n_attributes:
            raise ValueError(
                f"d={self.d} cannot hold {self.n_objects + self.n_attributes} orthogonal concept directions"
            )
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("alpha and beta cannot both be 0")
        needed = self.n_objects + self.n_attributes + len(self.template) + self.n_families
        if self.n_families and self.d < needed:
            raise ValueError(f"d={self.d} cannot hold {self.n_families} family directions as well (needs {needed})")
        return self

    @property
    def n_families(self) -> int:
        if not self.family_size or not self.family_offset:
            return 0
        return -(-self.n_objects // self.family_size)


def _names(prefix: str, count: int) -> List[str]:
    width = max(2, len(str(max(count - 1, 0))))
    return [f"{prefix}{i:0{width}d}" for i in range(count)]


def _complement_vectors(rng: np.random.Generator, concepts: np.ndarray, count: int, norm: float) -> np.ndarray:
    """Random vectors orthogonal to the concept span, rescaled to `norm` (zero if no room)"""
    d = concepts.shape[0]
    draws = rng.standard_normal((count, d))
    draws -= (draws @ concepts) @ concepts.T
    lengths = np.linalg.norm(draws, axis=1, keepdims=True)
    room = lengths[:, 0] > 1e-9 * np.sqrt(d)
    out = np.zeros_like(draws)
    out[room] = draws[room] / lengths[room] * norm
    return out


def _unit_rows(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    rows = rng.standard_normal((count, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _orthonormal_outside(rng: np.random.Generator, span: np.ndarray, count: int) -> np.ndarray:
    """`count` orthonormal rows orthogonal to the columns of `span`"""
    q, _ = np.linalg.qr(span)
    draws = rng.standard_normal((span.shape[0], count))
    draws -= q @ (q.T @ draws)
    out, r = np.linalg.qr(draws)
    return (out * np.sign(np.diag(r))).T


def generate_synthetic(spec: SyntheticSpec) -> Tuple[Vocabulary, MultiViewDataset, SupportSet, Dict[str, Any]]:
    """
    Build a vocabulary, dataset and support set from `spec`.

    Returns:
        (vocabulary, dataset, support set, ground-truth record)
    """
    if spec.d < spec.n_objects + spec.n_attributes:
        raise ConfigError(f"d={spec.d} too small for the requested concepts", key="d")

    rng = np.random.default_rng(spec.seed)
    n_concepts = spec.n_objects + spec.n_attributes
    q, r = np.linalg.qr(rng.standard_normal((spec.d, n_concepts)))
    concepts = q * np.sign(np.diag(r))
    objects = concepts[:, : spec.n_objects].T
    attributes = concepts[:, spec.n_objects:].T

    object_names = _names("obj", spec.n_objects)
    attribute_names = _names("attr", spec.n_attributes)
    distractor_names = _names("tok", spec.distractor_tokens)

    template_rows = _complement_vectors(rng, concepts, len(spec.template), spec.template_norm)
    distractor_rows = _unit_rows(rng, spec.distractor_tokens, spec.d)
    support_rows = _unit_rows(rng, len(spec.support_classes), spec.d)

    bias_rng = np.random.default_rng([spec.seed, 1])
    gains = bias_rng.uniform(1.0 - spec.class_token_spread, 1.0 + spec.class_token_spread, n_concepts)
    tilt = bias_rng.standard_normal(n_concepts)
    tilt /= np.linalg.norm(tilt)
    # Images keep the unit directions; only the class-name tokens are rescaled
    object_tokens = objects * gains[: spec.n_objects, None]
    attribute_tokens = attributes * gains[spec.n_objects:, None]
    family_rows = np.zeros((spec.n_families, spec.d))
    if spec.n_families:
        family_rows = _orthonormal_outside(bias_rng, np.hstack([concepts, template_rows.T]), spec.n_families)
        object_tokens = object_tokens + spec.family_offset * family_rows[np.arange(spec.n_objects) // spec.family_size]
    if spec.template_bias and len(spec.template):
        template_rows = template_rows + spec.template_bias * (concepts @ tilt)[None, :]

    token_names = list(spec.template) + object_names + attribute_names + distractor_names + list(spec.support_classes)
    embeddings = np.vstack([
        template_rows.reshape(-1, spec.d),
        object_tokens,
        attribute_tokens.reshape(-1, spec.d),
        distractor_rows.reshape(-1, spec.d),
        support_rows.reshape(-1, spec.d),
    ])
    vocab = Vocabulary(token_names=token_names, embeddings=embeddings)

    def view(name, class_names):
        return ViewLabelSpace(
            view_name=name,
            class_names=tuple(class_names),
            class_token_ids=tuple((vocab.token_id(n),) for n in class_names),
        )

    views = [view(spec.object_view, object_names)]
    if spec.n_attributes:
        views.append(view(spec.attribute_view, attribute_names))

    # Pairs, and which of them only ever appear at test time
    if spec.n_attributes:
        pairs = [(i, j) for i in range(spec.n_objects) for j in range(spec.n_attributes)]
    else:
        pairs = [(i, -1) for i in range(spec.n_objects)]
    n_unseen = int(round(spec.unseen_fraction * len(pairs))) if spec.n_attributes else 0
    n_unseen = min(n_unseen, len(pairs) - 1)
    unseen_idx = set(rng.choice(len(pairs), size=n_unseen, replace=False).tolist()) if n_unseen else set()

    features, labels, split, truth_pairs = [], [], [], []
    for p, (i, j) in enumerate(pairs):
        clean = spec.alpha * objects[i] + (spec.beta * attributes[j] if j >= 0 else 0.0)
        noise = rng.standard_normal((spec.samples_per_pair, spec.d))
        draws = clean[None, :] + spec.noise_sigma * noise
        features.append(draws / np.linalg.norm(draws, axis=1, keepdims=True))
        labels.extend([[i, j] if j >= 0 else [i]] * spec.samples_per_pair)
        if p in unseen_idx:
            split.extend([TEST] * spec.samples_per_pair)
        else:
            n_test = max(1, int(round(spec.test_fraction * spec.samples_per_pair)))
            n_test = min(n_test, spec.samples_per_pair - 1) if spec.samples_per_pair > 1 else 1
            tags = np.array([TRAIN] * spec.samples_per_pair, dtype=object)
            tags[rng.choice(spec.samples_per_pair, size=n_test, replace=False)] = TEST
            split.extend(tags.tolist())
        truth_pairs.append([i, j])

    seen_pairs = frozenset(pairs[p] for p in range(len(pairs)) if p not in unseen_idx) if spec.n_attributes else frozenset()
    dataset = MultiViewDataset(
        features=np.vstack(features),
        views=views,
        labels=np.array(labels, dtype=np.int64),
        split=np.array(split, dtype=object),
        seen_pairs=seen_pairs,
        common_tokens=vocab.token_ids(spec.template),
    )
    support = SupportSet(
        class_names=tuple(spec.support_classes),
        class_token_ids=tuple((vocab.token_id(n),) for n in spec.support_classes),
    )
    truth = {
        "object_directions": objects.tolist(),
        "attribute_directions": attributes.tolist(),
        "pairs": truth_pairs,
        "unseen_pairs": sorted([list(pairs[p]) for p in unseen_idx]),
        "class_token_gains": gains.tolist(),
        "family_directions": family_rows.tolist(),
    }
    logger.info(
        f"Generated synthetic dataset: {len(dataset.features)} images, {len(pairs)} pairs "
        f"({n_unseen} unseen), vocabulary of {vocab.size} tokens"
    )
    return vocab, dataset, support, truth
