"""
Constrained prompt tuning regularizers.

Both regularizers record how the frozen, prompt-free model ranks a set of
support texts for an image (the pseudo-label) and penalize the prompted
model for ranking them differently:

- class-agnostic (CA): support texts [t_common, y_l] over a static list
  of generic classes
- multi-view (MV): texts [t_common, y^B_l, y^A_i] over k sampled labels
  of the other view, with the sample's own-view label y^A_i appended
"""

import logging
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.data import DEFAULT_SUPPORT_CLASSES, MultiViewDataset, SupportSet, ViewLabelSpace
from core.errors import ConfigError, ContractError, InputError
from core.vlm import Prompt, TextEncoder, TextInput, prompt_cross_entropy

logger = logging.getLogger(__name__)

MAX_DEFAULT_K = 16


class RegularizerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["MV", "CA"]
    support: List[str] = Field(default_factory=lambda: list(DEFAULT_SUPPORT_CLASSES))
    other_view: Optional[str] = None
    k: Optional[int] = Field(None, ge=2)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "CA" and not self.support:
            raise ValueError("support must not be empty")
        return self


def _values(prompt) -> np.ndarray:
    return prompt.values if isinstance(prompt, Prompt) else np.asarray(prompt, dtype=np.float64)


def _argmax_rows(images: np.ndarray, features: np.ndarray) -> np.ndarray:
    if features.ndim == 2:
        return np.argmax(images @ features.T, axis=1)
    return np.argmax(np.einsum("bd,bcd->bc", images, features), axis=1)


def pseudo_label(image, candidate_texts: Sequence[TextInput], encoder: TextEncoder) -> int:
    """Index of the candidate the prompt-free model ranks first (lowest index on ties)"""
    if not candidate_texts:
        raise InputError("At least one candidate text is required")
    if any(t.prompt is not None for t in candidate_texts):
        raise ContractError("Pseudo-labels are computed from prompt-free texts only")
    x = np.asarray(getattr(image, "values", image), dtype=np.float64)
    features = encoder.encode_many(candidate_texts)
    return int(np.argmax(features @ x))


class ClassAgnosticRegularizer:
    """Pseudo-label cross-entropy over a static set of generic support classes"""

    kind = "CA"

    def __init__(
        self,
        spec: RegularizerSpec,
        encoder: TextEncoder,
        common_tokens: Sequence[int],
        support: Optional[SupportSet] = None,
        classifier_classes: Sequence[str] = (),
    ):
        if spec.kind != "CA":
            raise ConfigError(f"Expected a CA regularizer spec, got {spec.kind}", key="kind")
        self.spec = spec
        self.encoder = encoder
        self.names = tuple(spec.support)
        known = dict(zip(support.class_names, support.class_token_ids)) if support else {}
        token_ids = []
        for name in self.names:
            if name in known:
                token_ids.append(tuple(known[name]))
            else:
                # falls back to a vocabulary token of the same name
                try:
                    token_ids.append((encoder.vocab.token_id(name),))
                except InputError:
                    raise ConfigError(f"Support class '{name}' is not in the vocabulary manifest", key="support")
        self.token_ids = tuple(token_ids)

        overlap = sorted(set(self.names) & set(classifier_classes))
        if overlap:
            logger.warning(f"Support classes overlap classifier classes: {overlap}")

        self.sums, self.counts = encoder.class_table(common_tokens, self.token_ids)
        self.frozen_features, _ = encoder.encode_pooled(self.sums, self.counts)

    def texts(self, common_tokens: Sequence[int]) -> List[TextInput]:
        return [TextInput(tuple(common_tokens), ids) for ids in self.token_ids]

    def pseudo_labels(self, images: np.ndarray) -> np.ndarray:
        return _argmax_rows(np.atleast_2d(images), self.frozen_features)

    def loss_and_grad(
        self,
        images: np.ndarray,
        own_labels: np.ndarray,
        prompt,
        scale: float,
        sample_index: Optional[np.ndarray] = None,
        epoch: int = 0,
    ) -> Tuple[float, np.ndarray]:
        images = np.atleast_2d(images)
        targets = self.pseudo_labels(images)
        loss, grad, _ = prompt_cross_entropy(
            self.encoder, images, self.sums, self.counts, targets, _values(prompt), scale,
            sample_index=sample_index,
        )
        return loss, grad

    def agreement(self, images: np.ndarray, prompt) -> float:
        """Fraction of images whose prompted ranking keeps the pseudo-label first"""
        images = np.atleast_2d(images)
        prompted, _ = self.encoder.encode_pooled(self.sums, self.counts, _values(prompt))
        return float(np.mean(_argmax_rows(images, prompted) == self.pseudo_labels(images)))


class MultiViewRegularizer:
    """Pseudo-label cross-entropy over k sampled labels of the other view"""

    kind = "MV"

    def __init__(self, spec: RegularizerSpec, encoder: TextEncoder, dataset: MultiViewDataset, own_view):
        if spec.kind != "MV":
            raise ConfigError(f"Expected an MV regularizer spec, got {spec.kind}", key="kind")
        if not dataset.is_two_view:
            raise ConfigError("Multi-view regularization needs a two-view dataset", key="kind")
        self.spec = spec
        self.encoder = encoder
        own = dataset.view_index(own_view)
        other = dataset.view_index(spec.other_view) if spec.other_view else 1 - own
        if other == own:
            raise ConfigError("other_view must differ from the trained view", key="other_view")
        self.own_view: ViewLabelSpace = dataset.views[own]
        self.other_view: ViewLabelSpace = dataset.views[other]
        # the first view names the object; every other view is a modifier and leads the text
        self.own_leads = own != 0

        n_other = self.other_view.n_classes
        k = spec.k if spec.k is not None else min(n_other, MAX_DEFAULT_K)
        if k < 2 or k > n_other:
            raise ConfigError(
                f"k={k} must be between 2 and the {n_other} labels of view '{self.other_view.view_name}'",
                key="k",
            )
        self.k = k

        self.common_sum, common_count = encoder.token_sum(dataset.common_tokens)
        self.common_count = float(common_count)
        self.own_sums, self.own_counts = encoder.token_table(self.own_view.class_token_ids)
        self.other_sums, self.other_counts = encoder.token_table(self.other_view.class_token_ids)

    def sample(self, sample_index: int, epoch: int) -> np.ndarray:
        """k other-view labels, uniform without replacement, seeded per (epoch, image)"""
        rng = np.random.default_rng([self.spec.seed, epoch, int(sample_index)])
        return rng.choice(self.other_view.n_classes, size=self.k, replace=False)

    def candidate_texts(self, own_label: int, sampled: Sequence[int], common_tokens: Sequence[int]) -> List[TextInput]:
        """Prompt-free texts, one per sampled label; modifier tokens precede object tokens"""
        own_ids = tuple(self.own_view.class_token_ids[own_label])
        texts = []
        for l in sampled:
            other_ids = tuple(self.other_view.class_token_ids[l])
            class_tokens = own_ids + other_ids if self.own_leads else other_ids + own_ids
            texts.append(TextInput(tuple(common_tokens), class_tokens))
        return texts

    def _tables(self, own_labels: np.ndarray, sampled: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        # sums are order-free; token order only matters to the TextInput form above
        sums = self.common_sum + self.other_sums[sampled] + self.own_sums[own_labels][:, None, :]
        counts = self.common_count + self.other_counts[sampled] + self.own_counts[own_labels][:, None]
        return sums, counts

    def _batch_tables(self, images, own_labels, sample_index, epoch) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        images = np.atleast_2d(images)
        own_labels = np.atleast_1d(np.asarray(own_labels, dtype=np.int64))
        if sample_index is None:
            sample_index = np.arange(len(images))
        sampled = np.array([self.sample(i, epoch) for i in np.atleast_1d(sample_index)])
        sums, counts = self._tables(own_labels, sampled)
        return images, sums, counts

    def loss_and_grad(
        self,
        images: np.ndarray,
        own_labels: np.ndarray,
        prompt,
        scale: float,
        sample_index: Optional[np.ndarray] = None,
        epoch: int = 0,
    ) -> Tuple[float, np.ndarray]:
        images, sums, counts = self._batch_tables(images, own_labels, sample_index, epoch)
        frozen, _ = self.encoder.encode_pooled(sums, counts)
        targets = _argmax_rows(images, frozen)
        loss, grad, _ = prompt_cross_entropy(
            self.encoder, images, sums, counts, targets, _values(prompt), scale, sample_index=sample_index
        )
        return loss, grad

    def agreement(
        self,
        images: np.ndarray,
        prompt,
        own_labels: np.ndarray,
        sample_index: Optional[np.ndarray] = None,
        epoch: int = 0,
    ) -> float:
        """Fraction of images whose prompted ranking over their sampled texts keeps the pseudo-label first"""
        images, sums, counts = self._batch_tables(images, own_labels, sample_index, epoch)
        frozen, _ = self.encoder.encode_pooled(sums, counts)
        prompted, _ = self.encoder.encode_pooled(sums, counts, _values(prompt))
        return float(np.mean(_argmax_rows(images, prompted) == _argmax_rows(images, frozen)))


def build_regularizer(
    spec: RegularizerSpec,
    encoder: TextEncoder,
    dataset: MultiViewDataset,
    view,
    support: Optional[SupportSet] = None,
):
    if spec.kind == "MV":
        return MultiViewRegularizer(spec, encoder, dataset, view)
    classes = dataset.views[dataset.view_index(view)].class_names
    return ClassAgnosticRegularizer(spec, encoder, dataset.common_tokens, support, classifier_classes=classes)


def mv_reg_loss(regularizer: MultiViewRegularizer, image, own_view_label: int, prompt, scale: float,
                sample_index: int = 0, epoch: int = 0) -> Tuple[float, np.ndarray]:
    x = np.asarray(getattr(image, "values", image), dtype=np.float64)
    return regularizer.loss_and_grad(x[None, :], np.array([own_view_label]), prompt, scale,
                                     sample_index=np.array([sample_index]), epoch=epoch)


def ca_reg_loss(regularizer: ClassAgnosticRegularizer, image, prompt, scale: float) -> Tuple[float, np.ndarray]:
    x = np.asarray(getattr(image, "values", image), dtype=np.float64)
    return regularizer.loss_and_grad(x[None, :], np.zeros(1, dtype=np.int64), prompt, scale)


def pseudo_label_agreement(
    regularizer: Union[ClassAgnosticRegularizer, MultiViewRegularizer], images: np.ndarray, prompt, **context
) -> float:
    """Agreement for either regularizer; MV needs `own_labels` (and optionally `sample_index`, `epoch`)"""
    return regularizer.agreement(images, prompt, **context)
