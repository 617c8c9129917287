"""
Dataset model and the JSON manifest that ties vocabulary, label spaces,
image features and splits together.

In two-view datasets the first view is the primary (object) view and the
second the modifier (attribute) view. Pairs are (view0 label, view1 label).
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from core.errors import ConfigError, InputError, StorageError, ValidationError
from core.storage import load_embeddings, save_embeddings
from core.vlm import ImageFeature, TextEncoder, Vocabulary

logger = logging.getLogger(__name__)

TRAIN = "train"
TEST = "test"

DEFAULT_SUPPORT_CLASSES = ["material", "animal", "food", "dress", "place", "vehicle", "plant", "object"]


@dataclass(frozen=True)
class ViewLabelSpace:
    view_name: str
    class_names: Tuple[str, ...]
    class_token_ids: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.class_names) != len(self.class_token_ids):
            raise ValidationError(f"View '{self.view_name}': class names and token lists differ in length")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValidationError(f"View '{self.view_name}': class names must be unique")
        for name, ids in zip(self.class_names, self.class_token_ids):
            if len(ids) < 1:
                raise ValidationError(f"View '{self.view_name}': class '{name}' has no tokens")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, classes: Sequence[int]) -> "ViewLabelSpace":
        return ViewLabelSpace(
            view_name=self.view_name,
            class_names=tuple(self.class_names[c] for c in classes),
            class_token_ids=tuple(self.class_token_ids[c] for c in classes),
        )


@dataclass
class MultiViewDataset:
    features: np.ndarray
    views: List[ViewLabelSpace]
    labels: np.ndarray
    split: np.ndarray
    seen_pairs: FrozenSet[Tuple[int, int]] = frozenset()
    common_tokens: Tuple[int, ...] = ()
    sample_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(len(self.features), len(self.views))
        self.split = np.asarray(self.split, dtype=object)
        if not self.sample_ids:
            self.sample_ids = [f"img{i:05d}" for i in range(len(self.features))]
        self.seen_pairs = frozenset((int(a), int(b)) for a, b in self.seen_pairs)
        self.validate()

    def validate(self):
        n = len(self.features)
        if not 1 <= len(self.views) <= 2:
            raise ValidationError(f"Datasets have one or two views, got {len(self.views)}")
        if len(self.split) != n or len(self.sample_ids) != n:
            raise ValidationError("Split tags and sample ids must cover every image")
        if set(self.split.tolist()) - {TRAIN, TEST}:
            raise ValidationError(f"Split tags must be '{TRAIN}' or '{TEST}'")
        for v, view in enumerate(self.views):
            if n and (self.labels[:, v].min() < 0 or self.labels[:, v].max() >= view.n_classes):
                raise ValidationError(f"Labels out of range for view '{view.view_name}'")
        if n and not np.any(self.split == TEST):
            raise ValidationError("Dataset has no test images")
        if self.is_two_view:
            for i in self.indices(TRAIN):
                if self.pair_of(i) not in self.seen_pairs:
                    raise ValidationError(f"Train image {self.sample_ids[i]} has an unseen pair {self.pair_of(i)}")

    @property
    def is_two_view(self) -> bool:
        return len(self.views) == 2

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def view_index(self, view) -> int:
        name = view.view_name if isinstance(view, ViewLabelSpace) else view
        for i, v in enumerate(self.views):
            if v.view_name == name:
                return i
        raise InputError(f"View '{name}' does not belong to this dataset")

    def view(self, name: str) -> ViewLabelSpace:
        return self.views[self.view_index(name)]

    def indices(self, split: Optional[str] = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self.features))
        return np.flatnonzero(self.split == split)

    def pair_of(self, i: int) -> Tuple[int, int]:
        return int(self.labels[i, 0]), int(self.labels[i, 1])

    def image(self, i: int) -> ImageFeature:
        return ImageFeature(values=self.features[i], sample_id=self.sample_ids[i])

    def restrict(self, view, classes: Sequence[int]) -> "MultiViewDataset":
        """Images whose label in `view` is in `classes`, that view relabeled to 0..len-1"""
        v = self.view_index(view)
        classes = [int(c) for c in classes]
        remap = {c: i for i, c in enumerate(classes)}
        keep = np.flatnonzero(np.isin(self.labels[:, v], classes))
        labels = self.labels[keep].copy()
        labels[:, v] = [remap[c] for c in labels[:, v]]
        views = list(self.views)
        views[v] = self.views[v].subset(classes)
        seen = self.seen_pairs
        if self.is_two_view:
            seen = frozenset(
                tuple(remap[p[k]] if k == v else p[k] for k in range(2))
                for p in self.seen_pairs if p[v] in remap
            )
        return MultiViewDataset(
            features=self.features[keep],
            views=views,
            labels=labels,
            split=self.split[keep],
            seen_pairs=seen,
            common_tokens=self.common_tokens,
            sample_ids=[self.sample_ids[i] for i in keep],
        )


@dataclass(frozen=True)
class SupportSet:
    """Generic support classes used by class-agnostic regularization"""

    class_names: Tuple[str, ...]
    class_token_ids: Tuple[Tuple[int, ...], ...]


@dataclass
class Bundle:
    """Everything a manifest describes, plus the encoder it names"""

    vocab: Vocabulary
    dataset: MultiViewDataset
    encoder: TextEncoder
    support: SupportSet
    manifest_path: Optional[str] = None


# Manifest schema

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ClassEntry(_Strict):
    name: str
    tokens: List[int] = Field(min_length=1)


class ViewEntry(_Strict):
    name: str
    classes: List[ClassEntry] = Field(min_length=1)


class VocabularyEntry(_Strict):
    embeddings: str
    tokens: Dict[str, int]


class ImagesEntry(_Strict):
    features: str
    labels: List[List[int]]
    split: List[str]
    ids: Optional[List[str]] = None


class EncoderEntry(_Strict):
    weight: str = "identity"
    seed: int = 0


class Manifest(_Strict):
    format: str = "palg-manifest"
    version: int = 1
    dim: int = Field(gt=0)
    vocabulary: VocabularyEntry
    template: List[int] = Field(default_factory=list)
    views: List[ViewEntry] = Field(min_length=1, max_length=2)
    support_classes: List[ClassEntry] = Field(default_factory=list)
    images: ImagesEntry
    seen_pairs: List[List[int]] = Field(default_factory=list)
    encoder: EncoderEntry = Field(default_factory=EncoderEntry)
    config_hash: Optional[str] = None


def _resolve(base: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base, path)


def load_manifest(path: str) -> Bundle:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise StorageError(f"Cannot read manifest {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Manifest {path} is not valid JSON: {e}")

    try:
        manifest = Manifest.model_validate(raw)
    except PydanticValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first["loc"])
        raise ValidationError(f"Manifest {path}: {key}: {first['msg']}", key=key)

    base = os.path.dirname(os.path.abspath(path))
    embeddings = load_embeddings(_resolve(base, manifest.vocabulary.embeddings), expected_cols=manifest.dim)
    names = [None] * embeddings.shape[0]
    for name, row in manifest.vocabulary.tokens.items():
        if not 0 <= row < len(names) or names[row] is not None:
            raise ValidationError(f"Manifest token '{name}' has invalid or duplicate row {row}")
        names[row] = name
    if any(n is None for n in names):
        raise ValidationError("Manifest token map does not cover every embedding row")
    vocab = Vocabulary(token_names=names, embeddings=embeddings.astype(np.float64))

    def check(ids):
        vocab.check_ids(ids)
        return tuple(ids)

    views = [
        ViewLabelSpace(
            view_name=v.name,
            class_names=tuple(c.name for c in v.classes),
            class_token_ids=tuple(check(c.tokens) for c in v.classes),
        )
        for v in manifest.views
    ]
    support = SupportSet(
        class_names=tuple(c.name for c in manifest.support_classes),
        class_token_ids=tuple(check(c.tokens) for c in manifest.support_classes),
    )

    features = load_embeddings(_resolve(base, manifest.images.features), expected_cols=manifest.dim)
    features = features.astype(np.float64)
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0):
        raise ValidationError("Image features contain a zero vector")
    if np.max(np.abs(norms - 1.0)) > 1e-3:
        logger.warning("Image features were not unit norm; renormalizing")
    features = features / norms[:, None]

    if len(manifest.images.labels) != len(features):
        raise ValidationError(
            f"{len(manifest.images.labels)} label rows for {len(features)} image features"
        )
    dataset = MultiViewDataset(
        features=features,
        views=views,
        labels=np.array(manifest.images.labels, dtype=np.int64).reshape(len(features), len(views)),
        split=np.array(manifest.images.split, dtype=object),
        seen_pairs=frozenset(tuple(p) for p in manifest.seen_pairs),
        common_tokens=check(manifest.template),
        sample_ids=manifest.images.ids or [],
    )
    encoder = TextEncoder.create(vocab, manifest.encoder.weight, manifest.encoder.seed)
    logger.info(
        f"Loaded manifest {path}: {vocab.size} tokens, {len(features)} images, "
        f"views={[v.view_name for v in views]}"
    )
    return Bundle(vocab=vocab, dataset=dataset, encoder=encoder, support=support, manifest_path=path)


def save_manifest(
    directory: str,
    vocab: Vocabulary,
    dataset: MultiViewDataset,
    support: SupportSet,
    encoder_weight: str = "identity",
    encoder_seed: int = 0,
    config_hash: Optional[str] = None,
) -> str:
    os.makedirs(directory, exist_ok=True)
    save_embeddings(vocab.embeddings, os.path.join(directory, "vocab.palg"))
    save_embeddings(dataset.features, os.path.join(directory, "images.palg"))

    manifest = Manifest(
        dim=vocab.dim,
        vocabulary=VocabularyEntry(
            embeddings="vocab.palg",
            tokens={name: i for i, name in enumerate(vocab.token_names)},
        ),
        template=list(dataset.common_tokens),
        views=[
            ViewEntry(
                name=v.view_name,
                classes=[ClassEntry(name=n, tokens=list(ids)) for n, ids in zip(v.class_names, v.class_token_ids)],
            )
            for v in dataset.views
        ],
        support_classes=[
            ClassEntry(name=n, tokens=list(ids)) for n, ids in zip(support.class_names, support.class_token_ids)
        ],
        images=ImagesEntry(
            features="images.palg",
            labels=dataset.labels.tolist(),
            split=[str(s) for s in dataset.split],
            ids=list(dataset.sample_ids),
        ),
        seen_pairs=[list(p) for p in sorted(dataset.seen_pairs)],
        encoder=EncoderEntry(weight=encoder_weight, seed=encoder_seed),
        config_hash=config_hash,
    )
    path = os.path.join(directory, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest.model_dump(), f, indent=2, sort_keys=True)
    logger.info(f"Wrote manifest {path}")
    return path

