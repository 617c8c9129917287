"""
Minimal differentiable vision-language scoring model.

Text features are normalize(W . mean(token embeddings)), with the task
prompt inserted as one extra pseudo-token. Image features are fixed unit
vectors supplied by the dataset.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from core.errors import ConfigError, ContractError, DimensionError, InputError, NumericError

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-5


@dataclass
class Vocabulary:
    """Pretrained token embeddings, one row per token"""

    token_names: List[str]
    embeddings: np.ndarray
    _index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise DimensionError(f"Embeddings must be a non-empty n x d matrix, got {self.embeddings.shape}")
        if len(self.token_names) != self.embeddings.shape[0]:
            raise DimensionError(
                f"{len(self.token_names)} token names for {self.embeddings.shape[0]} embedding rows"
            )
        if len(set(self.token_names)) != len(self.token_names):
            raise InputError("Token names must be unique")
        if not np.all(np.isfinite(self.embeddings)):
            raise NumericError("Vocabulary embeddings contain non-finite values")
        self._index = {name: i for i, name in enumerate(self.token_names)}

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def token_id(self, name: str) -> int:
        if name not in self._index:
            raise InputError(f"Token '{name}' is not in the vocabulary")
        return self._index[name]

    def token_ids(self, names: Sequence[str]) -> Tuple[int, ...]:
        return tuple(self.token_id(n) for n in names)

    def check_ids(self, ids: Sequence[int]):
        for i in ids:
            if not 0 <= int(i) < self.size:
                raise InputError(f"Token id {i} out of range for vocabulary of {self.size}")


@dataclass(frozen=True)
class TextInput:
    """[t_common, v, c_i] as explicit token ids plus an optional prompt vector"""

    common_tokens: Tuple[int, ...]
    class_tokens: Tuple[int, ...]
    prompt: Optional[np.ndarray] = None

    def without_prompt(self) -> "TextInput":
        return TextInput(self.common_tokens, self.class_tokens, None)

    def with_prompt(self, prompt: np.ndarray) -> "TextInput":
        return TextInput(self.common_tokens, self.class_tokens, prompt)


@dataclass
class Prompt:
    """A task prompt v"""

    values: np.ndarray
    trained_with_projection: bool = False
    source_task: str = ""
    basis_fingerprint: Optional[str] = None
    config_hash: Optional[str] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DimensionError(f"Prompt must be a vector, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError(f"Prompt '{self.source_task}' has non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ImageFeature:
    values: np.ndarray
    sample_id: str = ""


class TextEncoder:
    """Mean-pool, fixed linear map W, L2 normalize"""

    def __init__(self, vocab: Vocabulary, weight: Optional[np.ndarray] = None):
        self.vocab = vocab
        d = vocab.dim
        if weight is None:
            weight = np.eye(d)
        weight = np.asarray(weight, dtype=np.float64)
        if weight.shape != (d, d):
            raise DimensionError(f"Encoder weight must be {d} x {d}, got {weight.shape}")
        self.weight = weight

    @classmethod
    def create(cls, vocab: Vocabulary, kind: str = "identity", seed: int = 0) -> "TextEncoder":
        """Identity encoder or a seeded random orthogonal W"""
        if kind == "identity":
            return cls(vocab)
        if kind == "orthogonal":
            rng = np.random.default_rng(seed)
            q, r = np.linalg.qr(rng.standard_normal((vocab.dim, vocab.dim)))
            return cls(vocab, q * np.sign(np.diag(r)))
        raise ConfigError(f"Unknown encoder weight '{kind}'", key="encoder_weight")

    @property
    def dim(self) -> int:
        return self.vocab.dim

    def token_sum(self, ids: Sequence[int]) -> Tuple[np.ndarray, int]:
        ids = tuple(int(i) for i in ids)
        self.vocab.check_ids(ids)
        if not ids:
            return np.zeros(self.dim), 0
        return self.vocab.embeddings[list(ids)].sum(axis=0), len(ids)

    def token_table(self, token_lists: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
        """Per-list embedding sums (L, d) and token counts (L,)"""
        rows = [self.token_sum(ids) for ids in token_lists]
        sums = np.array([s for s, _ in rows]).reshape(len(rows), self.dim)
        return sums, np.array([n for _, n in rows], dtype=np.float64)

    def class_table(
        self, common_tokens: Sequence[int], class_token_ids: Sequence[Sequence[int]]
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Token sums for [t_common, c_i] over every class"""
        return self.token_table([tuple(common_tokens) + tuple(ids) for ids in class_token_ids])

    def text_sums(self, texts: Sequence[TextInput]) -> Tuple[np.ndarray, np.ndarray]:
        """Stacked prompt-free token sums and token counts"""
        return self.token_table([tuple(t.common_tokens) + tuple(t.class_tokens) for t in texts])

    def encode_pooled(
        self,
        sums: np.ndarray,
        counts: np.ndarray,
        prompt: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Encode texts given their token sums.

        Args:
            sums: (..., d) sums of word-token embeddings
            counts: (...) number of word tokens in each text
            prompt: optional prompt vector added as one more pseudo-token

        Returns:
            (unit features (..., d), pre-normalization norms (...))
        """
        counts = np.asarray(counts, dtype=np.float64)
        if prompt is not None:
            pooled = (sums + prompt) / (counts + 1.0)[..., None]
        else:
            if np.any(counts == 0):
                raise InputError("Empty token sequence")
            pooled = sums / counts[..., None]
        z = pooled @ self.weight.T
        norms = np.linalg.norm(z, axis=-1)
        if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
            raise NumericError("Degenerate text input: pooled feature has zero or non-finite norm")
        return z / norms[..., None], norms

    def encode(self, text: TextInput) -> np.ndarray:
        if text.prompt is not None and np.shape(text.prompt) != (self.dim,):
            raise DimensionError(f"Prompt length {np.shape(text.prompt)} does not match d={self.dim}")
        ids = tuple(text.common_tokens) + tuple(text.class_tokens)
        if not ids and text.prompt is None:
            raise InputError("Empty token sequence")
        s, n = self.token_sum(ids)
        features, _ = self.encode_pooled(s[None, :], np.array([n]), text.prompt)
        return features[0]

    def encode_many(self, texts: Sequence[TextInput]) -> np.ndarray:
        return np.array([self.encode(t) for t in texts]).reshape(len(texts), self.dim)


def encode_text(vocab: Vocabulary, text: TextInput, weight: Optional[np.ndarray] = None) -> np.ndarray:
    return TextEncoder(vocab, weight).encode(text)


def _check_unit(x: np.ndarray, what: str):
    if abs(np.linalg.norm(x) - 1.0) > UNIT_TOLERANCE:
        raise ContractError(f"{what} is not unit norm (|x|={np.linalg.norm(x):.6f})")


def _image_values(image) -> np.ndarray:
    return np.asarray(image.values if isinstance(image, ImageFeature) else image, dtype=np.float64)


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_unit(a, "First vector")
    _check_unit(b, "Second vector")
    return float(np.clip(1.0 - a @ b, 0.0, 2.0))


def _class_matrix(class_texts) -> np.ndarray:
    texts = np.asarray(class_texts, dtype=np.float64)
    if texts.ndim != 2 or texts.shape[0] == 0:
        raise InputError("At least one class text feature is required")
    return texts


def classify(image, class_texts) -> int:
    """Index of the nearest class text; ties go to the lowest index"""
    texts = _class_matrix(class_texts)
    # argmin of 1 - x.f is argmax of x.f
    return int(np.argmax(texts @ _image_values(image)))


def logits(image, class_texts, scale: float) -> np.ndarray:
    if scale <= 0:
        raise ConfigError(f"Logit scale must be positive, got {scale}", key="logit_scale")
    texts = _class_matrix(class_texts)
    return scale * (texts @ _image_values(image))


def prompt_cross_entropy(
    encoder: TextEncoder,
    images: np.ndarray,
    sums: np.ndarray,
    counts: np.ndarray,
    targets: np.ndarray,
    prompt: np.ndarray,
    scale: float,
    sample_index: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Mean cross-entropy of scaled-cosine logits and its exact prompt gradient.

    Class texts are either shared by the batch (sums (C, d), counts (C,))
    or per sample (sums (B, C, d), counts (B, C)). `sample_index` maps
    batch rows back to dataset rows for error reporting.

    Returns:
        (mean loss, gradient w.r.t. prompt (d,), per-sample losses (B,))
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64)
    batch = images.shape[0]
    if batch == 0:
        raise InputError("Empty batch")

    features, norms = encoder.encode_pooled(sums, counts, prompt)
    features = np.broadcast_to(features, (batch,) + features.shape[-2:])
    norms = np.broadcast_to(norms, (batch, features.shape[1]))
    pooled_counts = np.broadcast_to(np.asarray(counts, dtype=np.float64) + 1.0, norms.shape)

    cosines = np.einsum("bd,bcd->bc", images, features)
    scores = scale * cosines
    log_p = log_softmax(scores, axis=1)
    losses = -log_p[np.arange(batch), targets]
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        row = int(bad[0])
        where = int(np.atleast_1d(sample_index)[row]) if sample_index is not None else row
        raise NumericError(f"Non-finite loss for sample {where}")

    # dL/ds = p - onehot; ds_c/dv = scale/((n_c+1)|z_c|) W^T (x - cos_c f_c)
    delta = softmax(scores, axis=1)
    delta[np.arange(batch), targets] -= 1.0
    weighted = delta * scale / (pooled_counts * norms)
    direction = weighted.sum(axis=1) @ images - np.einsum("bc,bcd->d", weighted * cosines, features)
    grad = encoder.weight.T @ direction / batch

    return float(losses.mean()), grad, losses
