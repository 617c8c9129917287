import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.config import settings
from core.data import TRAIN, MultiViewDataset, SupportSet
from core.errors import ConfigError, InputError
from core.linalg import ProjectionBasis, project
from core.regularize import RegularizerSpec, build_regularizer
from core.vlm import Prompt, TextEncoder, prompt_cross_entropy

logger = logging.getLogger(__name__)

INIT_SIGMA = 0.02


class TrainConfig(BaseModel):
    """Prompt tuning hyperparameters"""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(20, ge=1)
    batch_size: int = Field(512, ge=1)
    learning_rate: float = Field(0.01, gt=0.0)
    dropout_rate: float = Field(0.3, ge=0.0, lt=1.0)
    use_projection: bool = False
    energy_fraction: float = Field(default_factory=lambda: settings.energy_fraction, gt=0.0, le=1.0)
    logit_scale: float = Field(default_factory=lambda: settings.logit_scale, gt=0.0)
    reg: Union[RegularizerSpec, List[RegularizerSpec], None] = None
    reg_weight: float = Field(1.0, ge=0.0)
    seed: int = Field(0, ge=0)

    def regularizers(self) -> List[RegularizerSpec]:
        if self.reg is None:
            return []
        return list(self.reg) if isinstance(self.reg, list) else [self.reg]


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    reg_loss: float
    accuracy: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def apply_dropout(values: np.ndarray, rate: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inverted dropout on prompt elements.

    Returns:
        (dropped values, elementwise scale applied, used for the gradient)
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout_rate must be in [0, 1), got {rate}", key="dropout_rate")
    if rate == 0.0:
        return values.copy(), np.ones_like(values)
    keep = rng.random(values.shape) >= rate
    scale = keep / (1.0 - rate)
    return values * scale, scale


def ce_loss_and_grad(
    prompt,
    images: np.ndarray,
    labels: np.ndarray,
    encoder: TextEncoder,
    class_sums: np.ndarray,
    class_counts: np.ndarray,
    scale: float,
    sample_index: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch and its gradient w.r.t. the prompt"""
    values = prompt.values if isinstance(prompt, Prompt) else np.asarray(prompt, dtype=np.float64)
    loss, grad, _ = prompt_cross_entropy(
        encoder, images, class_sums, class_counts, labels, values, scale, sample_index=sample_index
    )
    return loss, grad


def prompted_accuracy(
    encoder: TextEncoder,
    images: np.ndarray,
    labels: np.ndarray,
    class_sums: np.ndarray,
    class_counts: np.ndarray,
    prompt: Optional[np.ndarray],
) -> float:
    if len(images) == 0:
        raise InputError("No images to score")
    features, _ = encoder.encode_pooled(class_sums, class_counts, prompt)
    return float(np.mean(np.argmax(images @ features.T, axis=1) == labels))


class PromptTrainer:
    """Trains one task prompt on one view of a dataset"""

    def __init__(
        self,
        dataset: MultiViewDataset,
        view,
        config: TrainConfig,
        encoder: TextEncoder,
        basis: Optional[ProjectionBasis] = None,
        support: Optional[SupportSet] = None,
        on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    ):
        if config.use_projection and basis is None:
            raise ConfigError("use_projection is set but no projection basis was given", key="use_projection")
        if basis is not None and not config.use_projection:
            raise ConfigError("A projection basis was given but use_projection is off", key="use_projection")
        if basis is not None and basis.ambient_dim != encoder.dim:
            raise ConfigError(f"Basis dimension {basis.ambient_dim} does not match d={encoder.dim}")

        self.dataset = dataset
        self.view_index = dataset.view_index(view)
        self.view = dataset.views[self.view_index]
        self.config = config
        self.encoder = encoder
        self.basis = basis
        self.on_epoch = on_epoch
        self.history: List[EpochRecord] = []

        self.class_sums, self.class_counts = encoder.class_table(dataset.common_tokens, self.view.class_token_ids)
        self.regularizers = [
            build_regularizer(spec, encoder, dataset, self.view, support) for spec in config.regularizers()
        ]

    def _project(self, values: np.ndarray) -> np.ndarray:
        return project(self.basis, values) if self.basis is not None else values

    def train(self) -> Prompt:
        config = self.config
        train_idx = self.dataset.indices(TRAIN)
        if len(train_idx) == 0:
            raise InputError(f"No training images for view '{self.view.view_name}'")

        shuffle_seq, dropout_seq, init_seq = np.random.SeedSequence(config.seed).spawn(3)
        shuffle_rng = np.random.default_rng(shuffle_seq)
        dropout_rng = np.random.default_rng(dropout_seq)
        init_rng = np.random.default_rng(init_seq)

        values = self._project(init_rng.normal(0.0, INIT_SIGMA, self.encoder.dim))
        features = self.dataset.features
        labels = self.dataset.labels[:, self.view_index]
        batch_size = min(config.batch_size, len(train_idx))

        logger.info(
            f"Training prompt for view '{self.view.view_name}': {len(train_idx)} images, "
            f"{self.view.n_classes} classes, projection={'on' if self.basis is not None else 'off'}, "
            f"regularizers={[r.kind for r in self.regularizers]}"
        )

        self.history = []
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(train_idx)
            total, total_reg = 0.0, 0.0
            for start in range(0, len(order), batch_size):
                batch = order[start:start + batch_size]
                dropped, mask_scale = apply_dropout(values, config.dropout_rate, dropout_rng)

                loss, grad = ce_loss_and_grad(
                    dropped, features[batch], labels[batch], self.encoder,
                    self.class_sums, self.class_counts, config.logit_scale, sample_index=batch,
                )
                reg_loss = 0.0
                for regularizer in self.regularizers:
                    r_loss, r_grad = regularizer.loss_and_grad(
                        features[batch], labels[batch], dropped, config.logit_scale,
                        sample_index=batch, epoch=epoch,
                    )
                    reg_loss += r_loss
                    grad = grad + config.reg_weight * r_grad

                values = self._project(values - config.learning_rate * mask_scale * grad)
                total += loss * len(batch)
                total_reg += reg_loss * len(batch)

            record = EpochRecord(
                epoch=epoch + 1,
                loss=total / len(order),
                reg_loss=total_reg / len(order),
                accuracy=prompted_accuracy(
                    self.encoder, features[train_idx], labels[train_idx],
                    self.class_sums, self.class_counts, values,
                ),
            )
            self.history.append(record)
            logger.info(
                f"epoch {record.epoch}/{config.epochs} loss={record.loss:.4f} "
                f"reg={record.reg_loss:.4f} acc={record.accuracy:.4f}"
            )
            if self.on_epoch:
                self.on_epoch(record)

        return Prompt(
            values=values,
            trained_with_projection=self.basis is not None,
            source_task=self.view.view_name,
            basis_fingerprint=self.basis.fingerprint if self.basis is not None else None,
        )


def train_prompt(
    dataset: MultiViewDataset,
    view,
    config: TrainConfig,
    encoder: TextEncoder,
    basis: Optional[ProjectionBasis] = None,
    support: Optional[SupportSet] = None,
) -> Prompt:
    return PromptTrainer(dataset, view, config, encoder, basis, support).train()
