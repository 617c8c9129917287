"""
Multi-trial results document: zero-shot, base-A, base-B and the
equal-weight algebra composite, each scored on every metric, aggregated
to mean and standard deviation over trial seeds.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.algebra import compose, equal_weights
from core.data import TEST, Bundle
from core.errors import ConfigError
from core.evaluation import evaluate_prompt, union_accuracy
from core.linalg import ProjectionBasis
from core.regularize import ClassAgnosticRegularizer, RegularizerSpec
from core.tuning import TrainConfig, train_prompt
from core.vlm import Prompt

logger = logging.getLogger(__name__)

ZERO_SHOT = "zero-shot"
ALGEBRA = "algebra"


def _agreement_regularizer(bundle: Bundle) -> Optional[ClassAgnosticRegularizer]:
    if not bundle.support.class_names:
        return None
    spec = RegularizerSpec(kind="CA", support=list(bundle.support.class_names))
    return ClassAgnosticRegularizer(spec, bundle.encoder, bundle.dataset.common_tokens, bundle.support)


def _score(
    bundle: Bundle,
    prompt: Optional[Prompt],
    basis: Optional[ProjectionBasis],
    scale: float,
    groups: Optional[Dict[str, Sequence[int]]],
    view: Optional[str],
    support_reg: Optional[ClassAgnosticRegularizer],
) -> Dict[str, float]:
    if groups:
        metrics = union_accuracy(prompt, bundle.dataset, view, groups, bundle.encoder, basis)
    else:
        metrics = evaluate_prompt(prompt, bundle.dataset, bundle.encoder, scale, basis)
    if support_reg is not None and prompt is not None:
        values = prompt.values if basis is None else basis.project(prompt.values)
        metrics["agreement"] = support_reg.agreement(bundle.dataset.features[bundle.dataset.indices(TEST)], values)
    return metrics


def _train_pair(
    bundle: Bundle,
    config: TrainConfig,
    basis: Optional[ProjectionBasis],
    views: Optional[Sequence[str]],
    groups: Optional[Dict[str, Sequence[int]]],
    view: Optional[str],
) -> List[Tuple[str, Prompt]]:
    dataset = bundle.dataset
    if groups:
        trained = []
        for name, classes in groups.items():
            prompt = train_prompt(dataset.restrict(view, classes), view, config, bundle.encoder, basis, bundle.support)
            prompt.source_task = name
            trained.append((name, prompt))
        return trained
    return [
        (name, train_prompt(dataset, name, config, bundle.encoder, basis, bundle.support))
        for name in views
    ]


def run_trials(
    bundle: Bundle,
    train: TrainConfig,
    seeds: Sequence[int],
    basis: Optional[ProjectionBasis] = None,
    scale: Optional[float] = None,
    views: Optional[Sequence[str]] = None,
    groups: Optional[Dict[str, Sequence[int]]] = None,
    view: Optional[str] = None,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Train one prompt per view (product of tasks) or per class group (union
    of tasks) for every seed, compose them with equal weights, and score.

    Returns:
        (per-trial long table, summary table with mean and std)
    """
    dataset = bundle.dataset
    scale = scale if scale is not None else train.logit_scale
    if groups:
        view = view or dataset.views[0].view_name
        if len(groups) < 2:
            raise ConfigError("Union-of-tasks trials need at least two class groups", key="class_groups")
    else:
        views = list(views) if views else [v.view_name for v in dataset.views]
        if len(views) < 2:
            raise ConfigError("Product-of-tasks trials need two views", key="views")
    if not seeds:
        raise ConfigError("At least one trial seed is required", key="seeds")

    support_reg = _agreement_regularizer(bundle)
    rows = []

    def record(seed: int, model: str, metrics: Dict[str, float]):
        rows.extend({"seed": seed, "model": model, "metric": k, "value": float(v)} for k, v in metrics.items())

    for seed in seeds:
        config = train.model_copy(update={"seed": int(seed)})
        logger.info(f"Trial seed {seed}")
        record(seed, ZERO_SHOT, _score(bundle, None, None, scale, groups, view, support_reg))

        trained = _train_pair(bundle, config, basis, views, groups, view)
        for name, prompt in trained:
            record(seed, f"base-{name}", _score(bundle, prompt, basis, scale, groups, view, support_reg))

        prompts = [p for _, p in trained]
        composite = compose(prompts, equal_weights(len(prompts)), basis)
        record(seed, ALGEBRA, _score(bundle, composite, None, scale, groups, view, support_reg))

    trials = pd.DataFrame(rows, columns=["seed", "model", "metric", "value"])
    summary = (
        trials.groupby(["model", "metric"], sort=False)["value"]
        .agg(mean="mean", std=lambda s: float(np.std(s.to_numpy(), ddof=0)), trials="count")
        .reset_index()
    )
    return trials, summary
