"""
Prompt algebra: f(v) = P sum_i theta_i v_i with theta_i >= 0.

Weights are used exactly as given. "Equal weights" over n prompts means
theta_i = 1/n.
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import CompatibilityError, DimensionError, InputError
from core.linalg import ProjectionBasis, project
from core.vlm import Prompt

logger = logging.getLogger(__name__)


class CompositionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    prompt_paths: List[str] = Field(min_length=1)
    weights: Optional[List[float]] = None
    project: bool = True
    basis_fingerprint: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.weights is not None:
            if len(self.weights) != len(self.prompt_paths):
                raise ValueError(f"{len(self.weights)} weights for {len(self.prompt_paths)} prompts")
            if any(w < 0 for w in self.weights):
                raise ValueError("weights must be nonnegative")
            if not any(w > 0 for w in self.weights):
                raise ValueError("at least one weight must be positive")
        return self

    def resolved_weights(self) -> List[float]:
        return list(self.weights) if self.weights is not None else equal_weights(len(self.prompt_paths))


def equal_weights(n: int) -> List[float]:
    if n < 1:
        raise InputError("Cannot weight an empty list of prompts")
    return [1.0 / n] * n


def check_compatible(prompts: Sequence[Prompt], basis: Optional[ProjectionBasis] = None):
    recorded = {p.basis_fingerprint for p in prompts if p.basis_fingerprint}
    if len(recorded) > 1:
        raise CompatibilityError(f"Prompts were trained with different bases: {sorted(recorded)}")
    if basis is not None and recorded and recorded != {basis.fingerprint}:
        raise CompatibilityError(
            f"Prompts were trained with basis {recorded.pop()}, not {basis.fingerprint}"
        )
    unrecorded = [p.source_task for p in prompts if not p.basis_fingerprint]
    if basis is not None and unrecorded:
        logger.warning(f"Projecting prompts trained without a basis: {unrecorded}")


def compose(prompts: Sequence[Prompt], weights: Sequence[float], basis: Optional[ProjectionBasis] = None) -> Prompt:
    if len(prompts) == 0:
        raise InputError("Nothing to compose")
    if len(prompts) != len(weights):
        raise InputError(f"{len(weights)} weights for {len(prompts)} prompts")
    weights = [float(w) for w in weights]
    if any(w < 0 or not np.isfinite(w) for w in weights):
        raise InputError(f"Weights must be finite and nonnegative: {weights}")
    if not any(w > 0 for w in weights):
        raise InputError("At least one weight must be positive")
    dims = {p.dim for p in prompts}
    if len(dims) != 1:
        raise DimensionError(f"Prompts have different lengths: {sorted(dims)}")
    check_compatible(prompts, basis)

    total = np.zeros(prompts[0].dim)
    for theta, prompt in zip(weights, prompts):
        total += theta * prompt.values
    if basis is not None:
        total = project(basis, total)

    fingerprints = {p.basis_fingerprint for p in prompts if p.basis_fingerprint}
    return Prompt(
        values=total,
        trained_with_projection=basis is not None or all(p.trained_with_projection for p in prompts),
        source_task="+".join(p.source_task for p in prompts),
        basis_fingerprint=basis.fingerprint if basis is not None else (fingerprints.pop() if fingerprints else None),
    )


def weight_sweep(
    prompt_a: Prompt,
    prompt_b: Prompt,
    grid: Sequence[float],
    evaluate: Callable[[Prompt], Dict[str, float]],
    basis: Optional[ProjectionBasis] = None,
) -> pd.DataFrame:
    """
    Evaluate compose((a, b), (theta, 1 - theta)) for every theta in `grid`.

    Returns:
        long-format table with columns theta, metric, value
    """
    grid = [float(t) for t in grid]
    if not grid:
        raise InputError("Weight grid is empty")
    if any(not 0.0 <= t <= 1.0 for t in grid):
        raise InputError(f"Weight grid values must lie in [0, 1]: {grid}")

    rows = []
    for theta in grid:
        composite = compose([prompt_a, prompt_b], [theta, 1.0 - theta], basis)
        metrics = evaluate(composite)
        logger.info(f"theta={theta:.3f} " + " ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
        rows.extend({"theta": theta, "metric": name, "value": float(value)} for name, value in metrics.items())
    return pd.DataFrame(rows, columns=["theta", "metric", "value"])
