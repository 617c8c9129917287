"""bench: zero-shot / base / algebra results document over several trial seeds"""

import logging
from typing import Any, Dict, List, Optional

from pydantic import Field, model_validator

from commands.base import CommandConfig, open_bundle, resolve_basis
from core.experiment import run_trials
from core.outputs import OutputLayout, write_json, write_tsv
from core.tuning import TrainConfig

logger = logging.getLogger(__name__)

NAME = "bench"
HELP = "train, compose and score over several seeds"
CONFIG_REQUIRED = True


class Config(CommandConfig):
    manifest: str
    train: TrainConfig = Field(default_factory=TrainConfig)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    views: Optional[List[str]] = None
    class_groups: Optional[Dict[str, List[int]]] = None
    view: Optional[str] = None
    basis: Optional[str] = None
    logit_scale: Optional[float] = Field(None, gt=0.0)
    name: str = "bench"

    @model_validator(mode="after")
    def _check(self):
        if self.views is not None and self.class_groups is not None:
            raise ValueError("give either views or class_groups, not both")
        return self


def seed_update(config: Config, seed: int) -> Dict[str, Any]:
    return {"seeds": [seed + i for i in range(len(config.seeds))]}


def run(config: Config, layout: OutputLayout) -> Dict[str, Any]:
    bundle = open_bundle(config.manifest)
    basis = resolve_basis(
        bundle, config.basis, config.train.use_projection, config.train.energy_fraction,
        layout=layout, name=f"{config.name}_basis",
    )
    trials, summary = run_trials(
        bundle, config.train, config.seeds, basis,
        scale=config.logit_scale, views=config.views, groups=config.class_groups, view=config.view,
    )
    document = {
        "seeds": list(config.seeds),
        "summary": summary.to_dict(orient="records"),
        "trials": trials.to_dict(orient="records"),
    }
    json_path = write_json(layout.path("results", config.name, "json"), document, layout.run_hash)
    tsv_path = write_tsv(layout.path("results", config.name, "tsv"), summary, layout.run_hash)
    trials_path = write_tsv(layout.path("results", f"{config.name}_trials", "tsv"), trials, layout.run_hash)
    return {"results": json_path, "table": tsv_path, "trials": trials_path}
