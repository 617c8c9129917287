"""continual: class-incremental training with prompt algebra after every step"""

import logging
from typing import Any, Dict, Optional

from commands.base import CommandConfig, open_bundle, resolve_basis
from core.evaluation import ContinualConfig, continual_run
from core.outputs import OutputLayout, write_json

logger = logging.getLogger(__name__)

NAME = "continual"
HELP = "run the class-incremental protocol"
CONFIG_REQUIRED = True


class Config(CommandConfig):
    manifest: str
    continual: ContinualConfig
    basis: Optional[str] = None
    name: str = "continual"


def seed_update(config: Config, seed: int) -> Dict[str, Any]:
    protocol = config.continual.model_dump()
    protocol["seed"] = seed
    protocol["train"]["seed"] = seed
    return {"continual": protocol}


def run(config: Config, layout: OutputLayout) -> Dict[str, Any]:
    bundle = open_bundle(config.manifest)
    train = config.continual.train
    basis = resolve_basis(
        bundle, config.basis, train.use_projection, train.energy_fraction,
        layout=layout, name=f"{config.name}_basis",
    )
    result = continual_run(config.continual, bundle.dataset, bundle.encoder, basis, bundle.support)
    path = write_json(layout.path("results", config.name, "json"), result.to_dict(), layout.run_hash)
    return {"results": path, "average_acc": result.average_acc, "last_acc": result.last_acc}
