"""compose: weighted sum of prompt files, optionally projected"""

import logging
from typing import Any, Dict, Optional

from commands.base import CommandConfig
from core.algebra import CompositionSpec, compose
from core.errors import CompatibilityError, ConfigError
from core.outputs import OutputLayout
from core.storage import load_basis, load_prompt, save_prompt

logger = logging.getLogger(__name__)

NAME = "compose"
HELP = "combine trained prompts into one"
CONFIG_REQUIRED = True


class Config(CommandConfig):
    composition: CompositionSpec
    basis: Optional[str] = None
    name: str = "composite"


def seed_update(config: Config, seed: int) -> Dict[str, Any]:
    return {}


def run(config: Config, layout: OutputLayout) -> Dict[str, Any]:
    spec = config.composition
    basis = None
    if spec.project:
        if not config.basis:
            raise ConfigError("composition.project is set but no basis file was given", key="basis")
        basis = load_basis(config.basis)
        if spec.basis_fingerprint and spec.basis_fingerprint != basis.fingerprint:
            raise CompatibilityError(
                f"Basis {config.basis} has fingerprint {basis.fingerprint}, expected {spec.basis_fingerprint}"
            )

    prompts = [load_prompt(path) for path in spec.prompt_paths]
    weights = spec.resolved_weights()
    composite = compose(prompts, weights, basis)
    composite.config_hash = layout.run_hash

    path = layout.path("prompts", config.name, "palp")
    save_prompt(composite, path)
    return {
        "prompt": path,
        "weights": weights,
        "source_task": composite.source_task,
        "projected": basis is not None,
    }
