"""train: one task prompt plus its JSON-lines training log"""

import logging
from typing import Any, Dict, Optional

from pydantic import Field

from commands.base import CommandConfig, open_bundle, resolve_basis
from core.outputs import OutputLayout, write_jsonl
from core.storage import save_prompt
from core.tuning import PromptTrainer, TrainConfig

logger = logging.getLogger(__name__)

NAME = "train"
HELP = "tune a prompt on one view of a dataset"
CONFIG_REQUIRED = True


class Config(CommandConfig):
    manifest: str
    view: str
    train: TrainConfig = Field(default_factory=TrainConfig)
    basis: Optional[str] = None
    name: Optional[str] = None


def seed_update(config: Config, seed: int) -> Dict[str, Any]:
    return {"train": {**config.train.model_dump(), "seed": seed}}


def run(config: Config, layout: OutputLayout) -> Dict[str, Any]:
    bundle = open_bundle(config.manifest)
    name = config.name or config.view
    basis = resolve_basis(
        bundle, config.basis, config.train.use_projection, config.train.energy_fraction,
        layout=layout, name=f"{name}_basis",
    )

    trainer = PromptTrainer(bundle.dataset, config.view, config.train, bundle.encoder, basis, bundle.support)
    prompt = trainer.train()
    prompt.config_hash = layout.run_hash

    prompt_path = layout.path("prompts", name, "palp")
    save_prompt(prompt, prompt_path)
    log_path = write_jsonl(
        layout.path("logs", name, "jsonl"),
        (record.to_dict() for record in trainer.history),
        layout.run_hash,
    )
    last = trainer.history[-1]
    return {
        "prompt": prompt_path,
        "log": log_path,
        "final_loss": last.loss,
        "final_accuracy": last.accuracy,
        "basis_fingerprint": prompt.basis_fingerprint,
    }
