"""eval: metrics of one prompt (or the zero-shot model) on a manifest"""

import logging
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import Field

from commands.base import CommandConfig, open_bundle
from core.config import settings
from core.evaluation import evaluate_prompt, union_accuracy
from core.outputs import OutputLayout, write_json, write_tsv
from core.storage import load_basis, load_prompt

logger = logging.getLogger(__name__)

NAME = "eval"
HELP = "evaluate a prompt, or the zero-shot model when no prompt is given"
CONFIG_REQUIRED = True


class Config(CommandConfig):
    manifest: str
    prompt: Optional[str] = None
    basis: Optional[str] = None
    logit_scale: float = Field(default_factory=lambda: settings.logit_scale, gt=0.0)
    class_groups: Optional[Dict[str, List[int]]] = None
    view: Optional[str] = None
    name: str = "eval"


def seed_update(config: Config, seed: int) -> Dict[str, Any]:
    return {}


def run(config: Config, layout: OutputLayout) -> Dict[str, Any]:
    bundle = open_bundle(config.manifest)
    prompt = load_prompt(config.prompt) if config.prompt else None
    basis = load_basis(config.basis) if (config.basis and prompt is not None) else None

    metrics = evaluate_prompt(prompt, bundle.dataset, bundle.encoder, config.logit_scale, basis)
    if config.class_groups:
        view = config.view or bundle.dataset.views[0].view_name
        groups = union_accuracy(prompt, bundle.dataset, view, config.class_groups, bundle.encoder, basis)
        metrics.update({f"union_{name}": value for name, value in groups.items()})

    label = prompt.source_task if prompt is not None else "zero-shot"
    document = {"model": label, "manifest": config.manifest, "prompt": config.prompt, "metrics": metrics}
    json_path = write_json(layout.path("results", config.name, "json"), document, layout.run_hash)
    table = pd.DataFrame({"model": label, "metric": list(metrics), "value": list(metrics.values())})
    tsv_path = write_tsv(layout.path("results", config.name, "tsv"), table, layout.run_hash)
    return {"results": json_path, "table": tsv_path, "metrics": metrics}
