"""sweep: metrics along theta a + (1 - theta) b, as a table and a plot"""

import logging
from typing import Any, Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd
from pydantic import Field

from commands.base import CommandConfig, open_bundle
from core.algebra import weight_sweep
from core.config import settings
from core.evaluation import evaluate_prompt
from core.outputs import OutputLayout, write_tsv
from core.storage import load_basis, load_prompt

logger = logging.getLogger(__name__)

NAME = "sweep"
HELP = "sweep the mixing weight between two prompts"
CONFIG_REQUIRED = True


class Config(CommandConfig):
    manifest: str
    prompt_a: str
    prompt_b: str
    grid: List[float] = Field(default_factory=lambda: [i / 10 for i in range(11)], min_length=1)
    basis: Optional[str] = None
    logit_scale: float = Field(default_factory=lambda: settings.logit_scale, gt=0.0)
    metrics: Optional[List[str]] = None
    name: str = "sweep"


def seed_update(config: Config, seed: int) -> Dict[str, Any]:
    return {}


def plot_sweep(table: pd.DataFrame, path: str, run_hash: str, title: str = ""):
    fig, ax = plt.subplots(figsize=(6, 4))
    for metric, rows in table.groupby("metric", sort=False):
        ax.plot(rows["theta"], rows["value"], marker="o", label=metric)
    ax.set_xlabel(r"$\theta$ (weight on prompt A)")
    ax.set_ylabel("value")
    ax.set_xlim(0.0, 1.0)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None, "Description": f"config_hash={run_hash}"})
    plt.close(fig)
    logger.info(f"Wrote {path}")


def run(config: Config, layout: OutputLayout) -> Dict[str, Any]:
    bundle = open_bundle(config.manifest)
    prompt_a = load_prompt(config.prompt_a)
    prompt_b = load_prompt(config.prompt_b)
    basis = load_basis(config.basis) if config.basis else None

    def evaluate(composite):
        # composites leave compose() already projected
        metrics = evaluate_prompt(composite, bundle.dataset, bundle.encoder, config.logit_scale)
        if config.metrics:
            metrics = {k: v for k, v in metrics.items() if k in config.metrics}
        return metrics

    table = weight_sweep(prompt_a, prompt_b, config.grid, evaluate, basis)
    tsv_path = write_tsv(layout.path("results", config.name, "tsv"), table, layout.run_hash)
    summary = {"table": tsv_path, "points": len(config.grid)}
    if settings.plot_sweeps:
        png_path = layout.path("results", config.name, "png")
        plot_sweep(table, png_path, layout.run_hash, f"{prompt_a.source_task} vs {prompt_b.source_task}")
        summary["plot"] = png_path
    return summary
