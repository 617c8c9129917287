"""gen: synthetic dataset directory (manifest, PALG files, ground truth)"""

import logging
import os
from typing import Any, Dict

from core.data import save_manifest
from core.outputs import OutputLayout, write_json
from core.synthetic import SyntheticSpec, generate_synthetic

logger = logging.getLogger(__name__)

NAME = "gen"
HELP = "generate a synthetic two-view dataset"
Config = SyntheticSpec
CONFIG_REQUIRED = False


def seed_update(config: SyntheticSpec, seed: int) -> Dict[str, Any]:
    return {"seed": seed}


def run(config: SyntheticSpec, layout: OutputLayout) -> Dict[str, Any]:
    vocab, dataset, support, truth = generate_synthetic(config)
    directory = layout.data_dir()
    manifest = save_manifest(
        directory, vocab, dataset, support,
        encoder_weight=config.encoder_weight,
        encoder_seed=config.encoder_seed,
        config_hash=layout.run_hash,
    )
    write_json(os.path.join(directory, "ground_truth.json"), truth, layout.run_hash)
    return {
        "manifest": manifest,
        "images": int(len(dataset.features)),
        "views": [v.view_name for v in dataset.views],
        "unseen_pairs": len(truth["unseen_pairs"]),
    }
