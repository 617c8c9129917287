"""spectra: projection basis file plus the eigenvalue table"""

import logging
from typing import Any, Dict, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import Field

from commands.base import CommandConfig, open_bundle
from core.config import settings
from core.linalg import spectral_basis
from core.outputs import OutputLayout, write_tsv
from core.storage import save_basis

logger = logging.getLogger(__name__)

NAME = "spectra"
HELP = "compute the vocabulary eigenspace basis"
CONFIG_REQUIRED = True


class Config(CommandConfig):
    manifest: str
    energy_fraction: float = Field(default_factory=lambda: settings.energy_fraction, gt=0.0, le=1.0)
    eigensolver: Optional[Literal["jacobi", "lapack"]] = None
    name: str = "basis"


def seed_update(config: Config, seed: int) -> Dict[str, Any]:
    # deterministic, nothing to seed
    return {}


def eigenvalue_table(eigenvalues: np.ndarray, m: int) -> pd.DataFrame:
    total = float(eigenvalues.sum())
    cumulative = np.cumsum(eigenvalues) / total if total > 0 else np.ones_like(eigenvalues)
    return pd.DataFrame({
        "index": np.arange(len(eigenvalues)),
        "eigenvalue": eigenvalues,
        "cumulative_energy": cumulative,
        "retained": np.arange(len(eigenvalues)) < m,
    })


def run(config: Config, layout: OutputLayout) -> Dict[str, Any]:
    bundle = open_bundle(config.manifest)
    basis = spectral_basis(bundle.vocab.embeddings, config.energy_fraction, solver=config.eigensolver)
    basis_path = layout.path("bases", config.name, "palb")
    save_basis(basis, basis_path, config_hash=layout.run_hash)
    table_path = write_tsv(
        layout.path("results", f"{config.name}_eigenvalues", "tsv"),
        eigenvalue_table(basis.eigenvalues, basis.m),
        layout.run_hash,
    )
    return {
        "basis": basis_path,
        "eigenvalues": table_path,
        "m": basis.m,
        "d": basis.ambient_dim,
        "retained_energy": basis.retained_energy,
        "fingerprint": basis.fingerprint,
    }
