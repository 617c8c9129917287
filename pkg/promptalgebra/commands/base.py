"""Shared plumbing for the subcommands: config loading and artifact lookup"""

import json
import logging
from typing import Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict
from pydantic import ValidationError as SchemaError

from core.data import Bundle, load_manifest
from core.errors import ConfigError, StorageError
from core.linalg import ProjectionBasis, spectral_basis
from core.outputs import OutputLayout
from core.storage import load_basis, save_basis

logger = logging.getLogger(__name__)

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class CommandConfig(BaseModel):
    """Base for run configs; unknown keys are rejected"""

    model_config = ConfigDict(extra="forbid")


def schema_error(error: SchemaError) -> ConfigError:
    first = error.errors()[0]
    key = ".".join(str(part) for part in first["loc"]) or None
    return ConfigError(f"Invalid config: {first['msg']}", key=key)


def load_config(path: Optional[str], model: Type[ConfigT]) -> ConfigT:
    if path is None:
        raw = {}
    else:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except OSError as e:
            raise StorageError(f"Cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"Config {path} must be a JSON object")
    try:
        return model.model_validate(raw)
    except SchemaError as e:
        raise schema_error(e)


def revalidate(config: ConfigT, **updates) -> ConfigT:
    """Apply overrides and run validation again"""
    try:
        return type(config).model_validate({**config.model_dump(), **updates})
    except SchemaError as e:
        raise schema_error(e)


def open_bundle(manifest: str) -> Bundle:
    return load_manifest(manifest)


def resolve_basis(
    bundle: Bundle,
    basis_path: Optional[str],
    use_projection: bool,
    energy_fraction: float,
    layout: Optional[OutputLayout] = None,
    name: str = "basis",
) -> Optional[ProjectionBasis]:
    """Load the given basis, or compute (and save) one when projection is on but no file was named"""
    if basis_path:
        basis = load_basis(basis_path)
        if basis.ambient_dim != bundle.vocab.dim:
            raise ConfigError(
                f"Basis dimension {basis.ambient_dim} does not match manifest d={bundle.vocab.dim}", key="basis"
            )
        return basis
    if not use_projection:
        return None
    basis = spectral_basis(bundle.vocab.embeddings, energy_fraction)
    if layout is not None:
        save_basis(basis, layout.path("bases", name, "palb"), config_hash=layout.run_hash)
    return basis
