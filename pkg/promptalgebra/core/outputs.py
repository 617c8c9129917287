"""
Output directory layout and result writers.

Every file written here carries the hash of the validated run config that
produced it: JSON documents as a ``config_hash`` key, TSV tables as a
leading ``# config_hash=...`` comment line, JSON-lines logs as a field on
each record.
"""

import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, Optional

import pandas as pd
from pydantic import BaseModel

from core.config import settings
from core.errors import StorageError

logger = logging.getLogger(__name__)

SUBDIRS = ("prompts", "bases", "results", "logs")


def config_hash(config: Any) -> str:
    """sha256 of the canonical JSON form of a run config, first 16 hex digits"""
    if isinstance(config, BaseModel):
        config = config.model_dump(mode="json")
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class OutputLayout:
    """`<out>/{prompts,bases,results,logs}/` for one command run"""

    def __init__(self, root: str, run_hash: str, hashed_filenames: Optional[bool] = None):
        self.root = root
        self.run_hash = run_hash
        self.hashed_filenames = settings.hashed_filenames if hashed_filenames is None else hashed_filenames

    def path(self, kind: str, name: str, extension: str) -> str:
        if kind not in SUBDIRS and kind != "data":
            raise StorageError(f"Unknown output kind '{kind}'")
        stem = f"{name}-{self.run_hash[:8]}" if self.hashed_filenames else name
        directory = os.path.join(self.root, kind)
        try:
            os.makedirs(directory, exist_ok=True)
        except OSError as e:
            raise StorageError(f"Cannot create {directory}: {e}")
        return os.path.join(directory, f"{stem}.{extension}")

    def data_dir(self) -> str:
        return os.path.join(self.root, "data")


def write_json(path: str, document: Dict[str, Any], run_hash: str) -> str:
    payload = dict(document)
    payload["config_hash"] = run_hash
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}")
    logger.info(f"Wrote {path}")
    return path


def write_tsv(path: str, frame: pd.DataFrame, run_hash: str) -> str:
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(f"# config_hash={run_hash}\n")
            frame.to_csv(f, sep="\t", index=False, float_format=settings.tsv_float_format, lineterminator="\n")
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}")
    logger.info(f"Wrote {path}")
    return path


def read_tsv(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, sep="\t", comment="#")
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}")


def write_jsonl(path: str, records: Iterable[Dict[str, Any]], run_hash: str) -> str:
    try:
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps({**record, "config_hash": run_hash}, sort_keys=True) + "\n")
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}")
    logger.info(f"Wrote {path}")
    return path
