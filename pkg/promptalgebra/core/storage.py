"""
Binary file formats.

PALG  embedding matrix: 16-byte header (magic, version, rows, cols as
      little-endian u32) followed by rows*cols float32 LE, row-major.
PALP  prompt: same header with rows=1, a u32 metadata length, UTF-8 JSON
      metadata, then cols float64 LE values.
PALB  projection basis: header with rows=d, cols=m, JSON metadata, then
      d float64 eigenvalues and the d x m float64 basis, row-major.
"""

import json
import logging
import os
import struct
from typing import Any, Dict, Optional, Tuple

import numpy as np

from core.errors import CompatibilityError, FormatError, StorageError, ValidationError
from core.linalg import ProjectionBasis
from core.vlm import Prompt

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4sIII")
META_LENGTH = struct.Struct("<I")
FORMAT_VERSION = 1

EMBEDDING_MAGIC = b"PALG"
PROMPT_MAGIC = b"PALP"
BASIS_MAGIC = b"PALB"


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise StorageError(f"Cannot read {path}: {e}")


def _write_bytes(path: str, payload: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as f:
            f.write(payload)
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}")


def _header(magic: bytes, rows: int, cols: int) -> bytes:
    return HEADER.pack(magic, FORMAT_VERSION, rows, cols)


def _parse_header(data: bytes, magic: bytes, path: str) -> Tuple[int, int]:
    if len(data) < HEADER.size:
        raise FormatError(
            f"Truncated header: expected {HEADER.size} bytes, found {len(data)}",
            offset=len(data), path=path,
        )
    found, version, rows, cols = HEADER.unpack_from(data, 0)
    if found != magic:
        raise FormatError(f"Bad magic {found!r}, expected {magic!r}", offset=0, path=path)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported format version {version}", offset=4, path=path)
    return rows, cols


def _expect_length(data: bytes, expected: int, path: str):
    if len(data) < expected:
        raise FormatError(
            f"Truncated payload: expected {expected} bytes, found {len(data)}",
            offset=len(data), path=path,
        )
    if len(data) > expected:
        raise FormatError(
            f"Trailing data: expected {expected} bytes, found {len(data)}",
            offset=expected, path=path,
        )


def _read_meta(data: bytes, path: str) -> Tuple[Dict[str, Any], int]:
    start = HEADER.size
    if len(data) < start + META_LENGTH.size:
        raise FormatError(
            f"Truncated metadata length: expected {start + META_LENGTH.size} bytes, found {len(data)}",
            offset=len(data), path=path,
        )
    (length,) = META_LENGTH.unpack_from(data, start)
    begin = start + META_LENGTH.size
    end = begin + length
    if len(data) < end:
        raise FormatError(
            f"Truncated metadata: expected {end} bytes, found {len(data)}",
            offset=len(data), path=path,
        )
    try:
        meta = json.loads(data[begin:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"Unreadable metadata: {e}", offset=begin, path=path)
    return meta, end


def _pack_meta(meta: Dict[str, Any]) -> bytes:
    raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return META_LENGTH.pack(len(raw)) + raw


# Embedding matrices

def save_embeddings(matrix, path: str):
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValidationError(f"Embedding matrix must be 2-D, got shape {m.shape}")
    payload = _header(EMBEDDING_MAGIC, m.shape[0], m.shape[1]) + m.astype("<f4").tobytes(order="C")
    _write_bytes(path, payload)
    logger.debug(f"Wrote {m.shape[0]}x{m.shape[1]} embeddings to {path}")


def load_embeddings(path: str, expected_cols: Optional[int] = None) -> np.ndarray:
    """Load a PALG matrix as float32; optionally check its width against a manifest"""
    data = _read_bytes(path)
    rows, cols = _parse_header(data, EMBEDDING_MAGIC, path)
    _expect_length(data, HEADER.size + rows * cols * 4, path)
    if expected_cols is not None and cols != expected_cols:
        raise ValidationError(f"{path}: header dimension {cols} does not match manifest dimension {expected_cols}")
    return np.frombuffer(data, dtype="<f4", count=rows * cols, offset=HEADER.size).reshape(rows, cols).copy()


# Prompts

def save_prompt(prompt: Prompt, path: str):
    meta = {
        "source_task": prompt.source_task,
        "trained_with_projection": bool(prompt.trained_with_projection),
        "basis_fingerprint": prompt.basis_fingerprint,
        "config_hash": prompt.config_hash,
    }
    payload = (
        _header(PROMPT_MAGIC, 1, prompt.dim)
        + _pack_meta(meta)
        + prompt.values.astype("<f8").tobytes()
    )
    _write_bytes(path, payload)
    logger.info(f"Saved prompt '{prompt.source_task}' (d={prompt.dim}) to {path}")


def load_prompt(path: str) -> Prompt:
    data = _read_bytes(path)
    rows, cols = _parse_header(data, PROMPT_MAGIC, path)
    if rows != 1:
        raise FormatError(f"Prompt file must have one row, found {rows}", offset=8, path=path)
    meta, start = _read_meta(data, path)
    _expect_length(data, start + cols * 8, path)
    values = np.frombuffer(data, dtype="<f8", count=cols, offset=start).astype(np.float64)
    return Prompt(
        values=values,
        trained_with_projection=bool(meta.get("trained_with_projection", False)),
        source_task=meta.get("source_task", ""),
        basis_fingerprint=meta.get("basis_fingerprint"),
        config_hash=meta.get("config_hash"),
    )


# Projection bases

def save_basis(basis: ProjectionBasis, path: str, config_hash: Optional[str] = None):
    meta = {
        "energy_fraction": basis.energy_fraction,
        "fingerprint": basis.fingerprint,
        "config_hash": config_hash,
    }
    payload = (
        _header(BASIS_MAGIC, basis.ambient_dim, basis.m)
        + _pack_meta(meta)
        + basis.eigenvalues.astype("<f8").tobytes()
        + basis.basis.astype("<f8").tobytes(order="C")
    )
    _write_bytes(path, payload)
    logger.info(f"Saved basis (d={basis.ambient_dim}, m={basis.m}) to {path}")


def load_basis(path: str) -> ProjectionBasis:
    data = _read_bytes(path)
    d, m = _parse_header(data, BASIS_MAGIC, path)
    meta, start = _read_meta(data, path)
    _expect_length(data, start + 8 * (d + d * m), path)
    eigenvalues = np.frombuffer(data, dtype="<f8", count=d, offset=start).astype(np.float64)
    vectors = np.frombuffer(data, dtype="<f8", count=d * m, offset=start + 8 * d)
    try:
        energy_fraction = float(meta["energy_fraction"])
    except (KeyError, TypeError, ValueError):
        raise FormatError(
            "Basis metadata needs a numeric 'energy_fraction'", offset=HEADER.size + META_LENGTH.size, path=path
        )
    basis = ProjectionBasis(
        basis=vectors.reshape(d, m).astype(np.float64),
        eigenvalues=eigenvalues,
        energy_fraction=energy_fraction,
    )
    recorded = meta.get("fingerprint")
    if recorded and recorded != basis.fingerprint:
        raise CompatibilityError(f"{path}: stored fingerprint {recorded} does not match contents {basis.fingerprint}")
    return basis
