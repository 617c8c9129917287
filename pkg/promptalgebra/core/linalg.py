"""
Dense symmetric linear algebra for the prompt eigenspace.

Vocabulary rows are token embeddings, so the correlation matrix V^T V is
d x d and the projection acts on d-dimensional prompt vectors.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from core.config import settings
from core.errors import ConfigError, DimensionError, NumericError

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-9


def _as_square(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("Matrix contains non-finite entries")
    scale = np.linalg.norm(m)
    if np.linalg.norm(m - m.T) > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
        raise DimensionError("Matrix is not symmetric")
    return m


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry (first on ties) is positive"""
    if vectors.size == 0:
        return vectors
    magnitude = np.abs(vectors)
    pivots = np.argmax(magnitude >= magnitude.max(axis=0) * (1 - 1e-12), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _jacobi(m: np.ndarray, tolerance: float, max_sweeps: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations; returns (diagonal, accumulated rotations)"""
    a = m.copy()
    n = a.shape[0]
    v = np.eye(n)
    limit = tolerance * np.linalg.norm(m)

    for sweep in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= limit:
            logger.debug(f"Jacobi converged after {sweep} sweeps (off={off:.3e})")
            return np.diag(a).copy(), v

        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                # A <- J^T A J, J rotates the (p, q) plane
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q

    raise NumericError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def sym_eig(matrix, solver: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a real symmetric matrix.

    Args:
        matrix: d x d symmetric array
        solver: "jacobi" (default from settings) or "lapack"

    Returns:
        (eigenvalues descending, eigenvectors as matching columns)
    """
    m = _as_square(matrix)
    if m.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))

    solver = solver or settings.eigensolver
    if solver == "jacobi":
        values, vectors = _jacobi(m, settings.jacobi_tolerance, settings.jacobi_max_sweeps)
    elif solver == "lapack":
        values, vectors = sla.eigh(m)
    else:
        raise ConfigError(f"Unknown eigensolver '{solver}'", key="eigensolver")

    # Stable sort keeps ties in original index order
    order = np.argsort(-values, kind="stable")
    return values[order], _canonical_signs(vectors[:, order])


@dataclass(frozen=True)
class ProjectionBasis:
    """Top-m eigenvectors E of V^T V; P = E E^T is applied lazily"""

    basis: np.ndarray
    eigenvalues: np.ndarray
    energy_fraction: float
    fingerprint: str = field(init=False)

    def __post_init__(self):
        basis = np.ascontiguousarray(self.basis, dtype=np.float64)
        eigenvalues = np.ascontiguousarray(self.eigenvalues, dtype=np.float64)
        if basis.ndim != 2 or eigenvalues.shape != (basis.shape[0],):
            raise DimensionError(
                f"Basis shape {basis.shape} does not match {eigenvalues.shape[0]} eigenvalues"
            )
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "eigenvalues", eigenvalues)

        digest = hashlib.sha256()
        digest.update(np.asarray(basis.shape, dtype="<u8").tobytes())
        digest.update(basis.astype("<f8").tobytes())
        digest.update(np.float64(self.energy_fraction).astype("<f8").tobytes())
        object.__setattr__(self, "fingerprint", digest.hexdigest()[:16])

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    @property
    def retained_energy(self) -> float:
        total = float(np.sum(self.eigenvalues))
        if total <= 0.0:
            return 1.0
        return float(np.sum(self.eigenvalues[: self.m]) / total)

    def project(self, x) -> np.ndarray:
        return project(self, x)

    def projector(self) -> np.ndarray:
        """Materialized d x d projector, for inspection only"""
        return self.basis @ self.basis.T


def spectral_basis(vocab, energy: float, solver: Optional[str] = None) -> ProjectionBasis:
    """Smallest eigenbasis of vocab^T vocab holding at least `energy` of the spectral mass"""
    if not (0.0 < energy <= 1.0):
        raise ConfigError(f"energy_fraction must be in (0, 1], got {energy}", key="energy_fraction")

    v = np.asarray(vocab, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 1:
        raise DimensionError(f"Vocabulary must be a non-empty n x d matrix, got shape {v.shape}")

    values, vectors = sym_eig(v.T @ v, solver=solver)
    # V^T V is PSD; negative values are rounding noise
    values = np.clip(values, 0.0, None)
    cumulative = np.cumsum(values)
    total = cumulative[-1]
    if total <= 0.0:
        raise NumericError("Vocabulary has zero spectral energy")

    m = int(np.argmax(cumulative >= energy * total)) + 1
    logger.info(
        f"Spectral basis: kept {m}/{v.shape[1]} directions "
        f"({cumulative[m - 1] / total:.4f} of energy, target {energy})"
    )
    return ProjectionBasis(basis=vectors[:, :m], eigenvalues=values, energy_fraction=energy)


def project(basis: ProjectionBasis, x) -> np.ndarray:
    """E (E^T x)"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (basis.ambient_dim,):
        raise DimensionError(
            f"Vector of shape {x.shape} does not match basis dimension {basis.ambient_dim}"
        )
    return basis.basis @ (basis.basis.T @ x)
