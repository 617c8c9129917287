#!/usr/bin/env python3
"""
Tests for the symmetric eigensolver and the eigenspace projection
"""

import sys
import os

# Add current directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
from numpy.testing import assert_allclose

from core.errors import ConfigError, DimensionError
from core.linalg import ProjectionBasis, project, spectral_basis, sym_eig
from sample_data import run_checks


def _random_symmetric(d, seed):
    a = np.random.default_rng(seed).standard_normal((d, d))
    return a + a.T


def test_diagonal_matrix():
    values, vectors = sym_eig(np.diag([1.0, 3.0, 2.0]))
    assert_allclose(values, [3.0, 2.0, 1.0], atol=1e-12)
    assert_allclose(np.abs(vectors), np.eye(3)[:, [1, 2, 0]], atol=1e-12)


def test_reconstruction_and_orthonormality():
    for seed in range(5):
        m = _random_symmetric(12, seed)
        values, vectors = sym_eig(m)
        assert np.all(np.diff(values) <= 0)
        assert_allclose(vectors.T @ vectors, np.eye(12), atol=1e-10)
        assert_allclose(vectors @ np.diag(values) @ vectors.T, m, atol=1e-9)


def test_jacobi_matches_lapack():
    m = _random_symmetric(20, 7)
    jv, jvec = sym_eig(m, solver="jacobi")
    lv, lvec = sym_eig(m, solver="lapack")
    assert_allclose(jv, lv, atol=1e-9)
    # canonical signs make the vectors comparable, not just the spans
    assert_allclose(jvec, lvec, atol=1e-7)


def test_sign_convention():
    _, vectors = sym_eig(_random_symmetric(8, 3))
    for column in vectors.T:
        assert column[np.argmax(np.abs(column))] > 0


def test_rejects_bad_matrices():
    for bad in (np.ones((2, 3)), np.array([[1.0, 2.0], [0.0, 1.0]])):
        try:
            sym_eig(bad)
            assert False, "expected DimensionError"
        except DimensionError:
            pass
    values, vectors = sym_eig(np.zeros((0, 0)))
    assert values.shape == (0,) and vectors.shape == (0, 0)


def test_spectral_basis_energy():
    # V^T V = diag(9, 4, 1, 0): energies 9/14, 13/14, 1
    vocab = np.diag([3.0, 2.0, 1.0, 0.0])
    assert spectral_basis(vocab, 0.5).m == 1
    assert spectral_basis(vocab, 0.9).m == 2
    assert spectral_basis(vocab, 0.95).m == 3
    full = spectral_basis(vocab, 1.0)
    assert full.m == 3
    assert_allclose(full.retained_energy, 1.0)

    for energy in (0.0, -0.1, 1.5):
        try:
            spectral_basis(vocab, energy)
            assert False, "expected ConfigError"
        except ConfigError as e:
            assert e.key == "energy_fraction"


def test_spectral_basis_is_minimal_on_two_tokens():
    # V^T V = diag(4, 1): the top direction holds 0.8 of the energy
    vocab = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert spectral_basis(vocab, 0.9).m == 2
    single = spectral_basis(vocab, 0.75)
    assert single.m == 1
    assert_allclose(np.abs(single.basis[:, 0]), [1.0, 0.0], atol=1e-12)
    assert_allclose(single.retained_energy, 0.8)
    assert_allclose(project(single, [3.0, 5.0]), [3.0, 0.0], atol=1e-12)


def test_projection_properties():
    vocab = np.random.default_rng(1).standard_normal((30, 10))
    basis = spectral_basis(vocab, 0.8)
    x = np.random.default_rng(2).standard_normal(10)
    once = project(basis, x)
    assert_allclose(project(basis, once), once, atol=1e-12)
    assert np.linalg.norm(once) <= np.linalg.norm(x) + 1e-12
    assert_allclose(basis.projector() @ x, once, atol=1e-12)
    try:
        project(basis, np.ones(9))
        assert False, "expected DimensionError"
    except DimensionError:
        pass


def test_fingerprint_tracks_contents():
    vocab = np.random.default_rng(4).standard_normal((20, 6))
    a = spectral_basis(vocab, 0.9)
    b = spectral_basis(vocab, 0.9)
    assert a.fingerprint == b.fingerprint
    other = ProjectionBasis(basis=-a.basis, eigenvalues=a.eigenvalues, energy_fraction=0.9)
    assert other.fingerprint != a.fingerprint


if __name__ == "__main__":
    sys.exit(run_checks(dict(globals())))
