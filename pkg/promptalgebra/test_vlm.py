#!/usr/bin/env python3
"""
Tests for the scoring model: encoding, distances, classification and the
prompt gradient
"""

import sys
import os

# Add current directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
from numpy.testing import assert_allclose

from core.errors import ConfigError, ContractError, DimensionError, InputError, NumericError
from core.linalg import project, spectral_basis
from core.vlm import (
    TextEncoder, TextInput, Vocabulary, classify, cosine_distance, encode_text, logits, prompt_cross_entropy,
)
from sample_data import run_checks, small_bundle


def _vocab(n=10, d=6, seed=0):
    rng = np.random.default_rng(seed)
    return Vocabulary(token_names=[f"t{i}" for i in range(n)], embeddings=rng.standard_normal((n, d)))


def test_encode_is_unit_and_mean_pooled():
    vocab = _vocab()
    feature = encode_text(vocab, TextInput((0, 1), (2,)))
    expected = vocab.embeddings[[0, 1, 2]].mean(axis=0)
    assert_allclose(feature, expected / np.linalg.norm(expected), atol=1e-12)

    prompt = np.random.default_rng(1).standard_normal(6)
    prompted = encode_text(vocab, TextInput((0, 1), (2,), prompt))
    expected = (vocab.embeddings[[0, 1, 2]].sum(axis=0) + prompt) / 4
    assert_allclose(prompted, expected / np.linalg.norm(expected), atol=1e-12)


def test_orthogonal_encoder_preserves_geometry():
    vocab = _vocab()
    encoder = TextEncoder.create(vocab, "orthogonal", seed=3)
    assert_allclose(encoder.weight.T @ encoder.weight, np.eye(6), atol=1e-12)
    a = encoder.encode(TextInput((0,), (1,)))
    b = encoder.encode(TextInput((0,), (2,)))
    a0 = encode_text(vocab, TextInput((0,), (1,)))
    b0 = encode_text(vocab, TextInput((0,), (2,)))
    assert_allclose(a @ b, a0 @ b0, atol=1e-12)


def test_encode_edge_cases():
    vocab = _vocab()
    try:
        encode_text(vocab, TextInput((), ()))
        assert False, "expected InputError"
    except InputError:
        pass
    try:
        encode_text(vocab, TextInput((0,), (1,), np.ones(5)))
        assert False, "expected DimensionError"
    except DimensionError:
        pass
    try:
        encode_text(vocab, TextInput((0,), (99,)))
        assert False, "expected InputError"
    except InputError:
        pass


def test_cosine_distance():
    a = np.array([1.0, 0.0])
    assert cosine_distance(a, a) == 0.0
    assert cosine_distance(a, -a) == 2.0
    assert_allclose(cosine_distance(a, np.array([0.0, 1.0])), 1.0)
    try:
        cosine_distance(a, np.array([2.0, 0.0]))
        assert False, "expected ContractError"
    except ContractError:
        pass


def test_classify_and_logits():
    texts = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert classify(np.array([0.0, 1.0]), texts) == 1  # tie goes to the lower index
    assert classify(np.array([1.0, 0.0]), texts) == 0
    assert_allclose(logits(np.array([0.6, 0.8]), texts, 100.0), [60.0, 80.0, 80.0])
    try:
        logits(np.array([1.0, 0.0]), texts, 0.0)
        assert False, "expected ConfigError"
    except ConfigError:
        pass


def _numeric_grad(fn, v, h=1e-6):
    grad = np.zeros_like(v)
    for i in range(len(v)):
        step = np.zeros_like(v)
        step[i] = h
        grad[i] = (fn(v + step) - fn(v - step)) / (2 * h)
    return grad


def _random_case(seed):
    """A small random vocabulary, encoder, class table and batch; shapes vary with the seed"""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(3, 12))
    n_tokens = int(rng.integers(4, 16))
    vocab = Vocabulary(token_names=[f"t{i}" for i in range(n_tokens)], embeddings=rng.standard_normal((n_tokens, d)))
    encoder = TextEncoder.create(vocab, "orthogonal" if seed % 3 == 0 else "identity", seed)
    n_classes = int(rng.integers(2, 7))
    common = tuple(rng.integers(0, n_tokens, size=int(rng.integers(0, 4))).tolist())
    class_ids = [tuple(rng.integers(0, n_tokens, size=int(rng.integers(1, 4))).tolist()) for _ in range(n_classes)]
    sums, counts = encoder.class_table(common, class_ids)
    batch = int(rng.integers(1, 9))
    images = rng.standard_normal((batch, d))
    images /= np.linalg.norm(images, axis=1, keepdims=True)
    targets = rng.integers(0, n_classes, size=batch)
    prompt = rng.standard_normal(d)
    prompt *= [0.05, 0.5, 3.0][seed % 3] / np.linalg.norm(prompt)
    basis = spectral_basis(vocab.embeddings, 0.8) if seed % 2 else None
    return encoder, images, sums, counts, targets, prompt, basis, float([1.0, 10.0, 30.0][seed % 3])


def test_gradient_matches_finite_differences():
    for seed in range(12):
        encoder, images, sums, counts, targets, prompt, basis, scale = _random_case(seed)

        def loss(v):
            if basis is not None:
                v = project(basis, v)
            return prompt_cross_entropy(encoder, images, sums, counts, targets, v, scale)[0]

        at = project(basis, prompt) if basis is not None else prompt
        _, analytic, _ = prompt_cross_entropy(encoder, images, sums, counts, targets, at, scale)
        if basis is not None:
            analytic = project(basis, analytic)
        numeric = _numeric_grad(loss, prompt)
        tolerance = max(1.0, np.abs(analytic).max())
        assert_allclose(numeric, analytic, rtol=1e-4, atol=1e-4 * tolerance, err_msg=f"seed {seed}")


def test_gradient_with_orthogonal_encoder_on_dataset():
    bundle = small_bundle(noise_sigma=0.3, encoder_weight="orthogonal")
    dataset, encoder = bundle.dataset, bundle.encoder
    view = dataset.views[0]
    sums, counts = encoder.class_table(dataset.common_tokens, view.class_token_ids)
    images = dataset.features[:12]
    targets = dataset.labels[:12, 0]
    prompt = np.random.default_rng(5).normal(0.0, 0.3, encoder.dim)

    _, analytic, _ = prompt_cross_entropy(encoder, images, sums, counts, targets, prompt, 10.0)
    numeric = _numeric_grad(
        lambda v: prompt_cross_entropy(encoder, images, sums, counts, targets, v, 10.0)[0], prompt
    )
    scale = max(1.0, np.abs(analytic).max())
    assert_allclose(numeric, analytic, rtol=1e-4, atol=1e-4 * scale)


def test_gradient_with_per_sample_texts():
    bundle = small_bundle(noise_sigma=0.3)
    dataset, encoder = bundle.dataset, bundle.encoder
    sums, counts = encoder.class_table(dataset.common_tokens, dataset.views[1].class_token_ids)
    images = dataset.features[:5]
    # a different subset of candidate texts for every sample
    picks = np.array([[0, 1], [1, 2], [2, 0], [0, 2], [1, 0]])
    targets = np.zeros(5, dtype=np.int64)
    prompt = np.random.default_rng(6).normal(0.0, 0.3, encoder.dim)

    _, analytic, losses = prompt_cross_entropy(encoder, images, sums[picks], counts[picks], targets, prompt, 10.0)
    assert losses.shape == (5,)
    numeric = _numeric_grad(
        lambda v: prompt_cross_entropy(encoder, images, sums[picks], counts[picks], targets, v, 10.0)[0], prompt
    )
    scale = max(1.0, np.abs(analytic).max())
    assert_allclose(numeric, analytic, rtol=1e-4, atol=1e-4 * scale)


def test_non_finite_loss_names_the_sample():
    encoder, images, sums, counts, targets, prompt, _, scale = _random_case(4)
    images = np.vstack([images, np.full(images.shape[1], np.nan)])
    targets = np.append(targets, 0)
    rows = np.arange(len(images)) + 100
    for index, expected in ((rows, rows[-1]), (None, len(images) - 1)):
        try:
            prompt_cross_entropy(encoder, images, sums, counts, targets, prompt, scale, sample_index=index)
            assert False, "expected NumericError"
        except NumericError as e:
            assert str(e).endswith(f"sample {expected}")


if __name__ == "__main__":
    sys.exit(run_checks(dict(globals())))
