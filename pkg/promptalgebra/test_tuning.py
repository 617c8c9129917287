#!/usr/bin/env python3
"""
Tests for prompt tuning
"""

import sys
import os

# Add current directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from core.config import settings
from core.data import TRAIN
from core.errors import ConfigError, NumericError
from core.evaluation import view_accuracy
from core.linalg import project, spectral_basis
from core.regularize import RegularizerSpec
from core.tuning import PromptTrainer, TrainConfig, apply_dropout, ce_loss_and_grad, train_prompt
from sample_data import run_checks, small_bundle


def test_dropout_statistics():
    values = np.ones(200_000)
    dropped, scale = apply_dropout(values, 0.3, np.random.default_rng(0))
    assert abs(np.mean(dropped == 0.0) - 0.3) < 0.01
    assert abs(dropped.mean() - 1.0) < 0.01
    assert_array_equal(dropped, values * scale)

    kept, unit = apply_dropout(values, 0.0, np.random.default_rng(0))
    assert_array_equal(kept, values)
    assert_array_equal(unit, np.ones_like(values))


def test_config_rejects_unknown_and_out_of_range():
    for bad in ({"epochs": 0}, {"dropout_rate": 1.0}, {"learning_rate": -1.0}, {"epoch": 3}):
        try:
            TrainConfig(**bad)
            assert False, f"expected a validation error for {bad}"
        except ValueError:
            pass


def test_training_is_deterministic():
    bundle = small_bundle(noise_sigma=0.4)
    config = TrainConfig(epochs=3, batch_size=16, seed=5)
    a = PromptTrainer(bundle.dataset, "object", config, bundle.encoder)
    b = PromptTrainer(bundle.dataset, "object", config, bundle.encoder)
    pa, pb = a.train(), b.train()
    assert_array_equal(pa.values, pb.values)
    assert [r.to_dict() for r in a.history] == [r.to_dict() for r in b.history]

    other = train_prompt(bundle.dataset, "object", config.model_copy(update={"seed": 6}), bundle.encoder)
    assert not np.array_equal(pa.values, other.values)


def test_loss_decreases_on_noisy_data():
    bundle = small_bundle(noise_sigma=0.5)
    config = TrainConfig(epochs=10, learning_rate=0.001, dropout_rate=0.0, seed=1)
    trainer = PromptTrainer(bundle.dataset, "attribute", config, bundle.encoder)
    trainer.train()
    assert len(trainer.history) == 10
    assert trainer.history[-1].loss < trainer.history[0].loss


def test_projected_prompt_stays_in_subspace():
    bundle = small_bundle(noise_sigma=0.3)
    basis = spectral_basis(bundle.vocab.embeddings, 0.9)
    config = TrainConfig(epochs=3, use_projection=True, seed=2)
    prompt = train_prompt(bundle.dataset, "object", config, bundle.encoder, basis)
    assert prompt.trained_with_projection
    assert prompt.basis_fingerprint == basis.fingerprint
    assert_allclose(project(basis, prompt.values), prompt.values, atol=1e-12)


def test_projection_flag_must_match_basis():
    bundle = small_bundle()
    basis = spectral_basis(bundle.vocab.embeddings, 0.9)
    for config, given in ((TrainConfig(use_projection=True), None), (TrainConfig(), basis)):
        try:
            PromptTrainer(bundle.dataset, "object", config, bundle.encoder, given)
            assert False, "expected ConfigError"
        except ConfigError as e:
            assert e.key == "use_projection"


def test_regularized_training_records_reg_loss():
    bundle = small_bundle(noise_sigma=0.3)
    config = TrainConfig(
        epochs=2, seed=3,
        reg=[RegularizerSpec(kind="CA"), RegularizerSpec(kind="MV", k=2)],
        reg_weight=0.5,
    )
    trainer = PromptTrainer(bundle.dataset, "object", config, bundle.encoder, support=bundle.support)
    trainer.train()
    assert [r.kind for r in trainer.regularizers] == ["CA", "MV"]
    assert all(r.reg_loss > 0 for r in trainer.history)


def test_ce_loss_with_zero_prompt():
    bundle = small_bundle(noise_sigma=0.3)
    view = bundle.dataset.views[0]
    sums, counts = bundle.encoder.class_table(bundle.dataset.common_tokens, view.class_token_ids)
    loss, grad = ce_loss_and_grad(
        np.zeros(bundle.encoder.dim), bundle.dataset.features[:8], bundle.dataset.labels[:8, 0],
        bundle.encoder, sums, counts, 100.0,
    )
    assert np.isfinite(loss) and loss >= 0
    assert grad.shape == (bundle.encoder.dim,)


def test_ce_identical_class_texts_give_log_c():
    bundle = small_bundle(noise_sigma=0.3)
    rng = np.random.default_rng(4)
    for n_classes in (2, 5, 9):
        sums = np.tile(rng.normal(size=bundle.encoder.dim), (n_classes, 1))
        counts = np.full(n_classes, 3.0)
        labels = rng.integers(0, n_classes, size=10)
        prompt = rng.normal(0.0, 0.5, bundle.encoder.dim)
        loss, grad = ce_loss_and_grad(prompt, bundle.dataset.features[:10], labels, bundle.encoder, sums, counts, 100.0)
        assert_allclose(loss, np.log(n_classes), rtol=1e-12)
        assert_allclose(grad, 0.0, atol=1e-10)


def test_config_defaults_follow_settings():
    saved = (settings.energy_fraction, settings.logit_scale)
    try:
        settings.energy_fraction, settings.logit_scale = 0.75, 20.0
        config = TrainConfig()
        assert config.energy_fraction == 0.75
        assert config.logit_scale == 20.0
        assert TrainConfig(logit_scale=5.0).logit_scale == 5.0
    finally:
        settings.energy_fraction, settings.logit_scale = saved
    assert TrainConfig().logit_scale == saved[1]


def test_non_finite_image_names_dataset_row():
    bundle = small_bundle(noise_sigma=0.3)
    bad = int(bundle.dataset.indices(TRAIN)[-1])
    bundle.dataset.features[bad] = np.nan
    try:
        train_prompt(bundle.dataset, "object", TrainConfig(epochs=1, dropout_rate=0.0), bundle.encoder)
        assert False, "expected NumericError"
    except NumericError as e:
        assert str(e).endswith(f"sample {bad}")


def test_tuning_corrects_class_token_bias():
    knobs = dict(
        d=16, n_objects=6, n_attributes=0, samples_per_pair=40, test_fraction=0.5,
        noise_sigma=0.3, template_norm=2.0, seed=3,
    )
    biased = small_bundle(class_token_spread=0.8, **knobs)
    unbiased = small_bundle(**knobs)
    assert_array_equal(biased.dataset.features, unbiased.dataset.features)

    zero_shot = view_accuracy(None, biased.dataset, "object", biased.encoder)
    nearest_concept = view_accuracy(None, unbiased.dataset, "object", unbiased.encoder)
    assert zero_shot <= nearest_concept - 0.05, (zero_shot, nearest_concept)

    config = TrainConfig(epochs=40, batch_size=8, learning_rate=0.3, dropout_rate=0.0, logit_scale=10.0, seed=1)
    prompt = train_prompt(biased.dataset, "object", config, biased.encoder)
    tuned = view_accuracy(prompt, biased.dataset, "object", biased.encoder)
    assert tuned >= zero_shot + 0.05, (tuned, zero_shot)

    template, _ = biased.encoder.token_sum(biased.dataset.common_tokens)
    assert prompt.values @ template < 0.0


if __name__ == "__main__":
    sys.exit(run_checks(dict(globals())))
