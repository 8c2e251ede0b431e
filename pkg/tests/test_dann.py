"""Three-headed adversarial model: predictions, the reversal sign law,
scheme equivalences, discriminator optimality, and checkpointing."""
import json
import math

import numpy as np
import pytest

from shiftlab import dann, nn
from shiftlab.active_loop import evaluate
from shiftlab.data import ShiftSpec, gen_shifted_pair
from shiftlab.errors import EmptyBatchError, SchemeDataError


def tiny_spec(**kw):
    base = dict(
        input_dim=2,
        num_classes=2,
        feature_dims=[4],
        predictor_dims=[],
        discriminator_dims=[3],
        adversarial_weight=0.1,
        entropy_weight=0.1,
        learning_rate=1e-3,
    )
    base.update(kw)
    return dann.ModelSpec(**base)


def fixed_batches(seed=7, n=6):
    rng = np.random.default_rng(seed)
    lab = dann.LabeledBatch(rng.normal(size=(n, 2)), rng.integers(0, 2, n), np.ones(n))
    unl = dann.UnlabeledBatch.of(rng.normal(size=(n, 2)))
    return lab, unl


def independent_forward_probs(model, x):
    """Re-derive class probabilities with explicit per-layer math, no reuse
    of the library forward pass."""
    rows = []
    for row in x:
        h = list(row)
        for layer in model.feature_extractor.layers + model.class_predictor.layers:
            out = []
            for j in range(layer.weight.shape[1]):
                z = layer.bias[j] + sum(h[i] * layer.weight[i, j] for i in range(len(h)))
                out.append(max(z, 0.0) if layer.activation == "relu" else z)
            h = out
        mx = max(h)
        exps = [math.exp(v - mx) for v in h]
        total = sum(exps)
        rows.append([e / total for e in exps])
    return np.array(rows)


class TestPredictions:
    def test_zeroed_final_layer_gives_uniform_rows(self):
        model = dann.build_model(tiny_spec(num_classes=5), np.random.default_rng(0))
        model.class_predictor.layers[-1].weight[:] = 0.0
        model.class_predictor.layers[-1].bias[:] = 0.0
        probs = dann.predict_class_probs(model, np.random.default_rng(1).normal(size=(4, 2)))
        np.testing.assert_allclose(probs, 0.2, atol=1e-12)

    def test_opposed_logits_at_zero_give_half_half(self):
        model = dann.build_model(tiny_spec(), np.random.default_rng(0))
        # final layer emits [z, -z] with z = 0 for any input
        model.class_predictor.layers[-1].weight[:] = 0.0
        model.class_predictor.layers[-1].bias[:] = 0.0
        probs = dann.predict_class_probs(model, np.zeros((1, 2)))
        np.testing.assert_allclose(probs, [[0.5, 0.5]], atol=1e-12)

    def test_probs_match_independent_forward_oracle(self):
        model = dann.build_model(tiny_spec(feature_dims=[4, 3]), np.random.default_rng(42))
        x = np.random.default_rng(7).normal(size=(3, 2))
        np.testing.assert_allclose(
            dann.predict_class_probs(model, x),
            independent_forward_probs(model, x),
            atol=1e-12,
        )

    def test_zero_discriminator_weights_give_half(self):
        model = dann.build_model(tiny_spec(), np.random.default_rng(0))
        for layer in model.discriminator.layers:
            layer.weight[:] = 0.0
            layer.bias[:] = 0.0
        probs = dann.predict_domain_prob(model, np.random.default_rng(1).normal(size=(5, 2)))
        np.testing.assert_array_equal(probs, 0.5)

    def test_saturated_domain_logit_clamped(self):
        model = dann.build_model(tiny_spec(), np.random.default_rng(0))
        for layer in model.discriminator.layers:
            layer.weight[:] = 0.0
        model.discriminator.layers[-1].bias[:] = 40.0
        probs = dann.predict_domain_prob(model, np.zeros((2, 2)))
        np.testing.assert_array_equal(probs, 1.0 - 1e-6)
        model.discriminator.layers[-1].bias[:] = -40.0
        probs = dann.predict_domain_prob(model, np.zeros((2, 2)))
        np.testing.assert_array_equal(probs, 1e-6)


class TestAdversarialStep:
    def test_golden_loss_report(self):
        """Frozen from the first verified run, after the finite-difference
        suite passed."""
        model = dann.build_model(tiny_spec(), np.random.default_rng(42))
        lab, unl = fixed_batches()
        report = dann.adversarial_step(model, lab, unl)
        assert report["class_loss"] == pytest.approx(0.8099661425610799, abs=1e-15)
        assert report["domain_loss"] == pytest.approx(0.756394120159959, abs=1e-15)
        assert report["entropy_loss"] == pytest.approx(0.6234135789619768, abs=1e-15)

    def test_supervised_golden_loss_report(self):
        model = dann.build_model(tiny_spec(), np.random.default_rng(42))
        lab, unl = fixed_batches()
        report = dann.supervised_step(model, lab, unl, train_discriminator=True)
        assert report["class_loss"] == pytest.approx(0.8099661425610799, abs=1e-15)
        assert report["domain_loss"] == pytest.approx(0.756394120159959, abs=1e-15)
        assert report["entropy_loss"] == 0.0

    def test_empty_labeled_batch_rejected(self):
        model = dann.build_model(tiny_spec(), np.random.default_rng(0))
        lab = dann.LabeledBatch(np.zeros((0, 2)), np.zeros(0, int), np.zeros(0))
        with pytest.raises(EmptyBatchError):
            dann.adversarial_step(model, lab, dann.UnlabeledBatch.of(np.zeros((0, 2))))

    def test_lambda_zero_matches_supervised_update_bitwise(self):
        """With both loss weights off, the adversarial update of the feature
        and predictor heads is the supervised update, bit for bit."""
        lab, unl = fixed_batches()
        spec = tiny_spec(adversarial_weight=0.0, entropy_weight=0.0)
        adv = dann.build_model(spec, np.random.default_rng(5))
        sup = dann.build_model(spec, np.random.default_rng(5))
        dann.adversarial_step(adv, lab, unl)
        dann.supervised_step(sup, lab, unl, train_discriminator=True)
        for a, s in zip(
            adv.feature_extractor.parameters() + adv.class_predictor.parameters(),
            sup.feature_extractor.parameters() + sup.class_predictor.parameters(),
        ):
            np.testing.assert_array_equal(a, s)

    @pytest.mark.parametrize("weight", [0.0, 0.1, 1.0])
    def test_reversal_sign_law_exact(self, weight):
        """Domain-loss contribution to the feature gradient is exactly
        -weight times the unreversed gradient: zero float difference."""
        lab, unl = fixed_batches()
        with_adv = dann.build_model(tiny_spec(adversarial_weight=weight), np.random.default_rng(9))
        without = dann.build_model(tiny_spec(adversarial_weight=0.0), np.random.default_rng(9))
        g_with, _ = dann.adversarial_gradients(with_adv, lab, unl)
        g_without, _ = dann.adversarial_gradients(without, lab, unl)

        # independently recompute the unreversed domain gradient through the
        # feature stack
        feats_lab, cache_lab = nn.forward(with_adv.feature_extractor, lab.features)
        feats_unl, cache_unl = nn.forward(with_adv.feature_extractor, unl.features)
        logit, cache_d = nn.forward(with_adv.discriminator, np.vstack([feats_lab, feats_unl]))
        _, d_dom = nn.binary_logistic_loss(
            logit[:, 0], np.concatenate([lab.domain_labels, unl.domain_labels])
        )
        _, d_feat = nn.backward(with_adv.discriminator, cache_d, d_dom[:, None])
        g_lab, _ = nn.backward(with_adv.feature_extractor, cache_lab, d_feat[: feats_lab.shape[0]])
        g_unl, _ = nn.backward(with_adv.feature_extractor, cache_unl, d_feat[feats_lab.shape[0]:])
        unreversed = [a + b for a, b in zip(g_lab, g_unl)]

        for reported, indep in zip(g_with["feature_domain_unreversed"], unreversed):
            np.testing.assert_array_equal(reported, indep)
        # the applied feature gradient is (class+entropy) plus the reversed term
        for total, base, unrev in zip(g_with["feature"], g_without["feature"], unreversed):
            if weight == 0.0:
                np.testing.assert_array_equal(total, base)
            else:
                np.testing.assert_array_equal(total, base + (-weight) * unrev)

    def test_entropy_term_pushes_toward_confident_predictions(self):
        spec = tiny_spec(adversarial_weight=0.0, entropy_weight=1.0)
        model = dann.build_model(spec, np.random.default_rng(3))
        lab, unl = fixed_batches(n=32)
        first = dann.adversarial_step(model, lab, unl)["entropy_loss"]
        for _ in range(300):
            last = dann.adversarial_step(model, lab, unl)["entropy_loss"]
        assert last < first


class TestSupervisedStep:
    def test_overfits_single_sample(self):
        """With a small learning rate the loss on one repeated sample
        strictly decreases at every step."""
        model = dann.build_model(tiny_spec(), np.random.default_rng(1))
        batch = dann.LabeledBatch(np.array([[0.3, -0.7]]), np.array([1]), np.ones(1))
        losses = [dann.supervised_step(model, batch)["class_loss"] for _ in range(100)]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_discriminator_training_leaves_features_alone(self):
        lab, unl = fixed_batches()
        a = dann.build_model(tiny_spec(), np.random.default_rng(2))
        b = dann.build_model(tiny_spec(), np.random.default_rng(2))
        dann.supervised_step(a, lab, unl, train_discriminator=True)
        dann.supervised_step(b, lab, unl, train_discriminator=False)
        for pa, pb in zip(a.feature_extractor.parameters(), b.feature_extractor.parameters()):
            np.testing.assert_array_equal(pa, pb)
        # but the discriminator itself moved
        assert any(
            not np.array_equal(pa, pb)
            for pa, pb in zip(a.discriminator.parameters(), b.discriminator.parameters())
        )


def moons_round_data(seed=0, n=400):
    spec = ShiftSpec(n_source=n, n_target=n, noise=0.15, seed=seed)
    source, target = gen_shifted_pair(spec)
    return source, target, dann.RoundData(
        source_features=source.features,
        source_labels=source.labels,
        target_features=np.zeros((0, 2)),
        target_labels=np.zeros(0, dtype=int),
        unlabeled_features=target.features,
    )


SHORT = dann.TrainingSchedule([dann.Phase(10, 1e-3)], batch_size=64)


class TestTrainRound:
    def test_target_only_without_labels_rejected(self):
        _, _, rd = moons_round_data()
        with pytest.raises(SchemeDataError):
            dann.train_round(tiny_spec(), dann.TrainScheme.TARGET_ONLY, rd, SHORT,
                             np.random.default_rng(0))

    def test_joint_equals_adversarial_at_lambda_zero(self):
        """Identical seeds, weights off: the predictor trajectory matches
        bitwise between the two schemes."""
        _, _, rd = moons_round_data(n=120)
        spec = tiny_spec(adversarial_weight=0.0, entropy_weight=0.0)
        m1, _ = dann.train_round(spec, dann.TrainScheme.ADVERSARIAL, rd, SHORT,
                                 np.random.default_rng(11))
        m2, _ = dann.train_round(spec, dann.TrainScheme.JOINT, rd, SHORT,
                                 np.random.default_rng(11))
        for a, b in zip(m1.class_predictor.parameters(), m2.class_predictor.parameters()):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(m1.feature_extractor.parameters(), m2.feature_extractor.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_adversarial_without_labeled_target_learns_source(self):
        """Unsupervised adaptation round: source accuracy on held-out source
        data clears 95% on a separable two-Gaussian problem."""
        spec = ShiftSpec(
            generator="gaussian_mixture", n_source=600, n_target=600, noise=0.4,
            rotation_deg=15.0, translation=(0.3, 0.0), seed=3,
        )
        source, target = gen_shifted_pair(spec)
        rd = dann.RoundData(
            source.features[:400], source.labels[:400],
            np.zeros((0, 2)), np.zeros(0, dtype=int), target.features,
        )
        sched = dann.TrainingSchedule([dann.Phase(30, 1e-3)], batch_size=64)
        model, _ = dann.train_round(
            tiny_spec(feature_dims=[16, 16], discriminator_dims=[8]),
            dann.TrainScheme.ADVERSARIAL, rd, sched, np.random.default_rng(4),
        )
        held_out = evaluate(model, source.features[400:], source.labels[400:])
        assert held_out > 0.95

    def test_fine_tune_phase_one_ignores_labeled_target(self):
        """Fine-tuning pre-trains on source only, so halting before phase two
        yields the same model regardless of what the target pool holds."""
        source, target, _ = moons_round_data(n=120)
        results = []
        for tgt_rows in (0, 7):
            rd = dann.RoundData(
                source.features, source.labels,
                target.features[:tgt_rows], target.labels[:tgt_rows],
                target.features[50:],
            )
            sched = dann.TrainingSchedule([dann.Phase(3, 1e-3)], batch_size=32)
            model, _ = dann.train_round(
                tiny_spec(), dann.TrainScheme.FINE_TUNE, rd, sched,
                np.random.default_rng(13),
            )
            results.append(model)
        # compare phase-1-only run (tgt_rows=0 skips phase 2) against a fresh
        # phase-1 replay extracted by re-running with the same stream
        m_no_target = results[0]
        rd = dann.RoundData(
            source.features, source.labels,
            target.features[:0], target.labels[:0], target.features[50:],
        )
        sched = dann.TrainingSchedule([dann.Phase(3, 1e-3)], batch_size=32)
        replay, _ = dann.train_round(
            tiny_spec(), dann.TrainScheme.FINE_TUNE, rd, sched, np.random.default_rng(13)
        )
        for a, b in zip(m_no_target.class_predictor.parameters(), replay.class_predictor.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_scheme_data_errors(self):
        rd = dann.RoundData(
            np.zeros((0, 2)), np.zeros(0, dtype=int),
            np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros((0, 2)),
        )
        with pytest.raises(SchemeDataError):
            dann.train_round(tiny_spec(), dann.TrainScheme.ADVERSARIAL, rd, SHORT,
                             np.random.default_rng(0))


class TestDiscriminatorOptimality:
    def test_recovers_density_ratio_posterior(self):
        """Source N(-1,1) vs target N(+1,1) through an identity feature map:
        the trained discriminator tracks p_s/(p_s+p_t) = sigmoid(-2x)."""
        rng = np.random.default_rng(99)
        n = 3000
        x = np.vstack([rng.normal(-1, 1, n)[:, None], rng.normal(1, 1, n)[:, None]])
        y = np.concatenate([np.ones(n), np.zeros(n)])
        disc = nn.glorot_stack([1, 16, 1], rng)
        state = nn.AdamState.for_parameters(disc.parameters(), 0.01)
        for _ in range(900):
            logit, cache = nn.forward(disc, x)
            _, d = nn.binary_logistic_loss(logit[:, 0], y)
            grads, _ = nn.backward(disc, cache, d[:, None])
            nn.adam_step(disc.parameters(), grads, state)
        grid = np.linspace(-3, 3, 61)[:, None]
        pred = nn.sigmoid(nn.forward(disc, grid)[0][:, 0])
        exact = 1.0 / (1.0 + np.exp(2.0 * grid[:, 0]))
        assert np.abs(pred - exact).max() < 0.05


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        model = dann.build_model(tiny_spec(feature_dims=[5, 4]), np.random.default_rng(8))
        lab, unl = fixed_batches()
        dann.adversarial_step(model, lab, unl)  # non-trivial optimizer state
        path = tmp_path / "ckpt.json"
        dann.save_checkpoint(model, path)
        loaded = dann.load_checkpoint(path)
        for a, b in zip(
            model.feature_extractor.parameters()
            + model.class_predictor.parameters()
            + model.discriminator.parameters(),
            loaded.feature_extractor.parameters()
            + loaded.class_predictor.parameters()
            + loaded.discriminator.parameters(),
        ):
            np.testing.assert_array_equal(a, b)
        for ours, theirs in zip(
            (model.adam_feature, model.adam_predictor, model.adam_discriminator),
            (loaded.adam_feature, loaded.adam_predictor, loaded.adam_discriminator),
        ):
            assert ours.step_count == theirs.step_count
            for m1, m2 in zip(ours.first_moment, theirs.first_moment):
                np.testing.assert_array_equal(m1, m2)
        assert model.rng.bit_generator.state == loaded.rng.bit_generator.state
        # saving the loaded model reproduces the file byte for byte
        path2 = tmp_path / "ckpt2.json"
        dann.save_checkpoint(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_checkpoint_is_versioned_and_self_describing(self, tmp_path):
        model = dann.build_model(tiny_spec(), np.random.default_rng(8))
        path = tmp_path / "ckpt.json"
        dann.save_checkpoint(model, path)
        doc = json.loads(path.read_text())
        assert doc["format"] == "shiftlab-checkpoint"
        assert doc["version"] == 1
        assert doc["num_classes"] == 2
        assert "rng_state" in doc
