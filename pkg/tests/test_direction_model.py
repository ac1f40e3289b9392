import json
import os
import unittest

import numpy as np

from greed.direction_model import (DirectionModel, ModelConfig, backward, contrastive_loss, direction_embeddings,
                                   forward, gradient_check, load_checkpoint, loss_grad, predict_direction,
                                   predict_from_embeddings, predict_pairs, run_gradient_suite, save_checkpoint,
                                   train)
from greed.graph import LabeledPair
from greed.utils import CheckpointError, InvalidParameter, NonFiniteLoss, UnknownNode
from tests.base import ScratchDirTestCase


def tiny_model(node_count=6, embed_dim=3, seed=0):
    config = ModelConfig(input_dim=5, hidden_dims=(7,), embed_dim=embed_dim, rng_seed=seed)
    return DirectionModel.initialize(node_count, config)


class TestForward(unittest.TestCase):

    def test_self_pair_is_neutral(self):
        model = tiny_model()
        y_hat, cache = forward(model, 2, 2)
        self.assertEqual(y_hat, 0.5)
        np.testing.assert_array_equal(cache.v_r, np.zeros((1, 3)))

    def test_reverse_pair_complements(self):
        # Independent parameter states, each scored on a batch of random pairs
        rng = np.random.default_rng(0)
        checked = 0
        for state in range(100):
            model = tiny_model(node_count=20, embed_dim=3 + state % 3, seed=state)
            sources = rng.integers(20, size=100)
            targets = rng.integers(20, size=100)
            forward_scores, cache = model.forward(sources, targets)
            reverse_scores, _ = model.forward(targets, sources)

            regular = np.linalg.norm(cache.v_r, axis=1) >= 1e-12
            np.testing.assert_allclose(forward_scores[regular] + reverse_scores[regular], 1.0, rtol=0, atol=1e-12)
            np.testing.assert_array_equal(forward_scores[~regular], 0.5)
            np.testing.assert_array_equal(reverse_scores[~regular], 0.5)
            checked += len(sources)
        self.assertEqual(checked, 10000)

    def test_predictions_in_unit_interval(self):
        model = DirectionModel.initialize(30, ModelConfig(input_dim=8, hidden_dims=(16, 16), embed_dim=4))
        rng = np.random.default_rng(1)
        y_hat = predict_pairs(model, rng.integers(30, size=500), rng.integers(30, size=500))
        self.assertTrue(np.all((y_hat >= 0) & (y_hat <= 1)))

    def test_unknown_node(self):
        with self.assertRaises(UnknownNode):
            forward(tiny_model(), 0, 6)

    def test_precomputed_embeddings_agree(self):
        model = tiny_model(node_count=10, embed_dim=5)
        directions = direction_embeddings(model)
        sources = np.arange(10)
        targets = (sources + 3) % 10
        np.testing.assert_allclose(
            predict_from_embeddings(model, directions.lookup(sources), directions.lookup(targets)),
            predict_pairs(model, sources, targets), atol=1e-12)


class TestLoss(unittest.TestCase):

    def test_contrastive_loss(self):
        self.assertEqual(contrastive_loss(1.0, 1, 0.25), 0.0)
        self.assertEqual(contrastive_loss(0.25, 0, 0.25), 0.0)
        self.assertAlmostEqual(contrastive_loss(0.5, 0, 0.25), 0.0625)

    def test_loss_grad(self):
        self.assertEqual(loss_grad(1.0, 1, 0.25), 0.0)
        self.assertEqual(loss_grad(0.2, 0, 0.25), 0.0)
        self.assertEqual(loss_grad(0.5, 1, 0.25), -1.0)
        self.assertEqual(loss_grad(0.75, 0, 0.25), 1.0)

    def test_vectorized(self):
        losses = contrastive_loss(np.array([1.0, 0.5]), np.array([1, 0]), 0.25)
        np.testing.assert_allclose(losses, [0.0, 0.0625])


class TestBackward(unittest.TestCase):

    def test_zero_upstream_gradient(self):
        model = tiny_model()
        _, cache = forward(model, 0, 1)
        gradients = backward(model, cache, 0.0)
        for grad in gradients.weights + [gradients.input_grads]:
            np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_self_pair_has_zero_gradients(self):
        model = tiny_model(embed_dim=4)
        _, cache = forward(model, 3, 3)
        gradients = backward(model, cache, -1.0)
        for grad in gradients.weights + [gradients.input_grads]:
            np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_finite_differences(self):
        for embed_dim in (3, 4):
            model = tiny_model(embed_dim=embed_dim, seed=7)
            pairs = [LabeledPair(0, 1, 1), LabeledPair(2, 5, 0), LabeledPair(4, 3, 1)]
            self.assertLess(gradient_check(model, pairs), 1e-5)

    def test_summed_gradients_ignore_pair_order(self):
        model = tiny_model(node_count=8, embed_dim=4, seed=5)
        rng = np.random.default_rng(6)
        sources = rng.integers(8, size=40)
        targets = (sources + rng.integers(1, 8, size=40)) % 8
        labels = rng.integers(2, size=40)

        def summed(order, batches):
            weights = [np.zeros_like(weight) for weight in model.weights]
            inputs = np.zeros_like(model.input_table)
            for batch in np.array_split(order, batches):
                y_hat, cache = model.forward(sources[batch], targets[batch])
                gradients = model.backward(cache, loss_grad(y_hat, labels[batch], model.config.margin))
                weights = [total + grad for total, grad in zip(weights, gradients.weights)]
                inputs += gradients.dense_input(model.node_count)
            return [inputs] + weights

        expected = summed(np.arange(40), 1)
        for seed, batches in ((0, 1), (1, 3), (2, 7)):
            order = np.random.default_rng(seed).permutation(40)
            for total, other in zip(expected, summed(order, batches)):
                np.testing.assert_allclose(other, total, rtol=0, atol=1e-10)

    def test_branch_gradients_match_untied_differences(self):
        step = 1e-6
        for embed_dim in (3, 4):
            model = tiny_model(embed_dim=embed_dim, seed=8)
            sources, targets, labels = np.array([0, 2, 4]), np.array([1, 5, 3]), np.array([1, 0, 1])
            y_hat, cache = model.forward(sources, targets)
            gradients = model.backward(cache, loss_grad(y_hat, labels, model.config.margin))

            def loss(v_s, v_t):
                return np.sum(contrastive_loss(predict_from_embeddings(model, v_s, v_t), labels, model.config.margin))

            for layer, weight in enumerate(model.weights):
                numeric = {'source': np.zeros_like(weight), 'target': np.zeros_like(weight)}
                for index in np.ndindex(weight.shape):
                    original = weight[index]
                    embedded = {}
                    for sign in (1, -1):
                        weight[index] = original + sign * step
                        embedded[sign] = (model.embed(sources), model.embed(targets))
                    weight[index] = original
                    v_s, v_t = model.embed(sources), model.embed(targets)
                    numeric['source'][index] = (loss(embedded[1][0], v_t) - loss(embedded[-1][0], v_t)) / (2 * step)
                    numeric['target'][index] = (loss(v_s, embedded[1][1]) - loss(v_s, embedded[-1][1])) / (2 * step)

                for branch in ('source', 'target'):
                    np.testing.assert_allclose(gradients.branch_weights[branch][layer], numeric[branch],
                                               rtol=1e-5, atol=1e-8)
                np.testing.assert_allclose(gradients.branch_weights['source'][layer] +
                                           gradients.branch_weights['target'][layer], gradients.weights[layer],
                                           rtol=0, atol=1e-14)

    def test_gradient_suite(self):
        self.assertLess(run_gradient_suite(draws=100, rng_seed=0), 1e-5)

    def test_stale_cache(self):
        model = tiny_model()
        _, cache = forward(model, 0, 1)
        model.weights[0] = np.zeros((5, 8))
        with self.assertRaises(InvalidParameter):
            backward(model, cache, 1.0)


class TestTrain(unittest.TestCase):

    def test_minimal_convergence(self):
        model = DirectionModel.initialize(2, ModelConfig(epochs=500))
        model, stats = train(model, [LabeledPair(0, 1, 1), LabeledPair(1, 0, 0)])
        self.assertEqual(len(stats), 500)
        self.assertGreater(forward(model, 0, 1)[0], 0.9)
        self.assertLess(forward(model, 1, 0)[0], 0.1)
        self.assertLess(stats[-1].mean_loss, stats[0].mean_loss)

    def test_reciprocal_pair_stays_near_half(self):
        model = DirectionModel.initialize(2, ModelConfig(input_dim=8, hidden_dims=(16,), epochs=300))
        train(model, [LabeledPair(0, 1, 1), LabeledPair(1, 0, 1)])
        for source, target in ((0, 1), (1, 0)):
            y_hat = forward(model, source, target)[0]
            self.assertGreater(y_hat, 0.25)
            self.assertLess(y_hat, 0.75)

    def test_resume_continues_epochs(self):
        config = ModelConfig(input_dim=5, hidden_dims=(7,), epochs=3, batch_size=2)
        pairs = [LabeledPair(0, 1, 1), LabeledPair(1, 0, 0), LabeledPair(1, 2, 1), LabeledPair(2, 1, 0)]
        model = DirectionModel.initialize(3, config)
        train(model, pairs)
        _, stats = train(model, pairs)
        self.assertEqual([entry.epoch for entry in stats], [4, 5, 6])
        self.assertEqual(len(model.history), 6)
        self.assertEqual(model.history[-1].pairs_seen, 24)

    def test_training_is_deterministic(self):
        pairs = [LabeledPair(0, 1, 1), LabeledPair(1, 0, 0), LabeledPair(2, 3, 1), LabeledPair(3, 2, 0)]
        config = ModelConfig(input_dim=5, hidden_dims=(7,), epochs=4, batch_size=3, rng_seed=12)
        first, _ = train(DirectionModel.initialize(4, config), pairs)
        second, _ = train(DirectionModel.initialize(4, config), pairs)
        for a, b in zip(first.parameters(), second.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_non_finite_loss(self):
        model = tiny_model()
        model.input_table[0, 0] = np.nan
        with self.assertRaises(NonFiniteLoss) as cm:
            train(model, [LabeledPair(0, 1, 1)])
        self.assertEqual(cm.exception.epoch, 1)
        self.assertEqual(cm.exception.pair, (0, 1, 1))

    def test_invalid_config(self):
        with self.assertRaises(InvalidParameter):
            ModelConfig(embed_dim=2)
        with self.assertRaises(InvalidParameter):
            ModelConfig(margin=0.5)
        with self.assertRaises(InvalidParameter):
            ModelConfig(threshold=1.0)


class TestPredictDirection(unittest.TestCase):

    def test_strict_threshold(self):
        model = tiny_model()
        y_hat = forward(model, 0, 1)[0]
        self.assertEqual(predict_direction(model, 0, 1, threshold=y_hat), 0)
        self.assertEqual(predict_direction(model, 0, 1, threshold=y_hat - 1e-9), 1)

    def test_self_pair_is_not_an_edge(self):
        self.assertEqual(predict_direction(tiny_model(), 4, 4, threshold=0.5), 0)


class TestCheckpoint(ScratchDirTestCase):

    def setUp(self):
        ScratchDirTestCase.setUp(self)
        self.checkpoint = self.path('model', 'direction.ckpt')

    def test_round_trip(self):
        model = tiny_model(node_count=8, embed_dim=5, seed=3)
        train(model, [LabeledPair(0, 1, 1), LabeledPair(1, 0, 0)], ModelConfig(input_dim=5, hidden_dims=(7,),
                                                                               embed_dim=5, epochs=2))
        save_checkpoint(model, self.checkpoint, id_map_path='id_map.txt')
        loaded = load_checkpoint(self.checkpoint)

        for a, b in zip(model.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(loaded.frame.vectors, model.frame.vectors)
        self.assertEqual(loaded.config, model.config)
        self.assertEqual(loaded.history, model.history)
        sources, targets = np.arange(8), np.arange(8)[::-1]
        np.testing.assert_array_equal(predict_pairs(loaded, sources, targets), predict_pairs(model, sources, targets))

    def test_wrong_version(self):
        save_checkpoint(tiny_model(), self.checkpoint)
        with open(self.checkpoint) as f:
            document = json.load(f)
        document['format_version'] = 99
        with open(self.checkpoint, 'w') as f:
            json.dump(document, f)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.checkpoint)

    def test_not_json(self):
        os.makedirs(os.path.dirname(self.checkpoint))
        with open(self.checkpoint, 'w') as f:
            f.write('weights!')
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.checkpoint)


if __name__ == '__main__':
    unittest.main()
