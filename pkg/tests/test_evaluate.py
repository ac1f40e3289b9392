import unittest

import numpy as np
from sklearn.metrics import roc_auc_score

from greed.direction_model import DirectionModel, ModelConfig, predict_pairs
from greed.evaluate import (MetricsReport, Recommender, ScoredPair, evaluate_link_prediction, precision_recall,
                            precision_recall_at_k, recommend_all, recommend_topk, roc_auc, score_pairs_two_step,
                            select_recommendation_queries)
from greed.graph import DatasetType, DirectedGraph, LabeledPair
from greed.proximity import EmbeddingTable, proximity_scores
from greed.utils import EmptySample, InvalidParameter, SingleClassError, UnknownNode


def scored(positives, negatives):
    pairs = [ScoredPair(0, i + 1, score, 1) for i, score in enumerate(positives)]
    pairs += [ScoredPair(1, i + 2, score, 0) for i, score in enumerate(negatives)]
    return pairs


def brute_force_auc(pairs):
    positives = [pair.score for pair in pairs if pair.label == 1]
    negatives = [pair.score for pair in pairs if pair.label == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in positives for n in negatives)
    return wins / (len(positives) * len(negatives))


class TestRocAuc(unittest.TestCase):

    def test_examples(self):
        self.assertEqual(roc_auc(scored([0.9, 0.8], [0.2, 0.1])), 1.0)
        self.assertEqual(roc_auc(scored([0.5, 0.5], [0.5, 0.5, 0.5])), 0.5)
        self.assertEqual(roc_auc(scored([0.9, 0.4], [0.6, 0.1])), 0.75)

    def test_matches_brute_force_and_sklearn(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            size = int(rng.integers(2, 201))
            labels = rng.integers(2, size=size)
            labels[:2] = (0, 1)
            # Coarse scores so that ties are common
            scores = np.round(rng.random(size), 1)
            pairs = [ScoredPair(i, i + 1, float(score), int(label)) for i, (score, label) in
                     enumerate(zip(scores, labels))]
            self.assertAlmostEqual(roc_auc(pairs), brute_force_auc(pairs), places=12)
            self.assertAlmostEqual(roc_auc(pairs), roc_auc_score(labels, scores), places=12)

    def test_invariant_under_monotone_transform_and_flip(self):
        rng = np.random.default_rng(1)
        pairs = [ScoredPair(i, i + 1, float(rng.random()), int(label))
                 for i, label in enumerate([0, 1] + rng.integers(2, size=60).tolist())]
        auc = roc_auc(pairs)
        transformed = [ScoredPair(p.source, p.target, 2 * p.score + 1, p.label) for p in pairs]
        flipped = [ScoredPair(p.source, p.target, -p.score, 1 - p.label) for p in pairs]
        self.assertAlmostEqual(roc_auc(transformed), auc, places=12)
        self.assertAlmostEqual(roc_auc(flipped), auc, places=12)

    def test_single_class(self):
        with self.assertRaises(SingleClassError):
            roc_auc(scored([0.3, 0.4], []))

    def test_non_finite_score(self):
        with self.assertRaises(InvalidParameter):
            ScoredPair(0, 1, float('nan'), 1)


class TestTwoStep(unittest.TestCase):

    def setUp(self):
        self.prox = EmbeddingTable([[1.0, 0.0], [0.8, 0.6], [-1.0, 0.0], [0.0, 1.0]])
        self.model = DirectionModel.initialize(4, ModelConfig(input_dim=4, hidden_dims=(8,)))

    def test_far_pairs_score_zero(self):
        pairs = [LabeledPair(0, 2, 1), LabeledPair(0, 1, 0)]
        result = score_pairs_two_step(self.prox, 0.5, self.model, pairs)
        self.assertEqual(result[0].score, 0.0)
        self.assertAlmostEqual(result[1].score, predict_pairs(self.model, [0], [1])[0], places=12)

    def test_threshold_is_strict(self):
        boundary = proximity_scores(self.prox, [0], [1])[0]
        result = score_pairs_two_step(self.prox, boundary, self.model, [LabeledPair(0, 1, 1)])
        self.assertEqual(result[0].score, 0.0)

    def test_symmetric_mode_cannot_tell_reverse_pairs(self):
        pairs = [LabeledPair(0, 1, 1), LabeledPair(1, 0, 0), LabeledPair(1, 3, 1), LabeledPair(3, 1, 0)]
        report = evaluate_link_prediction(self.prox, None, {DatasetType.TYPE2: pairs}, symmetric=True)
        self.assertEqual(report.auc['type2'], 0.5)
        self.assertEqual(report.counts[('positives', 'type2')], 2)

    def test_two_step_needs_threshold(self):
        with self.assertRaises(InvalidParameter):
            evaluate_link_prediction(self.prox, self.model, {DatasetType.TYPE2: []})


class TestMetricsReport(unittest.TestCase):

    def test_csv_and_table(self):
        report = MetricsReport(auc={'type2': 0.875}, precision_at={10: 0.05}, recall_at={10: 0.25},
                               counts={('queries', 'recommendation'): 4})
        self.assertEqual(report.to_csv(), [
            'metric,dataset_type,k,value',
            'auc,type2,,0.875000',
            'precision,recommendation,10,0.050000',
            'recall,recommendation,10,0.250000',
            'queries,recommendation,,4',
        ])
        table = report.to_table()
        self.assertEqual(len(table), 5)
        self.assertTrue(table[0].startswith('metric'))

    def test_merge(self):
        report = MetricsReport(auc={'type1': 0.9}).merge(MetricsReport(auc={'type2': 0.8}))
        self.assertEqual(sorted(report.auc), ['type1', 'type2'])


class TestRecommendation(unittest.TestCase):

    def setUp(self):
        angles = np.linspace(0, np.pi, 8)
        self.prox = EmbeddingTable(np.stack([np.cos(angles), np.sin(angles)], axis=1))
        self.model = DirectionModel.initialize(8, ModelConfig(input_dim=4, hidden_dims=(8,), rng_seed=2))
        self.train = DirectedGraph(8, [(0, 1), (2, 0)])

    def test_excludes_query_and_known_neighbors(self):
        recommendations = recommend_topk(self.prox, self.model, 0, 5, train=self.train)
        self.assertEqual(len(recommendations), 5)
        self.assertNotIn(0, recommendations)
        self.assertNotIn(1, recommendations)
        self.assertEqual(len(set(recommendations)), 5)

    def test_direction_filter_then_padding(self):
        recommender = Recommender(self.prox, self.model)
        recommendations = recommender.recommend(3, 7)
        self.assertEqual(sorted(recommendations), [0, 1, 2, 4, 5, 6, 7])

        y_hat = predict_pairs(self.model, np.full(7, 3), np.array(recommendations))
        passed = y_hat > self.model.config.threshold
        # Candidates the model accepts come first
        self.assertTrue(np.all(passed[:passed.sum()]))

    def test_candidates_restrict_the_pool(self):
        recommendations = recommend_topk(self.prox, self.model, 4, 2, candidates=[1, 4, 6])
        self.assertEqual(sorted(recommendations), [1, 6])

    def test_k_beyond_node_count_returns_every_eligible_node(self):
        recommendations = recommend_topk(self.prox, self.model, 0, 50, train=self.train)
        self.assertEqual(sorted(recommendations), [2, 3, 4, 5, 6, 7])

    def test_unknown_query(self):
        with self.assertRaises(UnknownNode):
            recommend_topk(self.prox, self.model, 8, 3)
        with self.assertRaises(InvalidParameter):
            recommend_topk(self.prox, self.model, 0, 0)

    def test_threads_do_not_change_results(self):
        recommender = Recommender(self.prox, self.model, train=self.train)
        self.assertEqual(recommend_all(recommender, list(range(8)), 3),
                         recommend_all(recommender, list(range(8)), 3, threads=3))


class TestPrecisionRecall(unittest.TestCase):

    def test_identities_on_random_fixtures(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            truth = set(rng.choice(50, size=int(rng.integers(1, 10)), replace=False).tolist())
            predicted = rng.choice(50, size=int(rng.integers(1, 20)), replace=False).tolist()
            precision, recall, hits = precision_recall(predicted, truth)
            self.assertEqual(hits, len(set(predicted) & truth))
            self.assertAlmostEqual(precision * len(predicted), hits)
            self.assertAlmostEqual(recall * len(truth), hits)

    def test_macro_average(self):
        test_edges = [LabeledPair(0, 1, 1), LabeledPair(0, 2, 1), LabeledPair(3, 4, 1), LabeledPair(5, 6, 0)]
        recommendations = {0: [1, 7, 2, 8], 3: [9, 8, 7, 6], 5: [6, 1, 2, 3]}
        report = precision_recall_at_k(recommendations, test_edges, [2, 4])
        self.assertEqual(report.counts[('queries', 'recommendation')], 2)
        self.assertAlmostEqual(report.precision_at[2], (1 / 2 + 0) / 2)
        self.assertAlmostEqual(report.recall_at[2], (1 / 2 + 0) / 2)
        self.assertAlmostEqual(report.precision_at[4], (2 / 4 + 0) / 2)
        self.assertAlmostEqual(report.recall_at[4], (1 + 0) / 2)

    def test_single_held_out_target(self):
        recommendations = {0: [5, 6, 7, 8, 9, 10, 11, 12, 1, 13]}
        report = precision_recall_at_k(recommendations, [LabeledPair(0, 1, 1)], [10])
        self.assertAlmostEqual(report.precision_at[10], 0.1)
        self.assertEqual(report.recall_at[10], 1.0)

        report = precision_recall_at_k({0: [5, 6]}, [LabeledPair(0, 1, 1)], [2])
        self.assertEqual((report.precision_at[2], report.recall_at[2]), (0.0, 0.0))

    def test_nothing_to_evaluate(self):
        with self.assertRaises(EmptySample):
            precision_recall_at_k({0: [1]}, [LabeledPair(2, 3, 1)], [1])

    def test_query_selection(self):
        test_edges = [LabeledPair(node, node + 1, 1) for node in range(20)] + [LabeledPair(0, 5, 1)]
        queries = select_recommendation_queries(test_edges, 0.25, rng_seed=1)
        self.assertEqual(len(queries), 5)
        self.assertEqual(queries, sorted(set(queries)))
        self.assertEqual(queries, select_recommendation_queries(test_edges, 0.25, rng_seed=1))
        with self.assertRaises(EmptySample):
            select_recommendation_queries([LabeledPair(0, 1, 0)], 0.5, rng_seed=1)


if __name__ == '__main__':
    unittest.main()
