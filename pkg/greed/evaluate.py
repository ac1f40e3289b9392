import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from greed import app
from greed.direction_model import direction_embeddings, predict_from_embeddings, predict_pairs
from greed.graph import DatasetType
from greed.proximity import proximity_scores
from greed.utils import EmptySample, InvalidParameter, SingleClassError, UnknownNode


@dataclass(frozen=True)
class ScoredPair:
    source: int
    target: int
    score: float
    label: int

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidParameter('Score for ({}, {}) is not finite'.format(self.source, self.target))


@dataclass
class MetricsReport:
    auc: dict = field(default_factory=dict)
    precision_at: dict = field(default_factory=dict)
    recall_at: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def merge(self, other):
        self.auc.update(other.auc)
        self.precision_at.update(other.precision_at)
        self.recall_at.update(other.recall_at)
        self.counts.update(other.counts)
        return self

    def rows(self):
        """(metric, dataset_type, k, value) tuples; k is None where it does not apply."""
        for dataset_type, value in sorted(self.auc.items()):
            yield 'auc', dataset_type, None, value
        for k, value in sorted(self.precision_at.items()):
            yield 'precision', 'recommendation', k, value
        for k, value in sorted(self.recall_at.items()):
            yield 'recall', 'recommendation', k, value
        for (metric, dataset_type), value in sorted(self.counts.items()):
            yield metric, dataset_type, None, value

    def to_csv(self):
        lines = ['metric,dataset_type,k,value']
        for metric, dataset_type, k, value in self.rows():
            lines.append('{},{},{},{}'.format(metric, dataset_type, '' if k is None else k, _format_number(value)))
        return lines

    def to_table(self):
        header = ('metric', 'dataset_type', 'k', 'value')
        body = [(metric, dataset_type, '' if k is None else str(k), _format_number(value))
                for metric, dataset_type, k, value in self.rows()]
        widths = [max(len(row[column]) for row in [header] + body) for column in range(len(header))]
        return ['  '.join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in [header] + body]


def _format_number(value):
    return str(value) if isinstance(value, (int, np.integer)) else '{:.6f}'.format(value)


def roc_auc(scored):
    """Mann-Whitney estimate of P(positive outscores negative), ties counted one half."""
    scores = np.array([pair.score for pair in scored], dtype=np.float64)
    labels = np.array([pair.label for pair in scored])
    positives = int(np.sum(labels == 1))
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        raise SingleClassError('ROC-AUC needs both positive and negative pairs')

    ranks = rankdata(scores, method='average')
    u = ranks[labels == 1].sum() - positives * (positives + 1) / 2.0
    return float(u / (positives * negatives))


def _scored(pairs, scores):
    return [ScoredPair(pair.source, pair.target, float(score), pair.label) for pair, score in zip(pairs, scores)]


def score_pairs_proximity(prox, pairs):
    scores = proximity_scores(prox, [pair.source for pair in pairs], [pair.target for pair in pairs])
    return _scored(pairs, scores)


def score_pairs_two_step(prox, threshold, model, pairs):
    """Pairs within proximity (score > threshold) get the direction prediction, the rest score 0."""
    sources = np.array([pair.source for pair in pairs], dtype=np.int64)
    targets = np.array([pair.target for pair in pairs], dtype=np.int64)
    proximity = proximity_scores(prox, sources, targets)
    direction = predict_pairs(model, sources, targets)
    gated = proximity <= threshold
    app.logger.info('Proximity gate holds back %d of %d pairs', int(gated.sum()), len(pairs))
    return _scored(pairs, np.where(gated, 0.0, direction))


def evaluate_link_prediction(prox, model, test_sets, threshold=None, symmetric=False):
    """One ROC-AUC per dataset type, from two-step scores or, with `symmetric`, proximity alone."""
    if not symmetric and (model is None or threshold is None):
        raise InvalidParameter('Two-step scoring needs a direction model and a proximity threshold')

    report = MetricsReport()
    for dataset_type, pairs in test_sets.items():
        name = DatasetType(dataset_type).value
        if symmetric:
            scored = score_pairs_proximity(prox, pairs)
        else:
            scored = score_pairs_two_step(prox, threshold, model, pairs)
        positives = sum(pair.label for pair in pairs)
        try:
            report.auc[name] = roc_auc(scored)
        except SingleClassError:
            raise SingleClassError('Test set {} has a single class'.format(name))
        report.counts[('positives', name)] = positives
        report.counts[('negatives', name)] = len(pairs) - positives
        app.logger.info('Link prediction %s: AUC %.4f (%d pairs)', name, report.auc[name], len(pairs))
    return report


class Recommender:
    """Top-k out-neighbor recommendation: rank by proximity, keep predicted out-edges."""

    def __init__(self, prox, model, train=None, threshold=None):
        self.prox = prox
        self.model = model
        self.train = train
        self.threshold = threshold
        self.directions = direction_embeddings(model)

    def recommend(self, query, k, candidates=None):
        if k < 1:
            raise InvalidParameter('k must be at least 1, got {}'.format(k))
        if not 0 <= query < self.model.node_count or query not in self.prox:
            raise UnknownNode(query)

        candidates = np.arange(self.model.node_count) if candidates is None else np.asarray(candidates)
        excluded = np.zeros(self.model.node_count, dtype=bool)
        excluded[query] = True
        if self.train is not None:
            excluded[self.train.out_adj[query]] = True
        candidates = candidates[~excluded[candidates]]

        queries = np.full(len(candidates), query)
        proximity = proximity_scores(self.prox, queries, candidates)
        order = np.lexsort((candidates, -proximity))
        ranked = candidates[order]
        proximity = proximity[order]

        v_query = self.directions.lookup([query])
        direction = predict_from_embeddings(self.model, v_query, self.directions.lookup(ranked))
        passed = direction > self.model.config.threshold
        if self.threshold is not None:
            passed &= proximity > self.threshold

        chosen = ranked[passed][:k]
        if len(chosen) < k:
            # Pad with the closest candidates the direction filter rejected
            chosen = np.concatenate([chosen, ranked[~passed][:k - len(chosen)]])
        return [int(node) for node in chosen]


def recommend_topk(prox, model, query, k, candidates=None, train=None, threshold=None):
    return Recommender(prox, model, train=train, threshold=threshold).recommend(query, k, candidates)


def recommend_all(recommender, queries, k, threads=1):
    def recommend(query):
        return recommender.recommend(query, k)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return dict(zip(queries, pool.map(recommend, queries)))
    return {query: recommend(query) for query in queries}


def _held_out_targets(test_edges):
    truth = defaultdict(set)
    for pair in test_edges:
        if pair.label == 1:
            truth[pair.source].add(pair.target)
    return truth


def select_recommendation_queries(test_edges, fraction, rng_seed):
    """Sample a fraction of the nodes that have at least one held-out out-edge."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidParameter('Sample fraction must lie in (0, 1], got {}'.format(fraction))
    eligible = sorted(_held_out_targets(test_edges))
    if not eligible:
        raise EmptySample('No node has a held-out out-edge')
    count = max(1, int(math.floor(fraction * len(eligible) + 1e-9)))
    rng = np.random.default_rng(rng_seed)
    return sorted(int(node) for node in rng.choice(eligible, size=count, replace=False))


def precision_recall(predicted, truth):
    """Precision, recall and hit count of one recommendation list."""
    hits = len(set(predicted) & truth)
    precision = hits / len(predicted) if predicted else 0.0
    return precision, hits / len(truth), hits


def precision_recall_at_k(recommendations, test_edges, ks, sample_fraction=1.0, rng_seed=0):
    """Macro-averaged P@k and R@k over the queried nodes that have held-out out-edges."""
    truth = _held_out_targets(test_edges)
    queries = sorted(node for node in recommendations if truth.get(node))
    if queries and sample_fraction < 1.0:
        count = max(1, int(math.floor(sample_fraction * len(queries) + 1e-9)))
        rng = np.random.default_rng(rng_seed)
        queries = sorted(int(node) for node in rng.choice(queries, size=count, replace=False))
    if not queries:
        raise EmptySample('No queried node has a held-out out-edge')

    report = MetricsReport()
    for k in sorted(ks):
        if k < 1:
            raise InvalidParameter('k must be at least 1, got {}'.format(k))
        totals = np.zeros(2)
        for node in queries:
            precision, recall, _ = precision_recall(recommendations[node][:k], truth[node])
            totals += (precision, recall)
        report.precision_at[k] = float(totals[0] / len(queries))
        report.recall_at[k] = float(totals[1] / len(queries))
        app.logger.info('Recommendation k=%d: P %.4f R %.4f', k, report.precision_at[k], report.recall_at[k])
    report.counts[('queries', 'recommendation')] = len(queries)
    return report
