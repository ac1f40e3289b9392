from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from greed import app
from greed.crossprod import EPS
from greed.utils import EmbeddingFormatError, InvalidParameter, SingleClassError, UnknownNode, write_lines


@dataclass(frozen=True)
class SkipGramConfig:
    dim: int = 128
    window: int = 10
    negatives_per_positive: int = 5
    epochs: int = 1
    learning_rate: float = 0.025
    rng_seed: int = 0
    batch_size: int = 1024

    def __post_init__(self):
        for name in ('dim', 'window', 'negatives_per_positive', 'epochs', 'batch_size'):
            if getattr(self, name) < 1:
                raise InvalidParameter('{} must be positive, got {}'.format(name, getattr(self, name)))
        if not self.learning_rate > 0:
            raise InvalidParameter('learning_rate must be positive, got {}'.format(self.learning_rate))


class EmbeddingTable:
    """Node id -> dense vector, stored row-wise."""

    def __init__(self, vectors, node_ids=None):
        vectors = np.array(vectors, dtype=np.float64, ndmin=2)
        if node_ids is None:
            node_ids = np.arange(len(vectors))
        node_ids = np.asarray(node_ids, dtype=np.int64)
        if len(node_ids) != len(vectors):
            raise InvalidParameter('Got {} node ids for {} vectors'.format(len(node_ids), len(vectors)))
        if not np.all(np.isfinite(vectors)):
            raise InvalidParameter('Embedding table has non-finite components')

        self.vectors = vectors
        self.node_ids = node_ids
        self.dim = vectors.shape[1]
        self._index = {node: row for row, node in enumerate(node_ids.tolist())}
        if len(self._index) != len(node_ids):
            raise InvalidParameter('Embedding table has duplicate node ids')
        self._dense = bool(np.array_equal(node_ids, np.arange(len(node_ids))))

    def __len__(self):
        return len(self.node_ids)

    def __contains__(self, node):
        return node in self._index

    def rows(self, nodes):
        nodes = np.asarray(nodes, dtype=np.int64)
        if self._dense:
            unknown = (nodes < 0) | (nodes >= len(self.node_ids))
            if np.any(unknown):
                raise UnknownNode(int(nodes[unknown].flat[0]))
            return nodes
        try:
            return np.array([self._index[node] for node in nodes.ravel().tolist()], dtype=np.int64).reshape(nodes.shape)
        except KeyError as e:
            raise UnknownNode(e.args[0])

    def lookup(self, nodes):
        return self.vectors[self.rows(nodes)]

    def covers(self, node_count):
        return all(node in self._index for node in range(node_count))


def save_embeddings(table, path):
    lines = ['{} {}'.format(len(table), table.dim)]
    for node, vector in zip(table.node_ids.tolist(), table.vectors):
        lines.append('{} {}'.format(node, ' '.join('%.17g' % value for value in vector)))
    write_lines(path, lines)


def load_embeddings(path):
    """Read "<node_count> <dim>" followed by one "<node_id> <f1> .. <f_dim>" line per node."""
    try:
        f = open(path)
    except (IOError, OSError) as e:
        raise EmbeddingFormatError('Could not read embeddings ({})'.format(e.strerror), path)

    node_ids = []
    vectors = []
    with f:
        header = f.readline().split()
        try:
            node_count, dim = int(header[0]), int(header[1])
        except (IndexError, ValueError):
            raise EmbeddingFormatError('Expected header "<node_count> <dim>"', path, 1)

        for line_number, line in enumerate(f, 2):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != dim + 1:
                raise EmbeddingFormatError('Expected {} values, got {}'.format(dim, len(tokens) - 1), path, line_number)
            try:
                node_ids.append(int(tokens[0]))
                vectors.append([float(token) for token in tokens[1:]])
            except ValueError:
                raise EmbeddingFormatError('Malformed number', path, line_number)

    if len(node_ids) != node_count:
        raise EmbeddingFormatError('Header announces {} nodes, found {}'.format(node_count, len(node_ids)), path)
    try:
        return EmbeddingTable(np.array(vectors).reshape(-1, dim), node_ids)
    except InvalidParameter as e:
        raise EmbeddingFormatError(str(e), path)


def _context_pairs(walks, window):
    tokens = []
    walk_ids = []
    for walk_id, walk in enumerate(walks):
        tokens.extend(walk)
        walk_ids.extend([walk_id] * len(walk))
    tokens = np.asarray(tokens, dtype=np.int64)
    walk_ids = np.asarray(walk_ids, dtype=np.int64)

    centers = []
    contexts = []
    for offset in range(1, window + 1):
        same_walk = walk_ids[:-offset] == walk_ids[offset:]
        left = tokens[:-offset][same_walk]
        right = tokens[offset:][same_walk]
        centers.extend([left, right])
        contexts.extend([right, left])
    if not centers:
        return tokens, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return tokens, np.concatenate(centers), np.concatenate(contexts)


class SkipGram:
    """Skip-gram with negative sampling, trained by seeded mini-batch SGD.

    Negatives follow the unigram^0.75 distribution of node frequencies in the
    walks; the learning rate decays linearly to 1e-4 of its start value.
    """

    def __init__(self, node_count, cfg):
        self.node_count = node_count
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.input_vectors = (self.rng.random((node_count, cfg.dim)) - 0.5) / cfg.dim
        self.output_vectors = np.zeros((node_count, cfg.dim))
        self.centers = None
        self.contexts = None
        self.noise_cdf = None

    def build_corpus(self, walks):
        tokens, self.centers, self.contexts = _context_pairs(walks, self.cfg.window)
        if len(tokens) and tokens.max() >= self.node_count:
            raise UnknownNode(int(tokens.max()))

        counts = np.bincount(tokens, minlength=self.node_count).astype(np.float64)
        missing = int(np.sum(counts == 0))
        if missing:
            app.logger.warning('%d node(s) never appear in the walks and keep their random vectors', missing)
        noise = counts ** 0.75
        self.noise_cdf = np.cumsum(noise / noise.sum())
        app.logger.info('Skip-gram corpus: %d walk tokens, %d context pairs', len(tokens), len(self.centers))

    def _sample_negatives(self, rng, size):
        negatives = np.searchsorted(self.noise_cdf, rng.random(size), side='right')
        return np.minimum(negatives, self.node_count - 1)

    def _pair_losses(self, centers, contexts, negatives):
        u = self.input_vectors[centers]
        positive = np.sum(u * self.output_vectors[contexts], axis=1)
        negative = np.einsum('bd,bkd->bk', u, self.output_vectors[negatives])
        return np.logaddexp(0.0, -positive) + np.logaddexp(0.0, negative).sum(axis=1), positive, negative

    def corpus_loss(self, rng_seed=0):
        """Mean negative-sampling loss over every context pair, with negatives fixed by `rng_seed`."""
        rng = np.random.default_rng(rng_seed)
        negatives = self._sample_negatives(rng, (len(self.centers), self.cfg.negatives_per_positive))
        losses, _, _ = self._pair_losses(self.centers, self.contexts, negatives)
        return float(losses.mean())

    def train(self):
        cfg = self.cfg
        pair_count = len(self.centers)
        if pair_count == 0:
            app.logger.warning('Walks produce no context pairs; embeddings stay at their initial values')
            return []

        batches_per_epoch = -(-pair_count // cfg.batch_size)
        total_steps = cfg.epochs * batches_per_epoch
        step = 0
        epoch_losses = []
        for epoch in range(1, cfg.epochs + 1):
            order = self.rng.permutation(pair_count)
            loss_sum = 0.0
            for start in range(0, pair_count, cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                centers = self.centers[batch]
                contexts = self.contexts[batch]
                negatives = self._sample_negatives(self.rng, (len(batch), cfg.negatives_per_positive))
                learning_rate = cfg.learning_rate * max(1e-4, 1.0 - step / total_steps)
                step += 1

                losses, positive, negative = self._pair_losses(centers, contexts, negatives)
                loss_sum += losses.sum()

                u = self.input_vectors[centers]
                v_positive = self.output_vectors[contexts]
                v_negative = self.output_vectors[negatives]
                grad_positive = expit(positive) - 1.0
                grad_negative = expit(negative)

                grad_u = grad_positive[:, None] * v_positive + np.einsum('bk,bkd->bd', grad_negative, v_negative)
                np.add.at(self.output_vectors, contexts, -learning_rate * grad_positive[:, None] * u)
                np.add.at(self.output_vectors, negatives.ravel(),
                          -learning_rate * (grad_negative[:, :, None] * u[:, None, :]).reshape(-1, cfg.dim))
                np.add.at(self.input_vectors, centers, -learning_rate * grad_u)

            epoch_losses.append(loss_sum / pair_count)
            app.logger.info('Skip-gram epoch %d/%d: mean loss %.6f', epoch, cfg.epochs, epoch_losses[-1])
        return epoch_losses

    def table(self):
        return EmbeddingTable(self.input_vectors.copy())


def train_skipgram(walks, cfg, node_count=None):
    """Learn proximity embeddings from a walk stream; one row per node id."""
    walks = [list(walk) for walk in walks]
    if node_count is None:
        node_count = 1 + max((max(walk) for walk in walks if walk), default=-1)
    if node_count == 0:
        raise InvalidParameter('No walks to train on')

    model = SkipGram(node_count, cfg)
    model.build_corpus(walks)
    model.train()
    return model.table()


def proximity_scores(table, sources, targets, eps=EPS):
    """Scaled cosine of proximity embeddings; symmetric in its arguments."""
    a = table.lookup(sources)
    b = table.lookup(targets)
    norms = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    degenerate = norms < eps
    cosine = np.sum(a * b, axis=-1) / np.where(degenerate, 1.0, norms)
    return np.clip(np.where(degenerate, 0.5, (1.0 + cosine) / 2.0), 0.0, 1.0)


def youden_threshold(scores, labels):
    """Score cut maximizing TPR - FPR, where pairs pass when score > cut.

    Candidates are the observed scores; ties go to the lowest cut.
    Returns (threshold, J).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    positives = np.sort(scores[labels == 1])
    negatives = np.sort(scores[labels == 0])
    if len(positives) == 0 or len(negatives) == 0:
        raise SingleClassError('Threshold selection needs both positive and negative pairs')

    candidates = np.unique(scores)
    tpr = (len(positives) - np.searchsorted(positives, candidates, side='right')) / len(positives)
    fpr = (len(negatives) - np.searchsorted(negatives, candidates, side='right')) / len(negatives)
    j = tpr - fpr
    best = int(np.argmax(j))
    if j[best] <= 0:
        app.logger.warning('Scores do not separate the classes (J = %.4f)', j[best])
    return float(candidates[best]), float(j[best])


def pick_proximity_threshold(table, labeled):
    sources = [pair.source for pair in labeled]
    targets = [pair.target for pair in labeled]
    labels = [pair.label for pair in labeled]
    threshold, j = youden_threshold(proximity_scores(table, sources, targets), labels)
    app.logger.info('Proximity threshold %.6f (J = %.4f) from %d pairs', threshold, j, len(labeled))
    return threshold
