import json
import os
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import numpy as np

from greed import app
from greed.crossprod import ConstantFrame, crossN, crossN_jacobian, scaled_cosine, scaled_cosine_grad
from greed.graph import LabeledPair
from greed.proximity import EmbeddingTable
from greed.utils import (CheckpointError, GradientCheckFailed, InvalidParameter, NonFiniteLoss, UnknownNode,
                         derive_seed, make_outdir)


CHECKPOINT_FORMAT = 'greed-direction-checkpoint'
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 64
    hidden_dims: Tuple[int, ...] = (256, 256)
    embed_dim: int = 3
    margin: float = 0.25
    threshold: float = 0.5
    learning_rate: float = 0.025
    batch_size: int = 512
    epochs: int = 20
    rng_seed: int = 0
    # None keeps the normalized all-ones reference vector
    reference_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'hidden_dims', tuple(int(dim) for dim in self.hidden_dims))
        if self.embed_dim < 3:
            raise InvalidParameter('embed_dim must be at least 3, got {}'.format(self.embed_dim))
        if not 0.0 < self.margin < 0.5:
            raise InvalidParameter('margin must lie in (0, 0.5), got {}'.format(self.margin))
        if not 0.0 < self.threshold < 1.0:
            raise InvalidParameter('threshold must lie in (0, 1), got {}'.format(self.threshold))
        if not self.learning_rate > 0:
            raise InvalidParameter('learning_rate must be positive, got {}'.format(self.learning_rate))
        for name in ('input_dim', 'batch_size', 'epochs'):
            if getattr(self, name) < 1:
                raise InvalidParameter('{} must be positive, got {}'.format(name, getattr(self, name)))
        if any(dim < 1 for dim in self.hidden_dims):
            raise InvalidParameter('hidden_dims must be positive, got {}'.format(self.hidden_dims))


@dataclass
class TrainStats:
    epoch: int
    mean_loss: float
    pairs_seen: int


@dataclass
class ForwardCache:
    sources: np.ndarray
    targets: np.ndarray
    # Per branch: the input of every weight matrix, and the hidden pre-activations
    layer_inputs: dict
    pre_activations: dict
    operands: np.ndarray
    v_r: np.ndarray
    y_hat: np.ndarray
    shapes: list


@dataclass
class Gradients:
    input_rows: np.ndarray
    input_grads: np.ndarray
    weights: List[np.ndarray]
    branch_weights: dict = field(default_factory=dict)

    def dense_input(self, node_count):
        dense = np.zeros((node_count, self.input_grads.shape[1]))
        np.add.at(dense, self.input_rows, self.input_grads)
        return dense


class DirectionModel:
    """Siamese network whose two output embeddings meet in a cross product.

    Nodes enter through a trainable input table (one-hot times an input matrix),
    pass through shared bias-free ReLU layers and a linear output layer; the cross
    product of source and target outputs is scored against the fixed vector v_d.
    """

    def __init__(self, input_table, weights, v_d, frame, config, history=None):
        self.input_table = np.asarray(input_table, dtype=np.float64)
        self.weights = [np.asarray(weight, dtype=np.float64) for weight in weights]
        self.v_d = np.asarray(v_d, dtype=np.float64)
        self.v_d.setflags(write=False)
        self.frame = frame
        self.config = config
        self.history = list(history or [])

        dims = [config.input_dim] + list(config.hidden_dims) + [config.embed_dim]
        expected = [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        if [weight.shape for weight in self.weights] != expected:
            raise InvalidParameter('Weight shapes {} do not chain {}'.format(
                [weight.shape for weight in self.weights], dims))
        if self.input_table.ndim != 2 or self.input_table.shape[1] != config.input_dim:
            raise InvalidParameter('Input table must have {} columns'.format(config.input_dim))
        if self.v_d.shape != (config.embed_dim,) or not np.linalg.norm(self.v_d) > 0:
            raise InvalidParameter('v_d must be a non-zero {}-vector'.format(config.embed_dim))
        if frame.dim != config.embed_dim:
            raise InvalidParameter('Frame dimension {} does not match embed_dim {}'.format(frame.dim, config.embed_dim))

    @classmethod
    def initialize(cls, node_count, config):
        rng = np.random.default_rng(derive_seed(config.rng_seed, 'direction-init'))
        input_table = rng.standard_normal((node_count, config.input_dim))
        dims = [config.input_dim] + list(config.hidden_dims) + [config.embed_dim]
        weights = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))

        if config.reference_seed is None:
            v_d = np.ones(config.embed_dim) / np.sqrt(config.embed_dim)
        else:
            v_d = np.random.default_rng(config.reference_seed).standard_normal(config.embed_dim)
        frame = ConstantFrame.sample(config.embed_dim, derive_seed(config.rng_seed, 'frame'))
        return cls(input_table, weights, v_d, frame, config)

    @property
    def node_count(self):
        return len(self.input_table)

    def parameters(self):
        return [self.input_table] + self.weights

    def _check_nodes(self, nodes):
        nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
        unknown = (nodes < 0) | (nodes >= self.node_count)
        if np.any(unknown):
            raise UnknownNode(int(nodes[unknown][0]))
        return nodes

    def embed(self, nodes):
        """Direction embeddings v for a batch of nodes."""
        h = self.input_table[self._check_nodes(nodes)]
        for weight in self.weights[:-1]:
            h = np.maximum(h @ weight, 0.0)
        return h @ self.weights[-1]

    def _branch(self, nodes):
        h = self.input_table[nodes]
        inputs = []
        pre_activations = []
        for weight in self.weights[:-1]:
            inputs.append(h)
            z = h @ weight
            pre_activations.append(z)
            h = np.maximum(z, 0.0)
        inputs.append(h)
        return h @ self.weights[-1], inputs, pre_activations

    def forward(self, sources, targets):
        sources = self._check_nodes(sources)
        targets = self._check_nodes(targets)
        v_s, inputs_s, pre_s = self._branch(sources)
        v_t, inputs_t, pre_t = self._branch(targets)
        operands = self.frame.operands(v_s, v_t)
        v_r = crossN(operands)
        y_hat = np.atleast_1d(scaled_cosine(v_r, self.v_d))
        cache = ForwardCache(sources=sources, targets=targets,
                             layer_inputs={'source': inputs_s, 'target': inputs_t},
                             pre_activations={'source': pre_s, 'target': pre_t},
                             operands=operands, v_r=v_r, y_hat=y_hat,
                             shapes=[weight.shape for weight in self.weights])
        return y_hat, cache

    def backward(self, cache, grad_out):
        """Chain dL/dy_hat through the cosine head, the cross product and both siamese branches."""
        if cache.shapes != [weight.shape for weight in self.weights]:
            raise InvalidParameter('Stale forward cache: weight shapes changed')
        grad_out = np.broadcast_to(np.asarray(grad_out, dtype=np.float64), cache.y_hat.shape)

        grad_r = grad_out[:, None] * scaled_cosine_grad(cache.v_r, self.v_d)
        grad_v = {
            'source': np.einsum('bij,bi->bj', crossN_jacobian(cache.operands, 0), grad_r),
            'target': np.einsum('bij,bi->bj', crossN_jacobian(cache.operands, 1), grad_r),
        }

        branch_weights = {}
        input_grads = []
        for branch in ('source', 'target'):
            inputs = cache.layer_inputs[branch]
            pre_activations = cache.pre_activations[branch]
            grads = [None] * len(self.weights)
            grad_h = grad_v[branch]
            grads[-1] = inputs[-1].T @ grad_h
            grad_h = grad_h @ self.weights[-1].T
            for layer in reversed(range(len(self.weights) - 1)):
                grad_z = grad_h * (pre_activations[layer] > 0)
                grads[layer] = inputs[layer].T @ grad_z
                grad_h = grad_z @ self.weights[layer].T
            branch_weights[branch] = grads
            input_grads.append(grad_h)

        weights = [source + target for source, target in zip(branch_weights['source'], branch_weights['target'])]
        return Gradients(input_rows=np.concatenate([cache.sources, cache.targets]),
                         input_grads=np.concatenate(input_grads),
                         weights=weights, branch_weights=branch_weights)

    def apply(self, gradients, learning_rate, input_learning_rate=None):
        """Step the shared weights by `learning_rate` and the touched input rows by `input_learning_rate`."""
        if input_learning_rate is None:
            input_learning_rate = learning_rate
        np.add.at(self.input_table, gradients.input_rows, -input_learning_rate * gradients.input_grads)
        for weight, grad in zip(self.weights, gradients.weights):
            weight -= learning_rate * grad


def forward(model, s, t):
    """Prediction and activation cache for one (source, target) pair."""
    y_hat, cache = model.forward([s], [t])
    return float(y_hat[0]), cache


def backward(model, cache, grad_out):
    return model.backward(cache, grad_out)


def contrastive_loss(y_hat, y, margin):
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y)
    loss = np.where(y == 1, (1.0 - y_hat) ** 2, np.maximum(y_hat - margin, 0.0) ** 2)
    return float(loss) if loss.ndim == 0 else loss


def loss_grad(y_hat, y, margin):
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y)
    grad = np.where(y == 1, -2.0 * (1.0 - y_hat), np.where(y_hat > margin, 2.0 * (y_hat - margin), 0.0))
    return float(grad) if grad.ndim == 0 else grad


def _pair_arrays(pairs):
    sources = np.array([pair.source for pair in pairs], dtype=np.int64)
    targets = np.array([pair.target for pair in pairs], dtype=np.int64)
    labels = np.array([pair.label for pair in pairs], dtype=np.int64)
    return sources, targets, labels


def mean_loss(model, pairs, batch_size=4096):
    sources, targets, labels = _pair_arrays(pairs)
    total = 0.0
    for start in range(0, len(pairs), batch_size):
        y_hat, _ = model.forward(sources[start:start + batch_size], targets[start:start + batch_size])
        total += np.sum(contrastive_loss(y_hat, labels[start:start + batch_size], model.config.margin))
    return total / len(pairs)


def train(model, pairs, cfg=None):
    """Mini-batch SGD on the contrastive loss; epoch numbering continues any earlier history."""
    cfg = cfg or model.config
    if not pairs:
        raise InvalidParameter('No training pairs')
    sources, targets, labels = _pair_arrays(pairs)
    model._check_nodes(np.concatenate([sources, targets]))

    shuffle_seed = derive_seed(cfg.rng_seed, 'direction-shuffle')
    first_epoch = model.history[-1].epoch + 1 if model.history else 1
    if model.history:
        app.logger.info('Resuming at epoch %d (last mean loss %.6f)', first_epoch, model.history[-1].mean_loss)

    stats = []
    pairs_seen = model.history[-1].pairs_seen if model.history else 0
    for epoch in range(first_epoch, first_epoch + cfg.epochs):
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(pairs))
        loss_sum = 0.0
        for batch_number, start in enumerate(range(0, len(pairs), cfg.batch_size)):
            batch = order[start:start + cfg.batch_size]
            y_hat, cache = model.forward(sources[batch], targets[batch])
            losses = contrastive_loss(y_hat, labels[batch], cfg.margin)
            if not np.all(np.isfinite(losses)):
                bad = batch[int(np.argmin(np.isfinite(losses)))]
                raise NonFiniteLoss(epoch, batch_number, (int(sources[bad]), int(targets[bad]), int(labels[bad])))
            loss_sum += losses.sum()

            # Shared weights follow the batch mean; each input row takes the summed
            # gradient of the pairs it occurs in, as one SGD step per occurrence would
            gradients = model.backward(cache, loss_grad(y_hat, labels[batch], cfg.margin))
            model.apply(gradients, cfg.learning_rate / len(batch), input_learning_rate=cfg.learning_rate)

        pairs_seen += len(pairs)
        stats.append(TrainStats(epoch=epoch, mean_loss=loss_sum / len(pairs), pairs_seen=pairs_seen))
        if epoch == first_epoch and model.history:
            app.logger.info('Loss continuity: %.6f before resume, %.6f after', model.history[-1].mean_loss,
                            stats[-1].mean_loss)
        app.logger.info('Direction epoch %d: mean loss %.6f over %d pairs', epoch, stats[-1].mean_loss, len(pairs))

    model.history.extend(stats)
    return model, stats


def predict_pairs(model, sources, targets, batch_size=4096):
    sources = np.asarray(sources, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    predictions = [model.forward(sources[start:start + batch_size], targets[start:start + batch_size])[0]
                   for start in range(0, len(sources), batch_size)]
    return np.concatenate(predictions) if predictions else np.empty(0)


def predict_from_embeddings(model, v_s, v_t):
    """y_hat from precomputed direction embeddings, skipping the siamese layers."""
    return np.atleast_1d(scaled_cosine(crossN(model.frame.operands(v_s, v_t)), model.v_d))


def predict_direction(model, s, t, threshold=None):
    threshold = model.config.threshold if threshold is None else threshold
    y_hat, _ = forward(model, s, t)
    return int(y_hat > threshold)


def direction_embeddings(model, batch_size=4096):
    nodes = np.arange(model.node_count)
    vectors = [model.embed(nodes[start:start + batch_size]) for start in range(0, len(nodes), batch_size)]
    return EmbeddingTable(np.concatenate(vectors), nodes)


def _relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)


def gradient_check(model, pairs, step=1e-6):
    """Largest relative error between backward() and central differences of the summed loss."""
    sources, targets, labels = _pair_arrays(pairs)
    margin = model.config.margin

    def total_loss():
        y_hat, _ = model.forward(sources, targets)
        return np.sum(contrastive_loss(y_hat, labels, margin))

    y_hat, cache = model.forward(sources, targets)
    gradients = model.backward(cache, loss_grad(y_hat, labels, margin))
    analytic = [gradients.dense_input(model.node_count)] + gradients.weights

    worst = 0.0
    for parameter, grad in zip(model.parameters(), analytic):
        numeric = np.zeros_like(parameter)
        for index in np.ndindex(parameter.shape):
            original = parameter[index]
            parameter[index] = original + step
            plus = total_loss()
            parameter[index] = original - step
            minus = total_loss()
            parameter[index] = original
            numeric[index] = (plus - minus) / (2 * step)
        worst = max(worst, float(np.max(_relative_error(grad, numeric))))
    return worst


def run_gradient_suite(draws=100, rng_seed=0, tolerance=1e-5, node_count=6):
    """Finite-difference check of tiny models (K=5, hidden [7], N=3 and N=4) on random pairs."""
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for embed_dim in (3, 4):
        for draw in range(draws):
            config = ModelConfig(input_dim=5, hidden_dims=(7,), embed_dim=embed_dim,
                                 rng_seed=int(rng.integers(2 ** 31)))
            model = DirectionModel.initialize(node_count, config)
            source, target = (int(node) for node in rng.choice(node_count, size=2, replace=False))
            pair = LabeledPair(source, target, int(rng.integers(2)))
            error = gradient_check(model, [pair])
            worst = max(worst, error)
            if error >= tolerance:
                raise GradientCheckFailed('N={} draw {} pair {}: relative error {:.3g}'.format(
                    embed_dim, draw, pair, error))
    app.logger.info('Gradient suite passed: worst relative error %.3g over %d draws', worst, 2 * draws)
    return worst


def save_checkpoint(model, path, id_map_path=None):
    config = asdict(model.config)
    config['hidden_dims'] = list(config['hidden_dims'])
    document = {
        'format': CHECKPOINT_FORMAT,
        'format_version': CHECKPOINT_VERSION,
        'config': config,
        'id_map': id_map_path,
        'node_count': model.node_count,
        # json writes floats with repr, which round-trips doubles exactly
        'input_table': model.input_table.tolist(),
        'weights': [weight.tolist() for weight in model.weights],
        'v_d': model.v_d.tolist(),
        'frame': model.frame.vectors.tolist(),
        'frame_seed': model.frame.rng_seed,
        'history': [asdict(stats) for stats in model.history],
    }
    make_outdir(os.path.dirname(path))
    with open(path, 'w') as f:
        json.dump(document, f)
    app.logger.info('Saved checkpoint %s', path)


def load_checkpoint(path):
    try:
        with open(path) as f:
            document = json.load(f)
    except (IOError, OSError) as e:
        raise CheckpointError('{}: could not read checkpoint ({})'.format(path, e.strerror))
    except ValueError as e:
        raise CheckpointError('{}: not a JSON checkpoint ({})'.format(path, e))

    if document.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError('{}: not a direction model checkpoint'.format(path))
    if document.get('format_version') != CHECKPOINT_VERSION:
        raise CheckpointError('{}: unsupported checkpoint version {}'.format(path, document.get('format_version')))

    try:
        config = ModelConfig(**document['config'])
        embed_dim = config.embed_dim
        frame = ConstantFrame(np.array(document['frame'], dtype=np.float64).reshape(-1, embed_dim), embed_dim,
                              rng_seed=document.get('frame_seed'))
        history = [TrainStats(**stats) for stats in document.get('history', [])]
        return DirectionModel(np.array(document['input_table']).reshape(document['node_count'], config.input_dim),
                              [np.array(weight) for weight in document['weights']],
                              np.array(document['v_d']), frame, config, history=history)
    except (KeyError, TypeError, InvalidParameter) as e:
        raise CheckpointError('{}: malformed checkpoint ({})'.format(path, e))
