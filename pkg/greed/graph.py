import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from greed import app
from greed.utils import EdgeListError, EmptyGraph, SplitError, GraphTooDense, InvalidParameter, write_lines


NODE_COUNT_HEADER = '% node_count'


class DatasetType(enum.Enum):
    TYPE1 = 'type1'
    TYPE2 = 'type2'
    TYPE3 = 'type3'


@dataclass(frozen=True, order=True)
class LabeledPair:
    source: int
    target: int
    label: int

    def __post_init__(self):
        if self.source == self.target:
            raise InvalidParameter('Pair endpoints must differ, got ({0}, {0})'.format(self.source))
        if self.label not in (0, 1):
            raise InvalidParameter('Pair label must be 0 or 1, got {}'.format(self.label))


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.20
    rng_seed: int = 0
    dataset_type: DatasetType = DatasetType.TYPE1

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidParameter('test_fraction must lie strictly between 0 and 1, got {}'.format(self.test_fraction))


@dataclass(frozen=True)
class WalkConfig:
    num_walks_per_node: int = 40
    walk_length: int = 40
    max_hop_for_direction: int = 3
    rng_seed: int = 0
    # Above this many reachable targets a source falls back to sampled walks
    bfs_pair_limit: int = 10000
    threads: int = 1

    def __post_init__(self):
        for name in ('num_walks_per_node', 'walk_length', 'max_hop_for_direction', 'bfs_pair_limit', 'threads'):
            if getattr(self, name) < 1:
                raise InvalidParameter('{} must be positive, got {}'.format(name, getattr(self, name)))


class DirectedGraph:
    """Immutable adjacency structure over dense node ids 0..node_count-1.

    Self-loops and duplicate edges are removed at construction; `out_adj[u]` and
    `in_adj[v]` are sorted arrays of successor and predecessor ids.
    """

    def __init__(self, node_count, edges, id_map=None):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= node_count):
            raise InvalidParameter('Edge endpoint outside 0..{}'.format(node_count - 1))
        edges = edges[edges[:, 0] != edges[:, 1]]
        # np.unique sorts lexicographically, so successors come out sorted
        edges = np.unique(edges, axis=0)

        self.node_count = node_count
        self.id_map = list(id_map) if id_map is not None else [str(node) for node in range(node_count)]
        self._edges = edges
        self._edge_set = None
        self._undirected_adj = None

        boundaries = np.cumsum(np.bincount(edges[:, 0], minlength=node_count))[:-1]
        self.out_adj = np.split(edges[:, 1], boundaries)

        by_target = edges[np.lexsort((edges[:, 0], edges[:, 1]))]
        boundaries = np.cumsum(np.bincount(by_target[:, 1], minlength=node_count))[:-1]
        self.in_adj = np.split(by_target[:, 0], boundaries)

    @property
    def edge_count(self):
        return len(self._edges)

    def edges(self):
        return self._edges.copy()

    def out_degree(self, node):
        return len(self.out_adj[node])

    def has_edge(self, source, target):
        if self._edge_set is None:
            self._edge_set = set(map(tuple, self._edges.tolist()))
        return (source, target) in self._edge_set

    def undirected_adj(self):
        if self._undirected_adj is None:
            self._undirected_adj = [np.union1d(out_nbrs, in_nbrs)
                                    for out_nbrs, in_nbrs in zip(self.out_adj, self.in_adj)]
        return self._undirected_adj

    def __repr__(self):
        return '<DirectedGraph nodes={} edges={}>'.format(self.node_count, self.edge_count)


def load_edge_list(path, relabel=True):
    """Read a whitespace-separated edge list ('%' and '#' start comments).

    With `relabel`, original ids are mapped to dense internal ids in order of first
    appearance and kept in `id_map`; otherwise the ids are taken as internal ids
    and the node count comes from a `% node_count N` header when present.
    """
    index = {}
    edges = []
    node_count = 0
    self_loops = 0

    try:
        f = open(path)
    except (IOError, OSError) as e:
        raise EdgeListError('Could not read edge list ({})'.format(e.strerror), path)

    with f:
        for line_number, line in enumerate(f, 1):
            line = line.strip()
            if line.startswith(NODE_COUNT_HEADER):
                try:
                    node_count = int(line[len(NODE_COUNT_HEADER):])
                except ValueError:
                    raise EdgeListError('Malformed node count header', path, line_number)
                continue
            if not line or line[0] in '%#':
                continue

            # Konect files may carry weight and timestamp columns after the endpoints
            tokens = line.split()
            if len(tokens) < 2:
                raise EdgeListError('Expected "source target", got "{}"'.format(line), path, line_number)
            try:
                source, target = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise EdgeListError('Node ids must be integers, got "{}"'.format(line), path, line_number)
            if not relabel and (source < 0 or target < 0):
                raise EdgeListError('Internal node ids must be non-negative', path, line_number)

            if source == target:
                self_loops += 1
                continue
            if relabel:
                source = index.setdefault(source, len(index))
                target = index.setdefault(target, len(index))
            edges.append((source, target))

    if self_loops:
        app.logger.warning('Dropped %d self-loop(s) from %s', self_loops, path)
    if not edges:
        raise EmptyGraph('{}: no edges left after removing comments and self-loops'.format(path))

    if relabel:
        id_map = [str(original) for original in index]
        graph = DirectedGraph(len(index), edges, id_map=id_map)
    else:
        node_count = max(node_count, max(max(edge) for edge in edges) + 1)
        graph = DirectedGraph(node_count, edges)

    duplicates = len(edges) - graph.edge_count
    if duplicates:
        app.logger.warning('Collapsed %d duplicate edge(s) in %s', duplicates, path)
    app.logger.info('Loaded %s: %d nodes, %d edges', path, graph.node_count, graph.edge_count)
    return graph


def save_edge_list(graph, path):
    lines = ['{} {}'.format(NODE_COUNT_HEADER, graph.node_count)]
    lines.extend('{} {}'.format(source, target) for source, target in graph.edges().tolist())
    write_lines(path, lines)


def save_id_map(graph, path):
    write_lines(path, ('{} {}'.format(original, internal) for internal, original in enumerate(graph.id_map)))


def load_id_map(path):
    id_map = {}
    try:
        with open(path) as f:
            for line_number, line in enumerate(f, 1):
                tokens = line.split()
                if not tokens:
                    continue
                if len(tokens) != 2:
                    raise EdgeListError('Expected "original internal"', path, line_number)
                id_map[int(tokens[1])] = tokens[0]
    except (IOError, OSError) as e:
        raise EdgeListError('Could not read id map ({})'.format(e.strerror), path)
    return [id_map[internal] for internal in sorted(id_map)]


def save_pairs(pairs, path):
    write_lines(path, ('{} {} {}'.format(pair.source, pair.target, pair.label) for pair in pairs))


def load_pairs(path):
    pairs = []
    try:
        f = open(path)
    except (IOError, OSError) as e:
        raise EdgeListError('Could not read pair file ({})'.format(e.strerror), path)

    with f:
        for line_number, line in enumerate(f, 1):
            line = line.strip()
            if not line or line[0] in '%#':
                continue
            tokens = line.split()
            try:
                if len(tokens) != 3:
                    raise ValueError
                pairs.append(LabeledPair(int(tokens[0]), int(tokens[1]), int(tokens[2])))
            except (ValueError, InvalidParameter):
                raise EdgeListError('Expected "source target label", got "{}"'.format(line), path, line_number)
    return pairs


def split_edges(graph, spec):
    """Hold out a uniformly sampled fraction of the edges as positive test pairs."""
    if graph.edge_count == 0:
        raise EmptyGraph('Cannot split an empty graph')

    edges = graph.edges()
    # The epsilon keeps e.g. 0.29 * 100 from flooring to 28
    test_count = int(math.floor(spec.test_fraction * len(edges) + 1e-9))
    if test_count == 0:
        raise SplitError('test_fraction {} of {} edges yields no test edges'.format(spec.test_fraction, len(edges)))

    rng = np.random.default_rng(spec.rng_seed)
    chosen = np.sort(rng.choice(len(edges), size=test_count, replace=False))
    held_out = np.zeros(len(edges), dtype=bool)
    held_out[chosen] = True

    train = DirectedGraph(graph.node_count, edges[~held_out], id_map=graph.id_map)
    test_pos = [LabeledPair(source, target, 1) for source, target in edges[chosen].tolist()]
    app.logger.info('Split %d edges into %d train and %d test edges', len(edges), train.edge_count, len(test_pos))
    return train, test_pos


def sample_non_edges(graph, count, rng, exclude=(), max_retries=100):
    """Draw `count` distinct node pairs (u, v), u != v, that are not edges of `graph`."""
    excluded = set(exclude)
    sampled = []
    seen = set()
    budget = max(count, 1) * max_retries
    tries = 0
    while len(sampled) < count:
        if tries >= budget:
            raise GraphTooDense('Found only {} of {} non-edges after {} draws'.format(len(sampled), count, tries))
        tries += 1
        source, target = (int(node) for node in rng.integers(graph.node_count, size=2))
        pair = (source, target)
        if source == target or pair in seen or pair in excluded or graph.has_edge(source, target):
            continue
        seen.add(pair)
        sampled.append(LabeledPair(source, target, 0))
    return sampled


def build_test_set(g_full, test_pos, dataset_type, rng_seed, max_retries=100):
    if not test_pos:
        raise SplitError('No positive test pairs')
    if any(pair.label != 1 for pair in test_pos):
        raise SplitError('Positive test pairs must all be labeled 1')

    dataset_type = DatasetType(dataset_type)
    pairs = list(test_pos)

    if dataset_type in (DatasetType.TYPE1, DatasetType.TYPE2):
        # Reciprocal edges of the full graph have no reverse negative
        pairs.extend(LabeledPair(pair.target, pair.source, 0) for pair in test_pos
                     if not g_full.has_edge(pair.target, pair.source))

    if dataset_type in (DatasetType.TYPE1, DatasetType.TYPE3):
        # Same seed for both types, so Type 1 holds exactly the Type 3 random negatives
        rng = np.random.default_rng(rng_seed)
        random_negatives = sample_non_edges(g_full, len(test_pos), rng, max_retries=max_retries)
        present = set(pairs)
        pairs.extend(pair for pair in random_negatives if pair not in present)

    app.logger.info('Built %s test set: %d pairs (%d positive)', dataset_type.value, len(pairs), len(test_pos))
    return pairs


def build_validation_set(train, fraction, rng_seed, exclude=(), max_retries=100):
    """Positive slice of the training edges plus as many sampled non-edges, for threshold selection."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidParameter('Validation fraction must lie in (0, 1], got {}'.format(fraction))
    edges = train.edges()
    if len(edges) == 0:
        raise EmptyGraph('Cannot take a validation slice of an empty graph')

    rng = np.random.default_rng(rng_seed)
    count = max(1, int(math.floor(fraction * len(edges) + 1e-9)))
    chosen = np.sort(rng.choice(len(edges), size=count, replace=False))
    positives = [LabeledPair(source, target, 1) for source, target in edges[chosen].tolist()]
    excluded = {(pair.source, pair.target) for pair in exclude}
    negatives = sample_non_edges(train, count, rng, exclude=excluded, max_retries=max_retries)
    return positives + negatives


def without_edges(graph, pairs):
    """Copy of `graph` minus the label-1 pairs, e.g. a validation slice kept out of proximity training."""
    dropped = {(pair.source, pair.target) for pair in pairs if pair.label == 1}
    kept = [edge for edge in graph.edges().tolist() if tuple(edge) not in dropped]
    app.logger.info('Holding out %d of %d edges', graph.edge_count - len(kept), graph.edge_count)
    return DirectedGraph(graph.node_count, kept, id_map=graph.id_map)


def _walks_from(adjacency, node, cfg, walk_length):
    rng = np.random.default_rng([cfg.rng_seed, node])
    walks = []
    for _ in range(cfg.num_walks_per_node):
        walk = [node]
        current = node
        for draw in rng.random(walk_length - 1):
            neighbors = adjacency[current]
            if len(neighbors) == 0:
                break
            current = int(neighbors[int(draw * len(neighbors))])
            walk.append(current)
        walks.append(walk)
    return walks


def generate_walks(graph, cfg, undirected):
    """Yield `num_walks_per_node` uniform random walks per node, node by node.

    Each node owns a generator seeded with (rng_seed, node), so the stream is the
    same for any number of threads. Directed walks stop at sinks.
    """
    if graph.node_count == 0:
        raise EmptyGraph('Cannot walk an empty graph')

    adjacency = graph.undirected_adj() if undirected else graph.out_adj

    def walks_from(node):
        return _walks_from(adjacency, node, cfg, cfg.walk_length)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for walks in pool.map(walks_from, range(graph.node_count)):
                yield from walks
    else:
        for node in range(graph.node_count):
            yield from walks_from(node)


def reachable_within(graph, source, max_hop, limit=None):
    """Nodes reachable from `source` in 1..max_hop directed steps, excluding `source`.

    Returns None as soon as more than `limit` nodes have been reached.
    """
    reached = set()
    frontier = [source]
    for _ in range(max_hop):
        next_frontier = []
        for node in frontier:
            for successor in graph.out_adj[node].tolist():
                if successor != source and successor not in reached:
                    reached.add(successor)
                    next_frontier.append(successor)
        if limit is not None and len(reached) > limit:
            return None
        if not next_frontier:
            break
        frontier = next_frontier
    return reached


def _sampled_reach(graph, source, cfg):
    reached = set()
    for walk in _walks_from(graph.out_adj, source, cfg, cfg.max_hop_for_direction + 1):
        reached.update(walk[1:])
    reached.discard(source)
    return reached


def build_direction_pairs(graph, cfg):
    """Labeled training pairs for the direction model.

    Every target reachable within the hop bound gives (s, t, 1); the reverse (t, s, 0)
    is added unless s is reachable from t as well, in which case (t, s, 1) is
    emitted from t's side.
    """
    if graph.edge_count == 0:
        raise EmptyGraph('Cannot build direction pairs from an empty graph')

    reach = []
    sampled = 0
    for source in range(graph.node_count):
        targets = reachable_within(graph, source, cfg.max_hop_for_direction, cfg.bfs_pair_limit)
        if targets is None:
            targets = _sampled_reach(graph, source, cfg)
            sampled += 1
        reach.append(targets)
    if sampled:
        app.logger.info('Used sampled walks for %d source(s) with large neighborhoods', sampled)

    pairs = set()
    for source, targets in enumerate(reach):
        for target in targets:
            pairs.add((source, target, 1))
            if source not in reach[target]:
                pairs.add((target, source, 0))

    pairs = [LabeledPair(*pair) for pair in sorted(pairs)]
    positives = sum(pair.label for pair in pairs)
    app.logger.info('Built %d direction pairs (%d positive, %d reverse)', len(pairs), positives, len(pairs) - positives)
    return pairs


def synthetic_dag(node_count, edge_count, width, rng_seed):
    """Seeded layered DAG: nodes fill layers of `width` consecutive ids and every
    edge joins a layer to the next one, drawn uniformly without replacement."""
    if width < 1 or node_count < 2:
        raise InvalidParameter('Need width >= 1 and at least two nodes')
    layer = np.arange(node_count) // width
    sources, targets = np.nonzero(layer[None, :] == layer[:, None] + 1)
    if edge_count > len(sources):
        raise GraphTooDense('Layers of width {} admit only {} edges'.format(width, len(sources)))

    rng = np.random.default_rng(rng_seed)
    chosen = np.sort(rng.choice(len(sources), size=edge_count, replace=False))
    return DirectedGraph(node_count, np.stack([sources[chosen], targets[chosen]], axis=1).tolist())
