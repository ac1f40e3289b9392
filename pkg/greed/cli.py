import dataclasses
import logging
import os
from functools import wraps

import click

from greed import app, db
from greed.direction_model import (DirectionModel, ModelConfig, direction_embeddings, load_checkpoint,
                                   run_gradient_suite, save_checkpoint, train)
from greed.evaluate import (MetricsReport, Recommender, evaluate_link_prediction, precision_recall_at_k,
                            recommend_all, select_recommendation_queries)
from greed.graph import (DatasetType, SplitSpec, WalkConfig, build_direction_pairs, build_test_set,
                         build_validation_set, generate_walks, load_edge_list, load_pairs, save_edge_list,
                         save_id_map, save_pairs, split_edges, without_edges)
from greed.proximity import (SkipGramConfig, load_embeddings, pick_proximity_threshold, save_embeddings,
                             train_skipgram)
from greed.utils import (CheckpointError, ConfigError, GreedError, derive_seed, format_config, get_runs,
                         read_config_file, record_artifact, record_metrics, start_run, update_run_status,
                         write_lines)


TRAIN_EDGES = 'train.edges'
ID_MAP = 'id_map.txt'
TEST_PAIRS = 'test.{}.pairs'
VALIDATION_PAIRS = 'validation.pairs'


class IntList(click.ParamType):
    name = 'INTS'

    def convert(self, value, param, ctx):
        if isinstance(value, (list, tuple)):
            return tuple(int(item) for item in value)
        try:
            values = tuple(int(item) for item in str(value).split(',') if item.strip())
        except ValueError:
            self.fail('{!r} is not a comma-separated list of integers'.format(value), param, ctx)
        if not values or any(item < 1 for item in values):
            self.fail('{!r} must list positive integers'.format(value), param, ctx)
        return values


class TypeList(click.ParamType):
    name = 'TYPES'

    def convert(self, value, param, ctx):
        if isinstance(value, (list, tuple)):
            return tuple(DatasetType(item) for item in value)
        try:
            values = tuple(DatasetType(item.strip()) for item in str(value).split(',') if item.strip())
        except ValueError:
            self.fail('{!r} must list dataset types from type1, type2, type3'.format(value), param, ctx)
        if not values:
            self.fail('No dataset type given', param, ctx)
        return values


def ints(values):
    return ','.join(str(value) for value in values)


def load_config_file(ctx, param, path):
    """Eager `--config` callback: the file's "key = value" lines become Click's default map,
    so explicit flags still win and required options may come from the file alone."""
    if not path:
        return path
    try:
        values = read_config_file(path)
    except ConfigError as e:
        raise click.ClickException(str(e))

    names = {option.name: option for option in ctx.command.params}
    defaults = {}
    for key, value in values.items():
        option = names.get(key)
        if option is None or key == 'config':
            app.logger.warning('Ignoring unknown config key "%s" in %s', key, path)
            continue
        try:
            option.type_cast_value(ctx, value)
        except click.BadParameter as e:
            raise click.ClickException(str(ConfigError('Invalid value for {}: {}'.format(key, e.format_message()),
                                                       path)))
        defaults[key] = value
    ctx.default_map = dict(ctx.default_map or {}, **defaults)
    return path


def set_verbosity(verbose, quiet):
    if quiet:
        level = logging.ERROR
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = app.config['LOG_LEVEL']
    app.logger.setLevel(level)


def write_provenance(run, params, path):
    write_lines(path, format_config(params).splitlines())
    record_artifact(run, path, 'config')


def pipeline_command(name):
    """Register a pipeline stage: shared options, config-file replay, run registry and error reporting."""
    def decorator(func):
        @click.option('--config', type=click.Path(exists=True, dir_okay=False), is_eager=True,
                      callback=load_config_file,
                      help='"key = value" file; explicit flags take precedence.')
        @click.option('--seed', type=click.IntRange(min=0), default=app.config['SEED'], show_default=True,
                      help='Root seed; each stage derives its own.')
        @click.option('--threads', type=click.IntRange(min=1), default=app.config['THREADS'], show_default=True,
                      help='Worker threads where results do not depend on them.')
        @click.option('-v', '--verbose', count=True, help='INFO with -v, DEBUG with -vv.')
        @click.option('-q', '--quiet', is_flag=True, help='Only report errors.')
        @click.pass_context
        @wraps(func)
        def command(ctx, **params):
            params.pop('config')
            set_verbosity(params.pop('verbose'), params.pop('quiet'))
            run = start_run(name, params['seed'], params)
            try:
                func(run, params, **params)
            except GreedError as e:
                update_run_status(run, 'failed', str(e))
                raise click.ClickException(str(e))
            except click.ClickException as e:
                update_run_status(run, 'failed', e.format_message())
                raise
            update_run_status(run, 'complete')
        return app.cli.command(name)(command)
    return decorator


def load_split(split_dir, types=tuple(DatasetType)):
    train = load_edge_list(os.path.join(split_dir, TRAIN_EDGES), relabel=False)
    test_sets = {}
    for dataset_type in map(DatasetType, types):
        test_sets[dataset_type] = load_pairs(os.path.join(split_dir, TEST_PAIRS.format(dataset_type.value)))
    return train, test_sets, load_pairs(os.path.join(split_dir, VALIDATION_PAIRS))


def sibling_file(path, name):
    """The file `name` next to `path`, or None when there is none."""
    sibling = os.path.join(os.path.dirname(os.path.abspath(path)), name)
    return sibling if os.path.isfile(sibling) else None


def check_coverage(prox, model, node_count):
    if not prox.covers(node_count):
        raise GreedError('Proximity embeddings do not cover all {} nodes'.format(node_count))
    if model is not None and model.node_count != node_count:
        raise CheckpointError('Checkpoint has {} nodes, graph has {}'.format(model.node_count, node_count))


def write_report(run, report, out_dir, stage):
    csv_path = os.path.join(out_dir, 'metrics.csv')
    table_path = os.path.join(out_dir, 'metrics.txt')
    write_lines(csv_path, report.to_csv())
    write_lines(table_path, report.to_table())
    record_artifact(run, csv_path, 'metrics')
    record_artifact(run, table_path, 'metrics')
    record_metrics(run, report)
    app.logger.info('%s results:\n%s', stage, '\n'.join(report.to_table()))


@pipeline_command('split')
@click.option('--edges', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Edge list, one "source target" pair per line.')
@click.option('--test-frac', type=click.FloatRange(0, 1, min_open=True, max_open=True),
              default=app.config['TEST_FRACTION'], show_default=True, help='Fraction of edges held out.')
@click.option('--max-retries', type=click.IntRange(min=1), default=app.config['NEGATIVE_RETRIES'],
              show_default=True, help='Draws per random negative before giving up.')
@click.option('--validation-frac', type=click.FloatRange(0, 1, min_open=True),
              default=app.config['VALIDATION_FRACTION'], show_default=True,
              help='Training edges set aside to pick the proximity threshold.')
@click.option('--out', required=True, type=click.Path(file_okay=False), help='Output directory.')
def split(run, params, edges, test_frac, max_retries, validation_frac, out, seed, threads):
    """Split an edge list into a training graph, Type 1/2/3 test sets and a validation slice"""
    graph = load_edge_list(edges)
    train_graph, test_pos = split_edges(graph, SplitSpec(test_fraction=test_frac, rng_seed=derive_seed(seed, 'split')))

    outputs = [(os.path.join(out, TRAIN_EDGES), 'edges'), (os.path.join(out, ID_MAP), 'id-map')]
    save_edge_list(train_graph, outputs[0][0])
    save_id_map(graph, outputs[1][0])
    test_pairs = []
    for dataset_type in DatasetType:
        pairs = build_test_set(graph, test_pos, dataset_type, derive_seed(seed, 'negatives'), max_retries=max_retries)
        path = os.path.join(out, TEST_PAIRS.format(dataset_type.value))
        save_pairs(pairs, path)
        outputs.append((path, 'pairs'))
        test_pairs.extend(pairs)

    # Every test pair of every type is off limits, whichever types are evaluated later
    validation = build_validation_set(train_graph, validation_frac, derive_seed(seed, 'validation'),
                                      exclude=test_pairs, max_retries=max_retries)
    outputs.append((os.path.join(out, VALIDATION_PAIRS), 'pairs'))
    save_pairs(validation, outputs[-1][0])

    for path, kind in outputs:
        record_artifact(run, path, kind)
    write_provenance(run, params, os.path.join(out, 'split.config'))


@pipeline_command('train-proximity')
@click.option('--edges', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Training edge list written by split.')
@click.option('--dim', type=click.IntRange(min=1), default=app.config['SKIPGRAM_DIM'], show_default=True)
@click.option('--walks', type=click.IntRange(min=1), default=app.config['NUM_WALKS'], show_default=True,
              help='Walks per node.')
@click.option('--walk-len', type=click.IntRange(min=1), default=app.config['WALK_LENGTH'], show_default=True)
@click.option('--window', type=click.IntRange(min=1), default=app.config['SKIPGRAM_WINDOW'], show_default=True)
@click.option('--negatives', type=click.IntRange(min=1), default=app.config['SKIPGRAM_NEGATIVES'],
              show_default=True, help='Negative samples per positive pair.')
@click.option('--epochs', type=click.IntRange(min=1), default=app.config['SKIPGRAM_EPOCHS'], show_default=True)
@click.option('--learning-rate', type=click.FloatRange(0, min_open=True),
              default=app.config['SKIPGRAM_LEARNING_RATE'], show_default=True)
@click.option('--batch-size', type=click.IntRange(min=1), default=app.config['SKIPGRAM_BATCH_SIZE'],
              show_default=True)
@click.option('--holdout', type=click.Path(exists=True, dir_okay=False),
              help='Pairs whose positive edges stay out of the walks. '
                   'Defaults to {} next to --edges when present.'.format(VALIDATION_PAIRS))
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Embedding file to write.')
def train_proximity(run, params, edges, dim, walks, walk_len, window, negatives, epochs, learning_rate, batch_size,
                    holdout, out, seed, threads):
    """Learn proximity embeddings with skip-gram over undirected random walks"""
    graph = load_edge_list(edges, relabel=False)
    if holdout is None:
        holdout = sibling_file(edges, VALIDATION_PAIRS)
        params['holdout'] = holdout
    if holdout:
        graph = without_edges(graph, load_pairs(holdout))
    app.logger.info('Proximity: dim=%d walks=%d walk_len=%d window=%d', dim, walks, walk_len, window)
    walk_config = WalkConfig(num_walks_per_node=walks, walk_length=walk_len, rng_seed=derive_seed(seed, 'walks'),
                             threads=threads)
    skipgram_config = SkipGramConfig(dim=dim, window=window, negatives_per_positive=negatives, epochs=epochs,
                                     learning_rate=learning_rate, batch_size=batch_size,
                                     rng_seed=derive_seed(seed, 'skipgram'))
    table = train_skipgram(generate_walks(graph, walk_config, undirected=True), skipgram_config,
                           node_count=graph.node_count)
    save_embeddings(table, out)
    record_artifact(run, out, 'embeddings')
    write_provenance(run, params, out + '.config')


@pipeline_command('train-direction')
@click.option('--edges', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Training edge list written by split.')
@click.option('--input-dim', type=click.IntRange(min=1), default=app.config['INPUT_DIM'], show_default=True)
@click.option('--hidden', type=IntList(), default=ints(app.config['HIDDEN_DIMS']), show_default=True,
              help='Hidden layer sizes, comma-separated.')
@click.option('--embed-dim', type=click.IntRange(min=3), default=app.config['EMBED_DIM'], show_default=True)
@click.option('--margin', type=click.FloatRange(0, 0.5, min_open=True, max_open=True),
              default=app.config['MARGIN'], show_default=True)
@click.option('--threshold', type=click.FloatRange(0, 1, min_open=True, max_open=True),
              default=app.config['THRESHOLD'], show_default=True)
@click.option('--learning-rate', type=click.FloatRange(0, min_open=True), default=app.config['LEARNING_RATE'],
              show_default=True)
@click.option('--batch-size', type=click.IntRange(min=1), default=app.config['BATCH_SIZE'], show_default=True)
@click.option('--epochs', type=click.IntRange(min=1), default=app.config['EPOCHS'], show_default=True)
@click.option('--max-hop', type=click.IntRange(min=1), default=app.config['MAX_HOP'], show_default=True,
              help='Hop bound for training pairs.')
@click.option('--bfs-limit', type=click.IntRange(min=1), default=app.config['BFS_PAIR_LIMIT'], show_default=True,
              help='Reachable targets per source before falling back to sampled walks.')
@click.option('--walks', type=click.IntRange(min=1), default=app.config['NUM_WALKS'], show_default=True,
              help='Walks per node for the sampled fallback.')
@click.option('--gradcheck', is_flag=True, help='Run the finite-difference suite first and abort on failure.')
@click.option('--resume', type=click.Path(exists=True, dir_okay=False), help='Checkpoint to continue training.')
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Checkpoint to write.')
def train_direction(run, params, edges, input_dim, hidden, embed_dim, margin, threshold, learning_rate, batch_size,
                    epochs, max_hop, bfs_limit, walks, gradcheck, resume, out, seed, threads):
    """Train the siamese cross-product direction model"""
    if gradcheck:
        run_gradient_suite(rng_seed=derive_seed(seed, 'gradcheck'))

    graph = load_edge_list(edges, relabel=False)
    walk_config = WalkConfig(num_walks_per_node=walks, max_hop_for_direction=max_hop, bfs_pair_limit=bfs_limit,
                             rng_seed=derive_seed(seed, 'direction-pairs'))
    pairs = build_direction_pairs(graph, walk_config)

    if resume:
        model = load_checkpoint(resume)
        if model.node_count != graph.node_count:
            raise CheckpointError('Checkpoint has {} nodes, graph has {}'.format(model.node_count, graph.node_count))
        model.config = dataclasses.replace(model.config, margin=margin, threshold=threshold,
                                           learning_rate=learning_rate, batch_size=batch_size, epochs=epochs)
    else:
        config = ModelConfig(input_dim=input_dim, hidden_dims=hidden, embed_dim=embed_dim, margin=margin,
                             threshold=threshold, learning_rate=learning_rate, batch_size=batch_size, epochs=epochs,
                             rng_seed=derive_seed(seed, 'direction'))
        model = DirectionModel.initialize(graph.node_count, config)

    train(model, pairs)
    save_checkpoint(model, out, id_map_path=sibling_file(edges, ID_MAP))
    record_artifact(run, out, 'checkpoint')
    write_provenance(run, params, out + '.config')


def link_prediction_options(func):
    for option in reversed([
        click.option('--split', 'split_dir', required=True, type=click.Path(exists=True, file_okay=False),
                     help='Directory written by split.'),
        click.option('--proximity', required=True, type=click.Path(exists=True, dir_okay=False),
                     help='Proximity embedding file.'),
        click.option('--out', required=True, type=click.Path(file_okay=False), help='Output directory.'),
    ]):
        func = option(func)
    return func


@pipeline_command('evaluate-lp')
@link_prediction_options
@click.option('--checkpoint', type=click.Path(exists=True, dir_okay=False), help='Direction model checkpoint.')
@click.option('--types', type=TypeList(), default='type1,type2,type3', show_default=True,
              help='Dataset types to score, comma-separated.')
@click.option('--symmetric', is_flag=True, help='Score with proximity alone.')
def evaluate_lp(run, params, split_dir, proximity, out, checkpoint, types, symmetric, seed, threads):
    """Link-prediction ROC-AUC per test dataset type"""
    if not symmetric and not checkpoint:
        raise click.UsageError('--checkpoint is required unless --symmetric is given')
    train_graph, test_sets, validation = load_split(split_dir, types)
    prox = load_embeddings(proximity)
    model = None if symmetric else load_checkpoint(checkpoint)
    check_coverage(prox, model, train_graph.node_count)

    threshold = None
    if not symmetric:
        threshold = pick_proximity_threshold(prox, validation)
    report = evaluate_link_prediction(prox, model, test_sets, threshold=threshold, symmetric=symmetric)
    write_report(run, report, out, 'Link prediction')
    write_provenance(run, params, os.path.join(out, 'evaluate-lp.config'))


@pipeline_command('evaluate-nr')
@link_prediction_options
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Direction model checkpoint.')
@click.option('--k', 'ks', type=IntList(), default=ints(app.config['TOP_K']), show_default=True,
              help='Cut-offs, comma-separated.')
@click.option('--sample', type=click.FloatRange(0, 1, min_open=True), default=app.config['SAMPLE_FRACTION'],
              show_default=True, help='Fraction of nodes with held-out edges to query.')
def evaluate_nr(run, params, split_dir, proximity, out, checkpoint, ks, sample, seed, threads):
    """Top-k node recommendation precision and recall"""
    train_graph, test_sets, validation = load_split(split_dir)
    prox = load_embeddings(proximity)
    model = load_checkpoint(checkpoint)
    check_coverage(prox, model, train_graph.node_count)

    threshold = pick_proximity_threshold(prox, validation)
    test_edges = [pair for pair in test_sets[DatasetType.TYPE1] if pair.label == 1]
    queries = select_recommendation_queries(test_edges, sample, derive_seed(seed, 'sample'))
    recommender = Recommender(prox, model, train=train_graph, threshold=threshold)
    recommendations = recommend_all(recommender, queries, max(ks), threads=threads)
    report = precision_recall_at_k(recommendations, test_edges, ks)
    write_report(run, report, out, 'Recommendation')
    write_provenance(run, params, os.path.join(out, 'evaluate-nr.config'))


@pipeline_command('gradcheck')
@click.option('--draws', type=click.IntRange(min=1), default=100, show_default=True,
              help='Random (pair, label) draws per model.')
def gradcheck(run, params, draws, seed, threads):
    """Finite-difference check of the hand-coded gradients"""
    worst = run_gradient_suite(draws=draws, rng_seed=derive_seed(seed, 'gradcheck'))
    record_metrics(run, MetricsReport(counts={('worst_relative_error', 'gradcheck'): worst}))


@pipeline_command('export-embeddings')
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Direction model checkpoint.')
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Embedding file to write.')
def export_embeddings(run, params, checkpoint, out, seed, threads):
    """Write per-node direction embeddings in the embedding text format"""
    save_embeddings(direction_embeddings(load_checkpoint(checkpoint)), out)
    record_artifact(run, out, 'embeddings')
    write_provenance(run, params, out + '.config')


@app.cli.command('runs')
@click.option('--stage', help='Only list runs of this stage.')
def runs(stage):
    """List recorded pipeline runs"""
    db.create_all()
    for run in get_runs(stage):
        click.echo('{:>4}  {:<18} {:<9} seed={:<10} {}  {}'.format(
            run.id, run.stage, run.status, run.seed, run.start_date.strftime('%Y-%m-%dT%H:%M:%S'),
            run.message or ''))
