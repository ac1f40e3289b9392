import datetime as dt
import enum
import errno
import hashlib
import os
import zlib

import numpy as np

from greed import app, db
from greed.models import Run, Artifact, Metric


class GreedError(Exception):
    pass


class InvalidParameter(GreedError):
    pass


class EdgeListError(GreedError):
    def __init__(self, message, path=None, line_number=None):
        if line_number is not None:
            message = '{}:{}: {}'.format(path, line_number, message)
        elif path is not None:
            message = '{}: {}'.format(path, message)
        super().__init__(message)
        self.path = path
        self.line_number = line_number


class EmbeddingFormatError(EdgeListError):
    pass


class EmptyGraph(GreedError):
    pass


class SplitError(GreedError):
    pass


class GraphTooDense(GreedError):
    pass


class UnknownNode(GreedError):
    def __init__(self, node):
        super().__init__('Unknown node id: {}'.format(node))
        self.node = node


class SingleClassError(GreedError):
    pass


class NonFiniteLoss(GreedError):
    def __init__(self, epoch, batch, pair):
        super().__init__('Non-finite loss at epoch {}, batch {}, pair {}'.format(epoch, batch, pair))
        self.epoch = epoch
        self.batch = batch
        self.pair = pair


class EmptySample(GreedError):
    pass


class CheckpointError(GreedError):
    pass


class GradientCheckFailed(GreedError):
    pass


class ConfigError(EdgeListError):
    pass


def derive_seed(root_seed, stage):
    """Expand the root seed into an independent, stable seed for one pipeline stage."""
    if root_seed < 0:
        raise InvalidParameter('Seed must be non-negative, got {}'.format(root_seed))
    sequence = np.random.SeedSequence(root_seed, spawn_key=(zlib.crc32(stage.encode('utf-8')),))
    return int(sequence.generate_state(1)[0])


def format_value(value):
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, (list, tuple)):
        return ','.join(format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(params):
    return ''.join('{} = {}\n'.format(key, format_value(value))
                   for key, value in sorted(params.items()) if value is not None)


def read_config_file(path):
    params = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except (IOError, OSError) as e:
        raise ConfigError('Could not read config file ({})'.format(e.strerror), path)

    for line_number, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, sep, value = line.partition('=')
        if not sep or not key.strip():
            raise ConfigError('Expected "key = value"', path, line_number)
        params[key.strip().replace('-', '_')] = value.strip()
    return params


def make_outdir(dirname):
    if dirname and not os.path.isdir(dirname):
        try:
            os.makedirs(dirname)
        except OSError as e:
            if e.errno != errno.EEXIST or not os.path.isdir(dirname):
                app.logger.error('Could not create directory: {}\n{}'.format(dirname, e))
                raise


def write_lines(path, lines):
    make_outdir(os.path.dirname(path))
    with open(path, 'w', newline='\n') as OUTPUT:
        for line in lines:
            OUTPUT.write(line)
            OUTPUT.write('\n')
    app.logger.info('Wrote %s', path)


def file_sha256(filename):
    sha = hashlib.sha256()
    with open(filename, 'rb') as f:
        for chunk in iter(lambda: f.read(128 * sha.block_size), b''):
            sha.update(chunk)
    return sha.hexdigest()


def start_run(stage, seed, params):
    db.create_all()
    run = Run(stage=stage, seed=seed, status='ongoing', config_text=format_config(params),
              start_date=dt.datetime.today())
    db.session.add(run)
    db.session.commit()
    return run


def update_run_status(run, status, message=None):
    run.status = status
    run.message = message
    # set the end date for any status other than 'ongoing'
    if status != 'ongoing':
        run.end_date = dt.datetime.today()
    db.session.add(run)
    db.session.commit()


def record_artifact(run, path, kind):
    run.artifacts.append(Artifact(path=os.path.abspath(path), kind=kind, sha256=file_sha256(path)))
    db.session.commit()


def record_metrics(run, report):
    for metric, dataset_type, k, value in report.rows():
        run.metrics.append(Metric(metric=metric, dataset_type=dataset_type, k=k, value=value))
    db.session.commit()


def get_runs(stage=None):
    query = Run.query
    if stage:
        query = query.filter_by(stage=stage)
    return query.order_by(Run.id).all()
