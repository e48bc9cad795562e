'''Pivot projections: every sample is represented by its distances to p pivot samples.

The result is an N x p x W tensor, W being the number of variables; row i,
column j holds the per-variable distance between sample i and pivot j.
'''

import os, struct, logging
from dataclasses import dataclass
import numpy as np

from .metrics import MetricKind, sample_distance
from .utils import (ParameterError, ShapeError, FormatError, parallel_map,
                    worker_count, ensure_dir)

logger = logging.getLogger(__name__)

MAGIC = b'TPRJ'
VERSION = 1
# magic, version, N, p, W, metric code, dtw band (-1 = none), seed
HEADER = struct.Struct('<4sHIIIBiq')


@dataclass(frozen=True)
class PivotSet:
    indices: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'indices', tuple(int(i) for i in self.indices))
        if len(set(self.indices)) != len(self.indices):
            raise ParameterError('pivot indices must be distinct')

    def __len__(self):
        return len(self.indices)

    def validate(self, n):
        if len(self) > n or any(i < 0 or i >= n for i in self.indices):
            raise ParameterError('pivots {} do not fit a dataset of {} samples'.format(self.indices, n))


@dataclass(frozen=True)
class ProjectionMatrix:
    values: np.ndarray
    metric: MetricKind
    pivot_set: PivotSet

    @property
    def shape(self):
        return self.values.shape

    def flatten(self):
        '''N x (p*W) design matrix'''
        return self.values.reshape(self.values.shape[0], -1)


def select_pivots(ds, p, seed):
    '''Uniform sample of p distinct sample indices, reproducible per seed'''
    n = len(ds)
    if p < 1 or p > n:
        raise ParameterError('pivot count must be in [1, {}], got {}'.format(n, p))
    rng = np.random.default_rng(seed)
    return PivotSet(tuple(rng.choice(n, size=p, replace=False)), seed)


def _pivot_column(args):
    '''Distances from all samples to one pivot, shape N x W'''
    rows, pivot, metric = args
    if isinstance(rows, np.ndarray):
        # equal length: one batched call per variable
        return np.stack([metric.distance_many(rows[:, v, :], pivot.values[v])
                         for v in range(rows.shape[1])], axis=1)
    return np.stack([sample_distance(s, pivot, metric) for s in rows])


def gen_proj_space(ds, pivots, metric, workers=None):
    pivots.validate(len(ds))
    if metric.tag == 'euclidean' and not ds.equal_length:
        lengths = ds.lengths
        a = int(np.argmin(lengths))
        b = int(np.argmax(lengths))
        raise ShapeError('euclidean projection needs equal lengths: samples {} (T={}) and {} (T={})'.format(
            a, lengths[a], b, lengths[b]))
    rows = ds.to_array() if ds.equal_length else list(ds.samples)
    tasks = [(rows, ds[j], metric) for j in pivots.indices]
    # dtw is the only metric slow enough to pay for worker start-up
    if metric.tag == 'dtw' and worker_count(workers) > 1:
        columns = parallel_map(_pivot_column, tasks, workers)
    else:
        columns = [_pivot_column(t) for t in tasks]
    values = np.stack(columns, axis=1)
    # distance to self is zero by definition
    for j, i in enumerate(pivots.indices):
        values[i, j, :] = 0.0
    values.setflags(write=False)
    return ProjectionMatrix(values, metric, pivots)


def normalize_projection(pm):
    '''Scale each sample's p x W block to unit Euclidean norm'''
    v = pm.values
    norms = np.sqrt(np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1))[:, None, None]
    out = np.divide(v, norms, out=np.zeros_like(v), where=norms > 0)
    out.setflags(write=False)
    return ProjectionMatrix(out, pm.metric, pm.pivot_set)


def save_projection(pm, path):
    n, p, w = pm.values.shape
    band = pm.metric.dtw_band if pm.metric.dtw_band is not None else -1
    with open(path, 'wb') as f:
        f.write(HEADER.pack(MAGIC, VERSION, n, p, w, pm.metric.code, band, pm.pivot_set.seed))
        f.write(np.asarray(pm.pivot_set.indices, dtype='<i8').tobytes())
        f.write(np.ascontiguousarray(pm.values, dtype='<f8').tobytes())


def load_projection(path):
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < HEADER.size:
        raise FormatError('{} is too short for a projection header'.format(path))
    magic, version, n, p, w, code, band, seed = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError('{} is not a projection cache file'.format(path))
    if version != VERSION:
        raise FormatError('{} has cache version {}, expected {}'.format(path, version, VERSION))
    offset = HEADER.size
    expected = offset + 8 * p + 8 * n * p * w
    if len(raw) != expected:
        raise FormatError('{} has {} bytes, expected {}'.format(path, len(raw), expected))
    indices = np.frombuffer(raw, dtype='<i8', count=p, offset=offset)
    values = np.frombuffer(raw, dtype='<f8', count=n * p * w, offset=offset + 8 * p)
    values = values.astype(np.float64).reshape(n, p, w)
    values.setflags(write=False)
    metric = MetricKind.from_code(code, band if band >= 0 else None)
    return ProjectionMatrix(values, metric, PivotSet(tuple(indices), seed))


def cache_path(cache_dir, ds, p, seed, metric):
    tag = metric.tag if metric.dtw_band is None else '{}-b{}'.format(metric.tag, metric.dtw_band)
    name = '{}-{}-p{}-s{}.tpj'.format(ds.content_hash()[:16], tag, p, seed)
    return os.path.join(cache_dir, name)


def cached_projection(ds, p, seed, metric, cache_dir, workers=None):
    '''Projection for (dataset, metric, p, seed), read from cache_dir when present.
    Returns (ProjectionMatrix, hit)'''
    path = cache_path(cache_dir, ds, p, seed, metric)
    if os.path.exists(path):
        logger.info('Reading projection from {}'.format(path))
        return load_projection(path), True
    pm = gen_proj_space(ds, select_pivots(ds, p, seed), metric, workers)
    ensure_dir(cache_dir)
    logger.info('Writing projection to {}'.format(path))
    save_projection(pm, path)
    return pm, False
