'''Clustering accuracy, the four pipelines and multi-run benchmarks.

Pipelines:
    os    cluster the (z-normalized) series themselves
    ls    cluster the latent codes of a dense denoising autoencoder
    pr    cluster the flattened pivot projections
    prls  cluster the latent codes of a CNN-GRU autoencoder trained on the projections
'''

import csv, logging, contextlib, dataclasses
from dataclasses import dataclass, field
import numpy as np

from . import clustering
from .dataset import znormalize_dataset
from .metrics import MetricKind
from .projection import select_pivots, gen_proj_space, normalize_projection, cached_projection
from .autoencoder import (CnnGruConfig, DenseDaeConfig, build_cnn_gru, build_dense_dae,
                          train, encode)
from .utils import (ShapeError, ConfigError, ParameterError, StageError, parallel_map,
                    dump_json, timed)

logger = logging.getLogger(__name__)

PIPELINES = ('os', 'ls', 'pr', 'prls')
ALGORITHMS = ('kmeans', 'kmeans_dtw', 'kshape', 'spectral', 'dbscan')
# algorithms that work on the series, not on a point matrix
SERIES_ALGORITHMS = ('kmeans_dtw', 'kshape')
DEFAULT_SWEEP = (4, 8, 16, 32)


def hungarian(cost):
    '''Minimum-cost perfect matching of a square matrix (shortest augmenting
    paths with row/column potentials, O(n^3)). Returns (rows, cols)'''
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ShapeError('hungarian needs a square matrix, got shape {}'.format(C.shape))
    if not np.all(np.isfinite(C)):
        raise ParameterError('cost matrix has non-finite entries')
    n = C.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    # match[j] = row (1-based) holding column j; column 0 is the virtual root
    match = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    cols = np.zeros(n, dtype=np.int64)
    cols[match[1:] - 1] = np.arange(n)
    return np.arange(n), cols


def clustering_accuracy(pred, truth):
    '''Best fraction of samples matched under a one-to-one mapping of predicted
    clusters to classes. Noise labels (-1) count as singleton clusters'''
    pred = np.asarray(pred, dtype=np.int64).copy()
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ShapeError('got {} predictions for {} labels'.format(pred.size, truth.size))
    if pred.size == 0:
        raise ShapeError('cannot score an empty labeling')
    noise = pred == clustering.NOISE
    pred[noise] = pred.max() + 1 + np.arange(int(noise.sum()))
    _, p_idx = np.unique(pred, return_inverse=True)
    _, t_idx = np.unique(truth, return_inverse=True)
    size = max(p_idx.max(), t_idx.max()) + 1
    table = np.zeros((size, size))
    np.add.at(table, (p_idx, t_idx), 1.0)
    rows, cols = hungarian(-table)
    return float(table[rows, cols].sum() / pred.size)


@dataclass(frozen=True)
class PipelineConfig:
    pipeline: str = 'prls'
    algorithm: str = 'kmeans'
    metric: MetricKind = field(default_factory=MetricKind)
    p: int = 16
    k: int = None
    seed: int = 0
    # None: z-normalize unless projecting with the euclidean metric
    znormalize: bool = None
    normalize_projection: bool = False
    raw_input: bool = False
    eps: object = 'auto'
    min_pts: int = 4
    ae: CnnGruConfig = field(default_factory=CnnGruConfig)
    dae: DenseDaeConfig = field(default_factory=DenseDaeConfig)
    cache_dir: str = None

    def validate(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError('unknown pipeline {!r}, expected one of {}'.format(self.pipeline, PIPELINES))
        if self.algorithm not in ALGORITHMS:
            raise ConfigError('unknown algorithm {!r}, expected one of {}'.format(self.algorithm, ALGORITHMS))
        if self.algorithm in SERIES_ALGORITHMS and self.pipeline != 'os':
            raise ConfigError('{} only runs on the original series (pipeline os), not {}'.format(
                self.algorithm, self.pipeline))
        if self.p < 1:
            raise ParameterError('pivot count must be >= 1, got {}'.format(self.p))
        if self.k is not None and self.k < 1:
            raise ParameterError('k must be >= 1, got {}'.format(self.k))
        if self.min_pts < 1:
            raise ParameterError('min_pts must be >= 1, got {}'.format(self.min_pts))
        if self.eps != 'auto' and (not isinstance(self.eps, (int, float)) or self.eps < 0):
            raise ParameterError("eps must be 'auto' or >= 0, got {!r}".format(self.eps))
        self.ae.validate()
        self.dae.validate()
        return self

    def normalizes(self):
        if self.znormalize is not None:
            return self.znormalize
        return not (self.pipeline in ('pr', 'prls') and self.metric.tag == 'euclidean')

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=seed)

    def to_dict(self):
        d = {'pipeline': self.pipeline, 'algorithm': self.algorithm, 'k': self.k, 'seed': self.seed,
             'znormalize': self.normalizes(), 'eps': self.eps, 'min_pts': self.min_pts}
        if self.pipeline in ('pr', 'prls'):
            d.update(metric=str(self.metric), p=self.p, normalize_projection=self.normalize_projection)
        if self.pipeline == 'prls':
            d.update(ae=self.ae.to_dict(), raw_input=self.raw_input)
        if self.pipeline == 'ls':
            d['dae'] = self.dae.to_dict()
        return d


@dataclass
class RunReport:
    config: dict
    assignment: clustering.Assignment
    accuracy: float = None
    times: dict = field(default_factory=dict)
    loss_history: list = None

    def to_dict(self):
        '''Deterministic part of the report; wall times are kept apart'''
        d = {'seed': self.config['seed'], 'accuracy': self.accuracy, 'k': self.assignment.k,
             'n_noise': self.assignment.n_noise}
        if self.loss_history:
            d['final_loss'] = self.loss_history[-1]
        return d


class Pipeline:
    '''Embed a dataset, cluster the embedding, score it against the labels'''
    name = None

    def __init__(self, cfg):
        self.cfg = cfg.validate()
        self.times = {}
        self.loss_history = None
        self.model = None
        self.projection = None

    @contextlib.contextmanager
    def stage(self, name):
        with timed(self.times, name):
            try:
                yield
            except StageError:
                raise
            except Exception as e:
                raise StageError(name, e) from e

    def run(self, ds):
        cfg = self.cfg
        k = cfg.k if cfg.k is not None else ds.k_hint
        if k is None:
            raise ConfigError('dataset {} gives no cluster count; pass k'.format(ds.name))
        if cfg.normalizes():
            with self.stage('prepare'):
                ds = znormalize_dataset(ds)
        embedding = self._embed(ds)
        with self.stage('cluster'):
            assignment = self._cluster(embedding, k)
        accuracy = None
        if ds.labels is not None:
            with self.stage('score'):
                accuracy = clustering_accuracy(assignment.labels, ds.labels)
        logger.info('{} {} seed {}: accuracy {}'.format(cfg.pipeline, cfg.algorithm, cfg.seed,
                                                        'n/a' if accuracy is None else '{:.4f}'.format(accuracy)))
        return RunReport(cfg.to_dict(), assignment, accuracy, dict(self.times), self.loss_history)

    def _embed(self, ds):
        raise NotImplementedError

    def _cluster(self, points, k):
        cfg = self.cfg
        if cfg.algorithm == 'kmeans':
            return clustering.kmeans(points, k, cfg.seed)
        if cfg.algorithm == 'spectral':
            return clustering.spectral(points, k, cfg.seed)
        if cfg.algorithm == 'dbscan':
            return clustering.dbscan(points, cfg.eps, cfg.min_pts)
        raise ConfigError('{} cannot cluster a point matrix'.format(cfg.algorithm))


def _flatten(ds):
    X = ds.to_array()
    return X.reshape(X.shape[0], -1)


class OriginalSpacePipeline(Pipeline):
    name = 'os'

    def _embed(self, ds):
        if self.cfg.algorithm in SERIES_ALGORITHMS:
            return ds
        with self.stage('prepare'):
            return _flatten(ds)

    def _cluster(self, data, k):
        cfg = self.cfg
        if cfg.algorithm == 'kmeans_dtw':
            return clustering.kmeans_dtw(data, k, cfg.seed, band=cfg.metric.dtw_band)
        if cfg.algorithm == 'kshape':
            return clustering.kshape(data, k, cfg.seed)
        return super()._cluster(data, k)


class LatentSpacePipeline(Pipeline):
    name = 'ls'

    def _embed(self, ds):
        with self.stage('prepare'):
            X = _flatten(ds)
        with self.stage('train'):
            self.model = build_dense_dae(X.shape[1], dataclasses.replace(self.cfg.dae, seed=self.cfg.seed))
            _, self.loss_history = train(self.model, X)
            return encode(self.model, X)


class ProjectionPipeline(Pipeline):
    name = 'pr'

    def _project(self, ds):
        cfg = self.cfg
        with self.stage('project'):
            if cfg.cache_dir:
                pm, _ = cached_projection(ds, cfg.p, cfg.seed, cfg.metric, cfg.cache_dir)
            else:
                pm = gen_proj_space(ds, select_pivots(ds, cfg.p, cfg.seed), cfg.metric)
            if cfg.normalize_projection:
                pm = normalize_projection(pm)
        self.projection = pm
        return pm

    def _embed(self, ds):
        return self._project(ds).flatten()


class ProjectionLatentPipeline(ProjectionPipeline):
    name = 'prls'

    def _embed(self, ds):
        cfg = self.cfg
        if cfg.raw_input:
            data, shape = ds, (ds.lengths[0], ds.n_variables, 1)
            meta = {'input': 'raw'}
        else:
            data = self._project(ds)
            shape = (cfg.p, ds.n_variables, 1)
            meta = {'input': 'projection', 'metric': cfg.metric.tag, 'band': cfg.metric.dtw_band,
                    'pivots': list(data.pivot_set.indices), 'seed': cfg.seed}
        meta['znormalize'] = cfg.normalizes()
        with self.stage('train'):
            self.model = build_cnn_gru(shape, dataclasses.replace(cfg.ae, seed=cfg.seed))
            self.model.meta = meta
            _, self.loss_history = train(self.model, data)
            return encode(self.model, data)


PIPELINE_CLASSES = {c.name: c for c in (OriginalSpacePipeline, LatentSpacePipeline,
                                        ProjectionPipeline, ProjectionLatentPipeline)}


def make_pipeline(cfg):
    cfg.validate()
    return PIPELINE_CLASSES[cfg.pipeline](cfg)


def run_pipeline(ds, cfg):
    return make_pipeline(cfg).run(ds)


def _run_one(args):
    ds, cfg = args
    return run_pipeline(ds, cfg)


def improvement(candidate, baselines):
    '''candidate - best baseline; negative values are kept'''
    baselines = [b for b in baselines if b is not None]
    if not baselines:
        raise ParameterError('improvement needs at least one baseline')
    return candidate - max(baselines)


@dataclass
class BenchmarkResult:
    config: PipelineConfig
    mean: float
    std: float
    reports: list
    improvement: float = None

    def to_dict(self):
        return {'config': self.config.to_dict(), 'mean': self.mean, 'std': self.std,
                'improvement': self.improvement, 'runs': [r.to_dict() for r in self.reports]}

    def timing(self):
        return [{'seed': r.config['seed'], 'times': r.times} for r in self.reports]


def benchmark(ds, cfg, runs=10, baselines=None, workers=None):
    '''runs seeded executions (seed, seed+1, ...); mean and sample std of accuracy'''
    if runs < 1:
        raise ParameterError('runs must be >= 1, got {}'.format(runs))
    if ds.labels is None:
        raise ConfigError('benchmarking needs a labeled dataset')
    cfg.validate()
    configs = [cfg.with_seed(cfg.seed + r) for r in range(runs)]
    reports = parallel_map(_run_one, [(ds, c) for c in configs], workers)
    accuracies = np.array([r.accuracy for r in reports])
    mean = float(accuracies.mean())
    std = float(accuracies.std(ddof=1)) if runs > 1 else 0.0
    gain = improvement(mean, baselines) if baselines else None
    logger.info('{} {} over {} runs: {:.4f} +- {:.4f}'.format(cfg.pipeline, cfg.algorithm, runs, mean, std))
    return BenchmarkResult(cfg, mean, std, reports, gain)


def sweep_pivots(ds, cfg, pivots=DEFAULT_SWEEP, runs=10, workers=None):
    '''Benchmark the same projection pipeline for each pivot count; {p: BenchmarkResult}'''
    if cfg.pipeline not in ('pr', 'prls'):
        raise ConfigError('pivot sweeps need a projection pipeline, not {}'.format(cfg.pipeline))
    results = {}
    for p in pivots:
        results[p] = benchmark(ds, dataclasses.replace(cfg, p=p), runs, workers=workers)
    return results


def time_projections(ds, p, metrics=('dtw', 'sbd'), seed=0, workers=None):
    '''Wall time of building the projection with each metric over one shared pivot set'''
    pivots = select_pivots(ds, p, seed)
    times = {}
    for metric in metrics:
        kind = metric if isinstance(metric, MetricKind) else MetricKind(metric)
        with timed(times, str(kind)):
            gen_proj_space(ds, pivots, kind, workers)
    logger.info('projection times: {}'.format(', '.join('{} {:.3f}s'.format(k, v) for k, v in times.items())))
    return times


def comparison_table(results):
    '''Rows of (pipeline, algorithm, mean, std) in percent, followed by the
    improvement of pr and prls over the best of os/ls for kmeans and spectral'''
    rows = []
    cells = {}
    for r in results:
        rows.append({'pipeline': r.config.pipeline, 'algorithm': r.config.algorithm,
                     'mean': 100.0 * r.mean, 'std': 100.0 * r.std})
        cells[(r.config.pipeline, r.config.algorithm)] = 100.0 * r.mean
    for candidate in ('pr', 'prls'):
        for algorithm in ('kmeans', 'spectral'):
            baselines = [cells.get((b, algorithm)) for b in ('os', 'ls')]
            if (candidate, algorithm) in cells and any(b is not None for b in baselines):
                rows.append({'pipeline': 'impr_{}'.format(candidate), 'algorithm': algorithm,
                             'mean': improvement(cells[(candidate, algorithm)], baselines), 'std': None})
    return rows


def write_report_json(document, path):
    dump_json(document, path)


def write_table_csv(rows, path):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['pipeline', 'algorithm', 'mean', 'std'])
        for row in rows:
            std = '' if row['std'] is None else '{:.1f}'.format(row['std'])
            writer.writerow([row['pipeline'], row['algorithm'], '{:.1f}'.format(row['mean']), std])
