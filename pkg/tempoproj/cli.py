import os, sys, json, time, argparse, logging, datetime, dataclasses
from dataclasses import dataclass
from multiprocessing import freeze_support
import numpy as np
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from .dataset import load_dataset, znormalize_dataset, describe
from .metrics import MetricKind
from .projection import PivotSet, gen_proj_space, cached_projection
from .autoencoder import (CnnGruConfig, DenseDaeConfig, build_cnn_gru, train, encode, save_checkpoint,
                          load_checkpoint, write_loss_history)
from .clustering import jacobi_eigen, write_assignment, read_assignment, NOISE
from .evaluation import (PipelineConfig, PIPELINES, SERIES_ALGORITHMS, run_pipeline, benchmark,
                         sweep_pivots, time_projections, comparison_table, write_report_json,
                         write_table_csv)
from .utils import (ConfigError, ParameterError, StageError, configure_logging, config_digest,
                    ensure_dir, dump_json)

logger = logging.getLogger(__name__)

COMMANDS = ('inspect', 'project', 'train', 'cluster', 'benchmark', 'plot')
ALGORITHM_FLAGS = ('kmeans', 'kmeans-dtw', 'kshape', 'spectral', 'dbscan')
SVG_SALT = 'tempoproj'


@dataclass(frozen=True)
class CliConfig:
    '''Validated command line; everything but the output location feeds the run hash'''
    command: str
    data: str = None
    format: str = 'auto'
    metric: str = 'sbd'
    band: int = None
    pivots: int = 16
    seed: int = 0
    runs: int = 10
    pipelines: tuple = ('prls',)
    algorithms: tuple = ('kmeans',)
    k: int = None
    epochs: int = None
    eps: object = 'auto'
    min_pts: int = 4
    raw_input: bool = False
    znormalize: bool = None
    sweep_pivots: tuple = ()
    timing: bool = False
    latent: str = None
    labels: str = None
    checkpoint: str = None
    out: str = 'runs'

    @classmethod
    def from_args(cls, args):
        fields = {f.name for f in dataclasses.fields(cls)}
        values = {k: v for k, v in vars(args).items() if k in fields and v is not None}
        if 'pipelines' in values:
            values['pipelines'] = tuple(values['pipelines'])
        if 'algorithms' in values:
            values['algorithms'] = tuple(a.replace('-', '_') for a in values['algorithms'])
        if 'sweep_pivots' in values:
            values['sweep_pivots'] = _parse_int_list(values['sweep_pivots'])
        if 'eps' in values and values['eps'] != 'auto':
            try:
                values['eps'] = float(values['eps'])
            except ValueError:
                raise ConfigError("--eps must be a number or 'auto', got {!r}".format(values['eps']))
        return cls(**values)

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError('unknown command {!r}'.format(self.command))
        if self.command in ('inspect', 'project', 'train', 'cluster', 'benchmark') and not self.data:
            raise ConfigError('{} needs --data'.format(self.command))
        if self.pivots < 1:
            raise ParameterError('--pivots must be >= 1, got {}'.format(self.pivots))
        if self.runs < 1:
            raise ParameterError('--runs must be >= 1, got {}'.format(self.runs))
        if self.epochs is not None and self.epochs < 1:
            raise ParameterError('--epochs must be >= 1, got {}'.format(self.epochs))
        if any(p < 1 for p in self.sweep_pivots):
            raise ParameterError('--sweep-pivots values must be >= 1, got {}'.format(self.sweep_pivots))
        self.metric_kind()
        for pipeline in self.pipelines:
            for algorithm in self.algorithms:
                if algorithm in SERIES_ALGORITHMS and pipeline != 'os':
                    continue
                self.pipeline_config(pipeline, algorithm).validate()
        return self

    def metric_kind(self):
        return MetricKind(self.metric, self.band)

    def pipeline_config(self, pipeline, algorithm):
        ae = CnnGruConfig(seed=self.seed)
        dae = DenseDaeConfig(seed=self.seed)
        if self.epochs is not None:
            ae = dataclasses.replace(ae, epochs=self.epochs)
            dae = dataclasses.replace(dae, epochs=self.epochs)
        return PipelineConfig(pipeline=pipeline, algorithm=algorithm, metric=self.metric_kind(),
                              p=self.pivots, k=self.k, seed=self.seed, znormalize=self.znormalize,
                              raw_input=self.raw_input, eps=self.eps, min_pts=self.min_pts,
                              ae=ae, dae=dae, cache_dir=self.cache_dir)

    @property
    def cache_dir(self):
        return os.path.join(self.out, 'cache')

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop('out')
        return d

    def run_dir(self):
        return ensure_dir(os.path.join(self.out, '{}-{}'.format(self.command, config_digest(self.to_dict()))))


def _parse_int_list(text):
    try:
        return tuple(int(x) for x in str(text).split(',') if x.strip())
    except ValueError:
        raise ConfigError('expected a comma separated list of integers, got {!r}'.format(text))


def _load(cfg):
    ds = load_dataset(cfg.data, cfg.format, cfg.seed)
    return znormalize_dataset(ds) if cfg.pipeline_config('prls', 'kmeans').normalizes() else ds


def cmd_inspect(cfg):
    summary = describe(load_dataset(cfg.data, cfg.format, cfg.seed))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def cmd_project(cfg):
    ds = _load(cfg)
    start = time.perf_counter()
    pm, hit = cached_projection(ds, cfg.pivots, cfg.seed, cfg.metric_kind(), cfg.cache_dir)
    elapsed = time.perf_counter() - start
    n, p, w = pm.shape
    print('N={} p={} W={} metric={} elapsed={:.3f}s{}'.format(n, p, w, pm.metric, elapsed,
                                                             ' (cached)' if hit else ''))
    return pm, hit


def cmd_train(cfg):
    '''Train the CNN-GRU autoencoder; writes checkpoint, loss history and latent codes'''
    ds = _load(cfg)
    pcfg = cfg.pipeline_config('prls', 'kmeans')
    if cfg.raw_input:
        data, shape = ds, (int(ds.lengths[0]), ds.n_variables, 1)
        meta = {'input': 'raw'}
    else:
        data, _ = cached_projection(ds, cfg.pivots, cfg.seed, pcfg.metric, cfg.cache_dir)
        shape = (cfg.pivots, ds.n_variables, 1)
        meta = {'input': 'projection', 'metric': pcfg.metric.tag, 'band': pcfg.metric.dtw_band,
                'pivots': list(data.pivot_set.indices), 'seed': cfg.seed}
    meta['znormalize'] = pcfg.normalizes()
    model = build_cnn_gru(shape, pcfg.ae)
    model.meta = meta
    _, history = train(model, data)
    run_dir = cfg.run_dir()
    save_checkpoint(model, os.path.join(run_dir, 'model.tpck'))
    write_loss_history(history, os.path.join(run_dir, 'loss_history.csv'))
    np.savetxt(os.path.join(run_dir, 'latent.csv'), encode(model, data), delimiter=',', fmt='%.17g')
    print('final loss {:.6g} after {} epochs -> {}'.format(history[-1], len(history), run_dir))
    return run_dir


def _write_timing(document, path):
    document = dict(document, written=datetime.datetime.now().isoformat())
    dump_json(document, path)


def cmd_cluster(cfg):
    if len(cfg.pipelines) != 1 or len(cfg.algorithms) != 1:
        raise ConfigError('cluster takes one --pipeline and one --algorithm')
    ds = load_dataset(cfg.data, cfg.format, cfg.seed)
    report = run_pipeline(ds, cfg.pipeline_config(cfg.pipelines[0], cfg.algorithms[0]))
    run_dir = cfg.run_dir()
    write_assignment(report.assignment, os.path.join(run_dir, 'assignment.csv'),
                     [s.id for s in ds])
    write_report_json({'dataset': describe(ds), 'config': report.config, 'result': report.to_dict()},
                      os.path.join(run_dir, 'report.json'))
    _write_timing({'times': report.times}, os.path.join(run_dir, 'timing.json'))
    accuracy = 'n/a' if report.accuracy is None else '{:.4f}'.format(report.accuracy)
    print('{} {}: k={} accuracy={} -> {}'.format(cfg.pipelines[0], cfg.algorithms[0],
                                                 report.assignment.k, accuracy, run_dir))
    return report


def cmd_benchmark(cfg):
    ds = load_dataset(cfg.data, cfg.format, cfg.seed)
    if ds.labels is None:
        raise ConfigError('benchmark needs a labeled dataset')
    cells = [(p, a) for p in cfg.pipelines for a in cfg.algorithms]
    legal = [(p, a) for p, a in cells if a not in SERIES_ALGORITHMS or p == 'os']
    for p, a in sorted(set(cells) - set(legal)):
        logger.warning('skipping {} with {}: it only runs on the original series'.format(p, a))
    if not legal:
        raise ConfigError('no legal pipeline/algorithm combination requested')

    results = [benchmark(ds, cfg.pipeline_config(p, a), cfg.runs) for p, a in legal]
    by_cell = {(r.config.pipeline, r.config.algorithm): r for r in results}
    for r in results:
        if r.config.pipeline in ('pr', 'prls'):
            baselines = [by_cell[(b, r.config.algorithm)].mean
                         for b in ('os', 'ls') if (b, r.config.algorithm) in by_cell]
            if baselines:
                r.improvement = r.mean - max(baselines)

    report = {'dataset': describe(ds), 'runs': cfg.runs, 'results': [r.to_dict() for r in results]}
    timing = {'results': [{'pipeline': r.config.pipeline, 'algorithm': r.config.algorithm,
                           'runs': r.timing()} for r in results]}
    if cfg.sweep_pivots:
        sweep = []
        for p, a in legal:
            if p not in ('pr', 'prls'):
                continue
            for pivots, r in sweep_pivots(ds, cfg.pipeline_config(p, a), cfg.sweep_pivots, cfg.runs).items():
                sweep.append({'pipeline': p, 'algorithm': a, 'p': pivots, 'mean': r.mean, 'std': r.std})
        report['sweep'] = sweep

    run_dir = cfg.run_dir()
    write_report_json(report, os.path.join(run_dir, 'report.json'))
    rows = comparison_table(results)
    write_table_csv(rows, os.path.join(run_dir, 'table.csv'))
    if cfg.sweep_pivots:
        write_table_csv([{'pipeline': '{}_p{}'.format(s['pipeline'], s['p']), 'algorithm': s['algorithm'],
                          'mean': 100.0 * s['mean'], 'std': 100.0 * s['std']} for s in report['sweep']],
                        os.path.join(run_dir, 'sweep.csv'))
    if cfg.timing:
        kinds = (MetricKind('dtw', cfg.band), MetricKind('sbd'))
        timing['projection'] = time_projections(ds, cfg.pivots, kinds, cfg.seed)
        print('projection time: {}'.format(', '.join(
            '{} {:.3f}s'.format(k, v) for k, v in sorted(timing['projection'].items()))))
    _write_timing(timing, os.path.join(run_dir, 'timing.json'))
    for row in rows:
        std = '' if row['std'] is None else ' +- {:.1f}'.format(row['std'])
        print('{:<10} {:<11} {:.1f}{}'.format(row['pipeline'], row['algorithm'], row['mean'], std))
    return report


def pca_2d(Z):
    '''Project rows onto the two leading principal axes'''
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ConfigError('plotting needs a latent matrix with at least 2 columns, got shape {}'.format(Z.shape))
    centered = Z - Z.mean(axis=0)
    cov = centered.T @ centered / max(1, Z.shape[0] - 1)
    _, vectors = jacobi_eigen(cov)
    return centered @ vectors[:, :2]


def write_scatter_svg(points, labels, path, title=None):
    '''Deterministic SVG scatter, one color per label'''
    with plt.rc_context({'svg.hashsalt': SVG_SALT}):
        fig, ax = plt.subplots(figsize=(6, 5))
        if labels is None:
            ax.scatter(points[:, 0], points[:, 1], s=12, color='C0')
        else:
            labels = np.asarray(labels)
            groups = np.unique(labels)
            cmap = plt.get_cmap('tab10' if groups.size <= 10 else 'tab20')
            for i, label in enumerate(groups):
                mask = labels == label
                color = 'lightgray' if label == NOISE else cmap(i % cmap.N)
                ax.scatter(points[mask, 0], points[mask, 1], s=12, color=color, label=str(label))
            ax.legend(loc='best', fontsize='small', title='cluster')
        ax.set_xlabel('PC 1')
        ax.set_ylabel('PC 2')
        if title:
            ax.set_title(title)
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
    return path


def _latent_from_checkpoint(cfg):
    if not cfg.data:
        raise ConfigError('plotting a checkpoint needs --data')
    model = load_checkpoint(cfg.checkpoint)
    ds = load_dataset(cfg.data, cfg.format, cfg.seed)
    meta = model.meta
    if meta.get('znormalize', True):
        ds = znormalize_dataset(ds)
    if meta.get('input') == 'projection':
        metric = MetricKind(meta['metric'], meta.get('band'))
        data = gen_proj_space(ds, PivotSet(meta['pivots'], meta['seed']), metric)
    else:
        data = ds
    return encode(model, data), ds.labels


def cmd_plot(cfg):
    labels = None
    if cfg.latent:
        Z = np.loadtxt(cfg.latent, delimiter=',', ndmin=2)
    elif cfg.checkpoint:
        Z, labels = _latent_from_checkpoint(cfg)
    else:
        raise ConfigError('plot needs --latent or --checkpoint')
    if cfg.labels:
        labels = read_assignment(cfg.labels).labels
        if labels.size != Z.shape[0]:
            raise ConfigError('{} has {} labels for {} latent rows'.format(cfg.labels, labels.size, Z.shape[0]))
    points = pca_2d(Z)
    path = os.path.join(cfg.run_dir(), 'latent.svg')
    write_scatter_svg(points, labels, path)
    print('wrote {}'.format(path))
    return path


HANDLERS = {'inspect': cmd_inspect, 'project': cmd_project, 'train': cmd_train,
            'cluster': cmd_cluster, 'benchmark': cmd_benchmark, 'plot': cmd_plot}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--data', help='UCR file, multivariate directory or generator JSON')
    common.add_argument('--format', choices=('auto', 'ucr', 'multivariate', 'synthetic'), default='auto')
    common.add_argument('--seed', type=int, default=0)
    common.add_argument('--out', default='runs', help='directory receiving run directories and caches')
    common.add_argument('--debug', help='enable debug logging', action='store_true')

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument('--metric', choices=('euclidean', 'dtw', 'sbd'), default='sbd')
    model.add_argument('--band', type=int, help='Sakoe-Chiba window for dtw')
    model.add_argument('--pivots', type=int, default=16)
    model.add_argument('--epochs', type=int, help='training epochs (default 200)')
    model.add_argument('--raw-input', action='store_true', dest='raw_input',
                       help='train the CNN-GRU autoencoder on raw series instead of projections')
    model.add_argument('--no-znorm', action='store_false', dest='znormalize', default=None,
                       help='skip per-variable z-normalization')

    clusters = argparse.ArgumentParser(add_help=False)
    clusters.add_argument('--k', type=int, help='number of clusters (default: number of classes)')
    clusters.add_argument('--eps', default='auto', help="dbscan radius or 'auto'")
    clusters.add_argument('--min-pts', type=int, default=4, dest='min_pts')

    parser = argparse.ArgumentParser(prog='tempoproj',
                                     description='Cluster time series through pivot projections and autoencoders')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('inspect', parents=[common], help='summarize a dataset')
    sub.add_parser('project', parents=[common, model], help='build (or reuse) a pivot projection')
    sub.add_parser('train', parents=[common, model], help='train the CNN-GRU autoencoder')
    p = sub.add_parser('cluster', parents=[common, model, clusters], help='run one pipeline')
    p.add_argument('--pipeline', choices=PIPELINES, default=['prls'], dest='pipelines', nargs=1)
    p.add_argument('--algorithm', choices=ALGORITHM_FLAGS, default=['kmeans'], dest='algorithms', nargs=1)
    p = sub.add_parser('benchmark', parents=[common, model, clusters], help='repeated runs and comparison table')
    p.add_argument('--pipeline', choices=PIPELINES, default=list(PIPELINES), dest='pipelines', nargs='+')
    p.add_argument('--algorithm', choices=ALGORITHM_FLAGS, default=['kmeans'], dest='algorithms', nargs='+')
    p.add_argument('--runs', type=int, default=10)
    p.add_argument('--sweep-pivots', dest='sweep_pivots', help='comma separated pivot counts, e.g. 4,8,16,32')
    p.add_argument('--timing', action='store_true',
                   help='also time building the projection with dtw and sbd (written to timing.json)')
    p = sub.add_parser('plot', parents=[common], help='PCA scatter of latent codes as SVG')
    p.add_argument('--latent', help='CSV latent matrix, as written by train')
    p.add_argument('--checkpoint', help='checkpoint to encode --data with')
    p.add_argument('--labels', help='assignment CSV (sample_id,cluster) used for colors')
    return parser


def main(argv=None):
    freeze_support()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    configure_logging(args.debug)
    try:
        cfg = CliConfig.from_args(args).validate()
        HANDLERS[cfg.command](cfg)
    except (ConfigError, ParameterError) as e:
        logger.error(str(e))
        return 2
    except StageError as e:
        logger.error(str(e))
        return 2 if isinstance(e.cause, (ConfigError, ParameterError)) else 1
    except Exception as e:
        if args.debug:
            logger.exception('{} failed'.format(args.command))
        else:
            logger.error('{}: {}'.format(type(e).__name__, e))
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
