'''Loading, validating, normalizing and synthesizing labeled time-series datasets'''

import os, csv, json, glob, logging
from dataclasses import dataclass, field
import numpy as np

from .utils import (FormatError, ParseError, EmptyDatasetError, ShapeError,
                    LabelError, ConfigError, ParameterError, array_digest)

logger = logging.getLogger(__name__)

LABELS_FILE = 'labels.csv'
WAVEFORMS = ('sine', 'square', 'trend')


@dataclass(frozen=True)
class TimeSeries:
    '''One sample: V variables (rows) by T timesteps (columns)'''
    values: np.ndarray
    id: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, ndmin=2)
        if values.ndim != 2:
            raise ShapeError('time series must be V x T, got shape {}'.format(values.shape))
        if values.shape[0] < 1 or values.shape[1] < 2:
            raise ShapeError('time series {} needs V >= 1 and T >= 2, got {}'.format(self.id, values.shape))
        if not np.all(np.isfinite(values)):
            raise ParseError('time series {} contains NaN or Inf'.format(self.id))
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def n_variables(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    labels: np.ndarray = None
    k_hint: int = None
    name: str = 'dataset'

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, 'samples', samples)
        if len(samples) == 0:
            raise EmptyDatasetError('dataset {} has no samples'.format(self.name))
        v = samples[0].n_variables
        for s in samples:
            if s.n_variables != v:
                raise ShapeError('sample {} has {} variables, expected {}'.format(s.id, s.n_variables, v))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (len(samples),):
                raise LabelError('got {} labels for {} samples'.format(labels.size, len(samples)))
            if labels.min() != 0 or not np.array_equal(np.unique(labels), np.arange(labels.max() + 1)):
                raise LabelError('labels must be contiguous from 0')
            labels.setflags(write=False)
            object.__setattr__(self, 'labels', labels)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return self.samples.__iter__()

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def n_variables(self):
        return self.samples[0].n_variables

    @property
    def lengths(self):
        return np.array([s.length for s in self.samples])

    @property
    def equal_length(self):
        lengths = self.lengths
        return bool(np.all(lengths == lengths[0]))

    def to_array(self):
        '''N x V x T array; only defined for equal-length datasets'''
        if not self.equal_length:
            raise ShapeError('dataset {} has unequal lengths {}..{}'.format(
                self.name, self.lengths.min(), self.lengths.max()))
        return np.stack([s.values for s in self.samples])

    def content_hash(self):
        arrays = [s.values for s in self.samples]
        if self.labels is not None:
            arrays.append(self.labels)
        return array_digest(*arrays)

    def with_samples(self, samples):
        return Dataset(tuple(samples), self.labels, self.k_hint, self.name)


def _remap_labels(raw):
    '''Map arbitrary class ids to dense 0..k-1 ids, ordered by the original value'''
    classes = sorted(set(raw))
    lookup = {c: i for i, c in enumerate(classes)}
    return np.array([lookup[r] for r in raw], dtype=np.int64), len(classes)


def _detect_delimiter(line):
    if '\t' in line:
        return '\t'
    if ',' in line:
        return ','
    # some archive releases are whitespace separated
    return None


def _parse_cell(cell, line_no):
    try:
        return float(cell)
    except ValueError:
        raise ParseError('line {}: cannot parse {!r} as a number'.format(line_no, cell))


def load_ucr(path, delimiter='auto'):
    '''Read a UCR archive file: one sample per line, class label first'''
    if not os.path.exists(path):
        raise FileNotFoundError('Could not find UCR file {}'.format(path))
    delims = {'comma': ',', 'tab': '\t', 'auto': 'auto'}
    if delimiter not in delims:
        raise ConfigError('unknown delimiter {!r}'.format(delimiter))
    delim = delims[delimiter]

    with open(path, encoding='utf-8') as f:
        lines = [(i + 1, l.strip()) for i, l in enumerate(f) if l.strip()]
    if not lines:
        raise EmptyDatasetError('{} is empty'.format(path))
    if delim == 'auto':
        delim = _detect_delimiter(lines[0][1])

    raw_labels, rows, width = [], [], None
    for line_no, line in lines:
        cells = [c for c in line.split(delim)] if delim else line.split()
        if width is None:
            width = len(cells)
        if len(cells) != width:
            raise FormatError('line {}: expected {} columns, found {}'.format(line_no, width, len(cells)))
        if width < 3:
            raise FormatError('line {}: need a label and at least 2 values'.format(line_no))
        label = _parse_cell(cells[0], line_no)
        raw_labels.append(int(label) if label.is_integer() else label)
        rows.append([_parse_cell(c, line_no) for c in cells[1:]])

    labels, k = _remap_labels(raw_labels)
    samples = [TimeSeries(np.array(r)[None, :], i) for i, r in enumerate(rows)]
    name = os.path.splitext(os.path.basename(path))[0]
    logger.info('loaded {}: N={} T={} k={}'.format(name, len(samples), width - 1, k))
    return Dataset(tuple(samples), labels, k, name)


def save_ucr(ds, path, delimiter='comma'):
    '''Write a univariate dataset in UCR format; values keep full precision'''
    if ds.n_variables != 1:
        raise ShapeError('UCR format holds univariate data, dataset has V={}'.format(ds.n_variables))
    delim = {'comma': ',', 'tab': '\t'}[delimiter]
    labels = ds.labels if ds.labels is not None else np.zeros(len(ds), dtype=np.int64)
    with open(path, 'w', encoding='utf-8') as f:
        for s, label in zip(ds, labels):
            f.write(delim.join([str(int(label))] + [repr(float(v)) for v in s.values[0]]) + '\n')


def _read_matrix(path):
    rows = []
    with open(path, encoding='utf-8', newline='') as f:
        for line_no, row in enumerate(csv.reader(f), 1):
            if not row:
                continue
            rows.append([_parse_cell(c, line_no) for c in row])
    if not rows:
        raise EmptyDatasetError('{} is empty'.format(path))
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise FormatError('{} row {}: expected {} columns, found {}'.format(path, i + 1, width, len(r)))
    return np.array(rows)


def load_multivariate(directory):
    '''Read one CSV per sample (rows = variables) plus labels.csv (filename,label)'''
    if not os.path.isdir(directory):
        raise FileNotFoundError('Could not find dataset directory {}'.format(directory))
    label_path = os.path.join(directory, LABELS_FILE)
    if not os.path.exists(label_path):
        raise FileNotFoundError('Could not find {} in {}'.format(LABELS_FILE, directory))
    mapping = {}
    with open(label_path, encoding='utf-8', newline='') as f:
        for row in csv.reader(f):
            if len(row) >= 2 and row[0].strip():
                mapping[row[0].strip()] = row[1].strip()

    files = sorted(f for f in glob.glob(os.path.join(directory, '*.csv'))
                   if os.path.basename(f) != LABELS_FILE)
    if not files:
        raise EmptyDatasetError('no sample files in {}'.format(directory))
    samples, raw_labels, v = [], [], None
    for i, path in enumerate(files):
        fname = os.path.basename(path)
        if fname not in mapping:
            raise LabelError('no label entry for {}'.format(fname))
        values = _read_matrix(path)
        if v is None:
            v = values.shape[0]
        elif values.shape[0] != v:
            raise ShapeError('{} has {} variables, expected {}'.format(fname, values.shape[0], v))
        samples.append(TimeSeries(values, i))
        raw_labels.append(mapping[fname])

    labels, k = _remap_labels(raw_labels)
    name = os.path.basename(os.path.normpath(directory))
    logger.info('loaded {}: N={} V={} k={}'.format(name, len(samples), v, k))
    return Dataset(tuple(samples), labels, k, name)


def save_multivariate(ds, directory):
    os.makedirs(directory, exist_ok=True)
    width = len(str(len(ds)))
    labels = ds.labels if ds.labels is not None else np.zeros(len(ds), dtype=np.int64)
    with open(os.path.join(directory, LABELS_FILE), 'w', encoding='utf-8', newline='') as lf:
        writer = csv.writer(lf)
        for i, (s, label) in enumerate(zip(ds, labels)):
            fname = 'sample_{:0{}d}.csv'.format(i, width)
            with open(os.path.join(directory, fname), 'w', encoding='utf-8', newline='') as f:
                csv.writer(f).writerows([[repr(float(v)) for v in row] for row in s.values])
            writer.writerow([fname, int(label)])


def znormalize(ts):
    '''Per-variable z-normalization with population std; constant rows become zeros'''
    x = ts.values
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    centered = x - mu
    # rounding leaves ~1e-17 spread on constant rows
    floor = 1e-12 * np.maximum(1.0, np.abs(x).max(axis=1, keepdims=True))
    out = np.divide(centered, sd, out=np.zeros_like(centered), where=sd > floor)
    return TimeSeries(out, ts.id)


def znormalize_dataset(ds):
    return ds.with_samples(znormalize(s) for s in ds)


def _waveform(kind, t, phase, cycles, amplitude):
    angle = 2 * np.pi * (cycles * t + phase)
    if kind == 'sine':
        return amplitude * np.sin(angle)
    if kind == 'square':
        return amplitude * np.where(np.sin(angle) >= 0, 1.0, -1.0)
    # trend: ramp over the window, phase shifts its origin
    return amplitude * (2.0 * ((t + phase) % 1.0) - 1.0)


def synth_generate(spec, seed):
    '''Deterministic labeled dataset from a generator spec dict (or JSON text)'''
    if isinstance(spec, str):
        spec = json.loads(spec)
    try:
        classes = spec['classes']
        n_per_class = int(spec['n_per_class'])
        length = int(spec['length'])
    except KeyError as e:
        raise ConfigError('generator spec is missing {}'.format(e))
    if n_per_class < 1:
        raise ParameterError('n_per_class must be >= 1, got {}'.format(n_per_class))
    if length < 8:
        raise ParameterError('length must be >= 8, got {}'.format(length))
    if not classes:
        raise ConfigError('generator spec has no classes')
    for c in classes:
        if c.get('waveform') not in WAVEFORMS:
            raise ConfigError('unknown waveform {!r}, expected one of {}'.format(c.get('waveform'), WAVEFORMS))

    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    samples, labels = [], []
    for label, c in enumerate(classes):
        noise_std = float(c.get('noise_std', 0.0))
        jitter = float(c.get('phase_jitter', 0.0))
        cycles = float(c.get('cycles', 2.0))
        amplitude = float(c.get('amplitude', 1.0))
        for _ in range(n_per_class):
            phase = rng.uniform(-jitter, jitter) if jitter > 0 else 0.0
            x = _waveform(c['waveform'], t, phase, cycles, amplitude)
            if noise_std > 0:
                x = x + rng.normal(0.0, noise_std, size=length)
            samples.append(TimeSeries(x[None, :], len(samples)))
            labels.append(label)
    return Dataset(tuple(samples), np.array(labels), len(classes), spec.get('name', 'synthetic'))


def load_synthetic(path, seed):
    with open(path, encoding='utf-8') as f:
        return synth_generate(json.load(f), seed)


def load_dataset(path, fmt='auto', seed=0):
    '''Dispatch on format: ucr, multivariate, synthetic or auto'''
    if fmt == 'auto':
        if os.path.isdir(path):
            fmt = 'multivariate'
        elif path.endswith('.json'):
            fmt = 'synthetic'
        else:
            fmt = 'ucr'
    if fmt == 'ucr':
        return load_ucr(path)
    if fmt == 'multivariate':
        return load_multivariate(path)
    if fmt == 'synthetic':
        return load_synthetic(path, seed)
    raise ConfigError('unknown dataset format {!r}'.format(fmt))


def describe(ds):
    lengths = ds.lengths
    summary = {'name': ds.name,
               'n': len(ds),
               'variables': ds.n_variables,
               'min_length': int(lengths.min()),
               'max_length': int(lengths.max()),
               'k_hint': ds.k_hint}
    if ds.labels is not None:
        summary['class_counts'] = np.bincount(ds.labels).tolist()
    return summary
