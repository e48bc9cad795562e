'''Distance and similarity measures between time series: Euclidean, DTW and SBD.

SBD compares two sequences by their best coefficient-normalized cross-correlation
over all lags; the cross-correlation is computed with a radix-2 FFT so a pair
costs O(m log m) instead of O(m^2).
'''

from dataclasses import dataclass
from typing import NamedTuple
import numpy as np

from .utils import ShapeError, ParameterError, ConfigError, DegenerateInputError

METRICS = ('euclidean', 'dtw', 'sbd')
METRIC_CODES = {'euclidean': 0, 'dtw': 1, 'sbd': 2}


@dataclass(frozen=True)
class MetricKind:
    tag: str = 'sbd'
    dtw_band: int = None

    def __post_init__(self):
        if self.tag not in METRICS:
            raise ConfigError('unknown metric {!r}, expected one of {}'.format(self.tag, METRICS))
        if self.dtw_band is not None:
            if self.tag != 'dtw':
                raise ConfigError('a warping band only applies to dtw, not {}'.format(self.tag))
            if self.dtw_band < 0:
                raise ParameterError('dtw band must be >= 0, got {}'.format(self.dtw_band))

    @property
    def code(self):
        return METRIC_CODES[self.tag]

    @classmethod
    def from_code(cls, code, band=None):
        tag = {v: k for k, v in METRIC_CODES.items()}[code]
        return cls(tag, band if tag == 'dtw' else None)

    def distance(self, x, y):
        if self.tag == 'euclidean':
            return euclidean(x, y)
        if self.tag == 'dtw':
            return dtw(x, y, self.dtw_band)
        return sbd(x, y)

    def distance_many(self, X, y):
        '''Distances from every row of X to y'''
        if self.tag == 'euclidean':
            return euclidean_many(X, y)
        if self.tag == 'dtw':
            return dtw_many(X, y, self.dtw_band)
        return sbd_many(X, y)

    def __str__(self):
        if self.dtw_band is not None:
            return '{}[band={}]'.format(self.tag, self.dtw_band)
        return self.tag


def _as_sequence(x, name='x'):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ShapeError('{} is empty'.format(name))
    return x


def euclidean(x, y):
    x, y = _as_sequence(x), _as_sequence(y, 'y')
    if x.shape != y.shape:
        raise ShapeError('euclidean needs equal lengths, got {} and {}'.format(x.size, y.size))
    return float(np.sqrt(np.sum((x - y) ** 2)))


def euclidean_many(X, y):
    X, y = np.atleast_2d(X), _as_sequence(y, 'y')
    if X.shape[1] != y.size:
        raise ShapeError('euclidean needs equal lengths, got {} and {}'.format(X.shape[1], y.size))
    return np.sqrt(np.sum((X - y) ** 2, axis=1))


def _check_band(m, n, band):
    if band is None:
        return None
    if band < 0:
        raise ParameterError('dtw band must be >= 0, got {}'.format(band))
    if band < abs(m - n):
        raise ParameterError('band {} cannot align lengths {} and {}'.format(band, m, n))
    return band


def _diagonal_cells(d, m, n, band):
    '''Cells (i, j) with i + j = d inside the grid and the warping band'''
    i = np.arange(max(1, d - n), min(m, d - 1) + 1)
    j = d - i
    if band is not None:
        keep = np.abs(i - j) <= band
        i, j = i[keep], j[keep]
    return i, j


def dtw_many(X, y, band=None):
    '''DTW from every row of X to y, sweeping anti-diagonals so memory stays O(B*m)'''
    X, y = np.atleast_2d(np.asarray(X, dtype=np.float64)), _as_sequence(y, 'y')
    B, m = X.shape
    n = y.size
    if m == 0:
        raise ShapeError('x is empty')
    band = _check_band(m, n, band)
    prev2 = np.full((B, m + 1), np.inf)
    prev2[:, 0] = 0.0
    prev1 = np.full((B, m + 1), np.inf)
    for d in range(2, m + n + 1):
        cur = np.full((B, m + 1), np.inf)
        i, j = _diagonal_cells(d, m, n, band)
        if i.size:
            cost = (X[:, i - 1] - y[j - 1]) ** 2
            best = np.minimum(np.minimum(prev2[:, i - 1], prev1[:, i - 1]), prev1[:, i])
            cur[:, i] = cost + best
        prev2, prev1 = prev1, cur
    return prev1[:, m]


def dtw(x, y, band=None):
    '''Minimum accumulated squared difference over monotone alignments'''
    x, y = _as_sequence(x), _as_sequence(y, 'y')
    return float(dtw_many(x[None, :], y, band)[0])


def dtw_path(x, y, band=None):
    '''DTW distance plus the optimal alignment as a list of (i, j) index pairs'''
    x, y = _as_sequence(x), _as_sequence(y, 'y')
    m, n = x.size, y.size
    band = _check_band(m, n, band)
    D = np.full((m + 1, n + 1), np.inf)
    D[0, 0] = 0.0
    for d in range(2, m + n + 1):
        i, j = _diagonal_cells(d, m, n, band)
        if i.size:
            best = np.minimum(np.minimum(D[i - 1, j - 1], D[i - 1, j]), D[i, j - 1])
            D[i, j] = (x[i - 1] - y[j - 1]) ** 2 + best
    path = []
    i, j = m, n
    while i > 0 and j > 0:
        path.append((i - 1, j - 1))
        # prefer the diagonal on ties
        steps = ((D[i - 1, j - 1], i - 1, j - 1), (D[i - 1, j], i - 1, j), (D[i, j - 1], i, j - 1))
        _, i, j = min(steps, key=lambda s: s[0])
    path.reverse()
    return float(D[m, n]), path


def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


def fft(a, inverse=False):
    '''Iterative radix-2 transform over the last axis; length must be a power of two'''
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[-1]
    if n == 0 or n & (n - 1):
        raise ParameterError('fft length must be a power of two, got {}'.format(n))
    out = np.ascontiguousarray(a[..., _bit_reverse(n)])
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(out.shape[:-1] + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * twiddle
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    if inverse:
        out /= n
    return out


def ifft(a):
    return fft(a, inverse=True)


class CrossCorrelation(NamedTuple):
    '''All 2m-1 lags; values[m-1] is the zero-lag inner product'''
    values: np.ndarray
    m: int


def _pad_to(X, m):
    return np.pad(X, [(0, 0)] * (X.ndim - 1) + [(0, m - X.shape[-1])])


def _cross_correlate_many(X, y):
    m = max(X.shape[1], y.size)
    size = next_pow2(2 * m - 1)
    fx = fft(_pad_to(X, size))
    fy = fft(_pad_to(y[None, :], size))
    cc = ifft(fx * np.conj(fy)).real
    cc = np.concatenate((cc[:, size - (m - 1):], cc[:, :m]), axis=1)
    return cc, m


def cross_correlate(x, y):
    x, y = _as_sequence(x), _as_sequence(y, 'y')
    cc, m = _cross_correlate_many(x[None, :], y)
    return CrossCorrelation(cc[0], m)


def _ncc(X, y):
    '''Coefficient-normalized cross-correlation of every row of X against y'''
    X, y = np.atleast_2d(np.asarray(X, dtype=np.float64)), _as_sequence(y, 'y')
    norms = np.sqrt(np.sum(X ** 2, axis=1)) * np.sqrt(np.sum(y ** 2))
    if np.any(norms == 0):
        raise DegenerateInputError('SBD is undefined for an all-zero sequence')
    cc, m = _cross_correlate_many(X, y)
    return cc / norms[:, None], m


def sbd_many(X, y):
    ncc, _ = _ncc(X, y)
    return np.clip(1.0 - ncc.max(axis=1), 0.0, 2.0)


def sbd(x, y):
    x = _as_sequence(x)
    return float(sbd_many(x[None, :], y)[0])


def sbd_shift(x, y):
    '''SBD together with y shifted (zero-filled) to its best alignment with x'''
    x, y = _as_sequence(x), _as_sequence(y, 'y')
    ncc, m = _ncc(x[None, :], y)
    best = int(np.argmax(ncc[0]))
    shift = best - (m - 1)
    y = np.pad(y, (0, m - y.size))
    if shift >= 0:
        aligned = np.concatenate((np.zeros(shift), y[:m - shift]))
    else:
        aligned = np.concatenate((y[-shift:], np.zeros(-shift)))
    return float(np.clip(1.0 - ncc[0, best], 0.0, 2.0)), aligned


def sample_distance(a, b, kind):
    '''Per-variable distance vector of length W = V'''
    if a.n_variables != b.n_variables:
        raise ShapeError('samples {} and {} have {} and {} variables'.format(
            a.id, b.id, a.n_variables, b.n_variables))
    return np.array([kind.distance(a.values[v], b.values[v]) for v in range(a.n_variables)])
