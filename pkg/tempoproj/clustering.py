'''Clustering back-ends: k-means (Euclidean and DTW), k-shape, spectral and DBSCAN,
plus the Jacobi eigensolver shared by spectral clustering, k-shape and the PCA plot.

Every algorithm is deterministic for a fixed (input, seed, parameters).
'''

import csv, logging
from dataclasses import dataclass
import numpy as np

from .metrics import dtw_many, dtw, dtw_path, sbd_many, sbd_shift
from .utils import (ParameterError, ShapeError, UnsupportedInputError,
                    DegenerateInputError, NumericalError, FormatError)

logger = logging.getLogger(__name__)

NOISE = -1
MAX_SWEEPS = 100
DBA_ITERATIONS = 10
N_INIT = 10


@dataclass(frozen=True)
class Assignment:
    labels: np.ndarray
    k: int
    inertia_or_score: float = None
    history: tuple = ()

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ShapeError('labels must be one-dimensional, got shape {}'.format(labels.shape))
        clustered = labels[labels != NOISE]
        if np.any(labels < NOISE) or np.any(clustered >= self.k):
            raise ParameterError('labels must lie in [0, {}) or be {}'.format(self.k, NOISE))
        labels.setflags(write=False)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'history', tuple(float(h) for h in self.history))

    def __len__(self):
        return self.labels.size

    @property
    def n_noise(self):
        return int(np.sum(self.labels == NOISE))


def _compact(labels):
    '''Relabel non-noise ids to 0..k-1 keeping their order; returns (labels, k)'''
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full(labels.shape, NOISE, dtype=np.int64)
    clustered = labels != NOISE
    ids, inverse = np.unique(labels[clustered], return_inverse=True)
    out[clustered] = inverse
    return out, ids.size


class SymmetricMatrix:
    '''Order-n symmetric matrix kept as its packed upper triangle'''
    def __init__(self, values):
        a = np.asarray(values, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError('symmetric matrix must be square, got shape {}'.format(a.shape))
        if not np.all(np.isfinite(a)):
            raise ParameterError('symmetric matrix has non-finite entries')
        self.n = a.shape[0]
        self.upper = a[np.triu_indices(self.n)]

    def __len__(self):
        return self.n

    def to_dense(self):
        out = np.zeros((self.n, self.n))
        out[np.triu_indices(self.n)] = self.upper
        return out + np.triu(out, 1).T


def _round_robin(n):
    '''n-1 rounds (n rounded up to even) of disjoint index pairs covering every pair once'''
    m = n + n % 2
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        if pairs:
            p, q = np.array(pairs).T
            rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a):
    off = a - np.diag(np.diag(a))
    return np.sqrt(np.sum(off * off))


def jacobi_eigen(m):
    '''Eigen-decomposition by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in rounds of disjoint pairs
    that are rotated together. Returns (eigenvalues descending, eigenvectors as
    columns); each eigenvector's largest-magnitude entry is positive.'''
    if not isinstance(m, SymmetricMatrix):
        m = SymmetricMatrix(m)
    a = m.to_dense()
    n = m.n
    v = np.eye(n)
    tol = 1e-10 * max(1.0, np.sqrt(np.sum(a * a)))
    rounds = _round_robin(n)
    for sweep in range(MAX_SWEEPS + 1):
        if _off_norm(a) < tol:
            break
        if sweep == MAX_SWEEPS:
            raise NumericalError('jacobi did not converge after {} sweeps (off-diagonal norm {:.3g})'.format(
                MAX_SWEEPS, _off_norm(a)))
        for p, q in rounds:
            apq = a[p, q]
            rotate = np.abs(apq) > 1e-300
            if not np.any(rotate):
                continue
            # theta overflows to inf for tiny apq; t then rounds to 0
            with np.errstate(over='ignore'):
                theta = np.divide(a[q, q] - a[p, p], 2.0 * apq, out=np.zeros_like(apq), where=rotate)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0] = 1.0
            t[~rotate] = 0.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap, aq = a[:, p], a[:, q]
            a[:, p], a[:, q] = ap * c - aq * s, ap * s + aq * c
            ap, aq = a[p, :], a[q, :]
            a[p, :], a[q, :] = c[:, None] * ap - s[:, None] * aq, s[:, None] * ap + c[:, None] * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = vp * c - vq * s, vp * s + vq * c
    logger.debug('jacobi converged after {} sweeps for n={}'.format(sweep, n))
    w = np.diag(a).copy()
    order = np.argsort(-w, kind='stable')
    w, v = w[order], v[:, order]
    signs = np.sign(v[np.argmax(np.abs(v), axis=0), np.arange(n)])
    signs[signs == 0] = 1.0
    return w, v * signs


def _as_points(points):
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] < 1:
        raise ShapeError('points must be an N x d matrix, got shape {}'.format(X.shape))
    return X


def _check_k(k, n):
    if k < 1 or k > n:
        raise ParameterError('k must be in [1, {}], got {}'.format(n, k))


def pairwise_sq_distances(X):
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _seed_plus_plus(n, k, rng, distances_to):
    '''k-means++ seeding over sample indices; distances_to(i) gives the weights to sample i'''
    chosen = [int(rng.integers(n))]
    weight = distances_to(chosen[0])
    for _ in range(1, k):
        total = weight.sum()
        if total > 0:
            idx = int(rng.choice(n, p=weight / total))
        else:
            # every remaining point coincides with a center
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rest[rng.integers(rest.size)])
        chosen.append(idx)
        weight = np.minimum(weight, distances_to(idx))
    return chosen


def _sq_dist_to_centers(X, centers):
    return np.stack([np.sum((X - c) ** 2, axis=1) for c in centers], axis=1)


def kmeans(points, k, seed=0, max_iter=300, n_init=N_INIT):
    '''Lloyd iterations from n_init k-means++ starts, keeping the lowest final
    inertia; history holds the inertia per iteration of the kept start'''
    X = _as_points(points)
    n = X.shape[0]
    _check_k(k, n)
    if n_init < 1:
        raise ParameterError('n_init must be >= 1, got {}'.format(n_init))
    best = None
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_init)):
        labels, history = _lloyd(X, k, np.random.default_rng(child), max_iter)
        # strict improvement only, so the earliest start wins ties
        if best is None or history[-1] < best[1][-1] - 1e-12 * max(1.0, abs(best[1][-1])):
            best = (labels, history, i)
    labels, history, start = best
    labels, k_found = _compact(labels)
    logger.debug('kmeans k={} kept start {} of {} after {} iterations'.format(k, start, n_init, len(history)))
    return Assignment(labels, k_found, history[-1], history)


def _lloyd(X, k, rng, max_iter):
    n = X.shape[0]
    centers = X[_seed_plus_plus(n, k, rng, lambda i: np.sum((X - X[i]) ** 2, axis=1))].copy()
    labels, history = None, []
    for it in range(max_iter):
        d2 = _sq_dist_to_centers(X, centers)
        new = d2.argmin(axis=1)
        history.append(float(d2[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        cost = d2[np.arange(n), labels]
        taken = set()
        for j in range(k):
            members = labels == j
            if np.any(members):
                centers[j] = X[members].mean(axis=0)
                continue
            # empty cluster: restart it on the worst-served point
            order = np.argsort(-cost, kind='stable')
            far = next(int(i) for i in order if int(i) not in taken)
            taken.add(far)
            centers[j] = X[far]
            cost[far] = 0.0
    return labels, history


def _rows(ds):
    return [s.values for s in ds]


def _dtw_to_center(rows, center, band):
    '''Per-variable-averaged DTW from every sample to one centroid'''
    if all(r.shape == rows[0].shape for r in rows) and rows[0].shape == center.shape:
        X = np.stack(rows)
        return np.mean([dtw_many(X[:, v, :], center[v], band) for v in range(center.shape[0])], axis=0)
    return np.array([np.mean([dtw(r[v], center[v], band) for v in range(center.shape[0])]) for r in rows])


def dba(center, members, band=None, iterations=DBA_ITERATIONS):
    '''DTW barycenter averaging of one variable: every centroid point becomes the
    mean of the member points aligned to it'''
    c = np.array(center, dtype=np.float64)
    for _ in range(iterations):
        sums = np.zeros_like(c)
        counts = np.zeros_like(c)
        for s in members:
            _, path = dtw_path(c, s, band)
            ii, jj = np.array(path).T
            np.add.at(sums, ii, s[jj])
            np.add.at(counts, ii, 1.0)
        c = sums / counts
    return c


def kmeans_dtw(ds, k, seed=0, max_iter=300, band=None):
    rows = _rows(ds)
    n = len(rows)
    _check_k(k, n)
    rng = np.random.default_rng(seed)
    seeds = _seed_plus_plus(n, k, rng, lambda i: _dtw_to_center(rows, rows[i], band))
    centers = [rows[i].copy() for i in seeds]
    labels, history = None, []
    for it in range(max_iter):
        d = np.stack([_dtw_to_center(rows, c, band) for c in centers], axis=1)
        new = d.argmin(axis=1)
        history.append(float(d[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        cost = d[np.arange(n), labels]
        for j in range(k):
            idx = np.flatnonzero(labels == j)
            if idx.size == 0:
                far = int(np.argmax(cost))
                cost[far] = 0.0
                centers[j] = rows[far].copy()
                continue
            centers[j] = np.stack([dba(centers[j][v], [rows[i][v] for i in idx], band)
                                   for v in range(centers[j].shape[0])])
        logger.debug('kmeans_dtw iteration {}: inertia {:.6g}'.format(it + 1, history[-1]))
    labels, k_found = _compact(labels)
    return Assignment(labels, k_found, history[-1], history)


def _znorm_rows(X):
    X = np.atleast_2d(X)
    centered = X - X.mean(axis=1, keepdims=True)
    sd = X.std(axis=1, keepdims=True)
    return np.divide(centered, sd, out=np.zeros_like(centered), where=sd > 1e-12)


def shape_extraction(members, centroid):
    '''Centroid maximizing the summed squared normalized cross-correlation to the
    members: the principal eigenvector of the centered scatter of the aligned members'''
    if np.any(centroid):
        aligned = np.stack([sbd_shift(centroid, x)[1] for x in members])
    else:
        aligned = np.array(members)
    Y = _znorm_rows(aligned)
    m = Y.shape[1]
    S = Y.T @ Y
    Q = np.eye(m) - np.full((m, m), 1.0 / m)
    _, vectors = jacobi_eigen(Q.T @ S @ Q)
    c = vectors[:, 0]
    # the eigenvector sign is arbitrary; keep the one nearer the members
    if np.sum((aligned + c) ** 2) < np.sum((aligned - c) ** 2):
        c = -c
    return _znorm_rows(c)[0]


def kshape(ds, k, seed=0, max_iter=100):
    if ds.n_variables != 1:
        raise UnsupportedInputError('kshape handles univariate data, dataset has V={}'.format(ds.n_variables))
    if not ds.equal_length:
        raise UnsupportedInputError('kshape needs equal-length series')
    X = _znorm_rows(ds.to_array()[:, 0, :])
    n, m = X.shape
    _check_k(k, n)
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % k)
    centers = np.zeros((k, m))
    history = []
    for it in range(max_iter):
        d = np.full((n, k), 2.0)
        for j in range(k):
            members = X[labels == j]
            if len(members) == 0:
                continue
            centers[j] = shape_extraction(members, centers[j])
            if np.any(centers[j]):
                d[:, j] = sbd_many(X, centers[j])
        new = d.argmin(axis=1)
        history.append(float(d[np.arange(n), new].sum()))
        # keep every cluster populated by moving in the worst-served point
        cost = d[np.arange(n), new]
        for j in range(k):
            if not np.any(new == j):
                far = int(np.argmax(cost))
                cost[far] = -1.0
                new[far] = j
        if np.array_equal(new, labels):
            break
        labels = new
    labels, k_found = _compact(labels)
    logger.debug('kshape k={} stopped after {} iterations'.format(k, len(history)))
    return Assignment(labels, k_found, history[-1], history)


def spectral(points, k, seed=0, sigma=None):
    '''Normalized spectral clustering: Gaussian affinity, symmetric normalized
    Laplacian, bottom-k eigenvectors, row normalization, k-means'''
    X = _as_points(points)
    n = X.shape[0]
    _check_k(k, n)
    if n == 1:
        return Assignment(np.zeros(1, dtype=np.int64), 1, 0.0)
    d2 = pairwise_sq_distances(X)
    if sigma is None:
        sigma = float(np.median(np.sqrt(d2[np.triu_indices(n, 1)])))
    if sigma <= 0:
        raise DegenerateInputError('affinity bandwidth is zero: all points coincide')
    affinity = np.exp(-d2 / (2.0 * sigma * sigma))
    np.fill_diagonal(affinity, 0.0)
    degree = affinity.sum(axis=1)
    inv_sqrt = np.divide(1.0, np.sqrt(degree), out=np.zeros_like(degree), where=degree > 0)
    laplacian = np.eye(n) - inv_sqrt[:, None] * affinity * inv_sqrt[None, :]
    _, vectors = jacobi_eigen(laplacian)
    # eigenvalues come back descending: the last k columns are the smallest
    U = vectors[:, n - k:]
    norms = np.sqrt(np.sum(U * U, axis=1, keepdims=True))
    U = np.divide(U, norms, out=np.zeros_like(U), where=norms > 0)
    logger.debug('spectral k={} sigma={:.4g}'.format(k, sigma))
    return kmeans(U, k, seed)


def k_distances(X, min_pts):
    '''Distance of every point to its min_pts-th neighbour, the point itself counted first'''
    d = np.sqrt(pairwise_sq_distances(X))
    d.sort(axis=1)
    return d[:, min(min_pts, X.shape[0]) - 1]


def auto_eps(points, min_pts=4):
    '''Elbow of the ascending k-distance curve: the point farthest below its chord'''
    X = _as_points(points)
    if min_pts < 1:
        raise ParameterError('min_pts must be >= 1, got {}'.format(min_pts))
    y = np.sort(k_distances(X, min_pts))
    if y.size < 3 or y[-1] == y[0]:
        return float(y[-1])
    x = np.linspace(0.0, 1.0, y.size)
    yn = (y - y[0]) / (y[-1] - y[0])
    return float(y[int(np.argmax(x - yn))])


def dbscan(points, eps='auto', min_pts=4):
    X = _as_points(points)
    n = X.shape[0]
    if min_pts < 1:
        raise ParameterError('min_pts must be >= 1, got {}'.format(min_pts))
    if eps is None or eps == 'auto':
        eps = auto_eps(X, min_pts)
        logger.info('dbscan eps chosen from k-distance elbow: {:.6g}'.format(eps))
    eps = float(eps)
    if eps < 0:
        raise ParameterError('eps must be >= 0, got {}'.format(eps))
    d = np.sqrt(pairwise_sq_distances(X))
    near = d <= eps
    core = near.sum(axis=1) >= min_pts
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    # clusters are the connected components of the core-point graph
    for start in np.flatnonzero(core):
        if labels[start] != NOISE:
            continue
        labels[start] = cluster
        frontier = [start]
        while frontier:
            reach = np.flatnonzero(np.any(near[frontier], axis=0) & core & (labels == NOISE))
            labels[reach] = cluster
            frontier = list(reach)
        cluster += 1
    # border points join their nearest core point; equidistant cores are
    # ordered by coordinates so the partition does not depend on input order
    core_idx = np.flatnonzero(core)
    for i in np.flatnonzero(~core):
        if core_idx.size == 0:
            break
        reachable = core_idx[near[i, core_idx]]
        if reachable.size:
            nearest = reachable[d[i, reachable] == d[i, reachable].min()]
            if nearest.size > 1:
                nearest = nearest[np.lexsort(X[nearest].T[::-1])]
            labels[i] = labels[nearest[0]]
    logger.debug('dbscan: {} clusters, {} noise points'.format(cluster, int(np.sum(labels == NOISE))))
    return Assignment(labels, cluster, float(eps))


def write_assignment(assignment, path, sample_ids=None):
    ids = range(len(assignment)) if sample_ids is None else sample_ids
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['sample_id', 'cluster'])
        for i, label in zip(ids, assignment.labels):
            writer.writerow([i, int(label)])


def read_assignment(path):
    with open(path, encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ['sample_id', 'cluster']:
        raise FormatError('{} is not an assignment file'.format(path))
    try:
        labels = np.array([int(r[1]) for r in rows[1:] if r], dtype=np.int64)
    except (ValueError, IndexError) as e:
        raise FormatError('{}: {}'.format(path, e))
    clustered = labels[labels != NOISE]
    return Assignment(labels, int(clustered.max()) + 1 if clustered.size else 0)
