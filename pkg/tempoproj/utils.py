import os, json, time, hashlib, logging, contextlib
import multiprocessing
import numpy as np

logger = logging.getLogger(__name__)

THREADS_ENV = 'TEMPOPROJ_THREADS'
LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'


class TempoprojError(Exception):
    '''Base of every error raised by tempoproj'''


class FormatError(TempoprojError, ValueError):
    '''Input file layout is wrong (ragged rows, missing columns)'''


class ParseError(TempoprojError, ValueError):
    '''A cell could not be read as a number'''


class EmptyDatasetError(TempoprojError, ValueError):
    pass


class ShapeError(TempoprojError, ValueError):
    pass


class LabelError(TempoprojError, ValueError):
    pass


class ConfigError(TempoprojError, ValueError):
    pass


class ParameterError(TempoprojError, ValueError):
    pass


class DegenerateInputError(TempoprojError, ValueError):
    pass


class UnsupportedInputError(TempoprojError, ValueError):
    pass


class NumericalError(TempoprojError, ArithmeticError):
    pass


class DivergenceError(TempoprojError, ArithmeticError):
    '''Training produced a non-finite loss'''
    def __init__(self, epoch, loss):
        super().__init__('loss diverged to {} at epoch {}'.format(loss, epoch))
        self.epoch = epoch
        self.loss = loss


class StageError(TempoprojError):
    '''Failure inside one stage of a pipeline run'''
    def __init__(self, stage, cause):
        super().__init__('{} stage failed: {}'.format(stage, cause))
        self.stage = stage
        self.cause = cause


def configure_logging(debug=False):
    level = logging.DEBUG if debug else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger('tempoproj').setLevel(level)
    # matplotlib is chatty at debug level
    logging.getLogger('matplotlib').setLevel(logging.WARNING)


def worker_count(requested=None):
    '''Number of worker processes, capped by TEMPOPROJ_THREADS'''
    cap = os.environ.get(THREADS_ENV)
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise ConfigError('{} must be an integer, got {!r}'.format(THREADS_ENV, cap))
    # daemonic pool workers cannot start their own pools
    if multiprocessing.current_process().daemon:
        return 1
    return max(1, n)


def parallel_map(func, items, workers=None):
    '''Ordered map over items, in worker processes when more than one is allowed'''
    items = list(items)
    workers = min(worker_count(workers), len(items))
    if workers <= 1:
        return [func(x) for x in items]
    logger.debug('starting {} workers for {} tasks'.format(workers, len(items)))
    with multiprocessing.Pool(workers) as pool:
        return pool.map(func, items)


def array_digest(*arrays):
    '''sha256 over array shapes and little-endian float64 contents'''
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype='<f8')
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def config_digest(document):
    '''Stable short hash of a JSON-serializable document'''
    text = json.dumps(document, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def dump_json(document, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2, sort_keys=True, default=_json_default)
        f.write('\n')


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError('cannot serialize {}'.format(type(x).__name__))


@contextlib.contextmanager
def timed(times, stage):
    '''Accumulate monotonic wall time of a block into times[stage]'''
    start = time.perf_counter()
    try:
        yield
    finally:
        times[stage] = times.get(stage, 0.0) + time.perf_counter() - start


def ensure_dir(path):
    try:
        os.makedirs(path)
    except FileExistsError:
        #OK if it exists
        pass
    return path
