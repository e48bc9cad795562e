'''Autoencoders that map samples to a latent space.

cnn_gru: three conv/L-ReLU/max-pool levels whose feature map is read row by row
by a GRU; the decoder mirrors it with a GRU expansion and upsample+conv levels.
dense_dae: the fully connected denoising autoencoder used by the latent-space
baseline.
'''

import json, csv, struct, logging, dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple
import numpy as np

from . import tensor as T
from .tensor import Tensor, no_grad
from .dataset import Dataset
from .projection import ProjectionMatrix
from .utils import ConfigError, ParameterError, ShapeError, FormatError, DivergenceError

logger = logging.getLogger(__name__)

CKPT_MAGIC = b'TPCK'
CKPT_VERSION = 1
# magic, version, json header length
CKPT_HEADER = struct.Struct('<4sHI')


def _check_positive(cfg, names):
    for name in names:
        value = getattr(cfg, name)
        values = value if isinstance(value, tuple) else (value,)
        if not values or any(v <= 0 for v in values):
            raise ParameterError('{} must be positive, got {}'.format(name, value))


@dataclass(frozen=True)
class CnnGruConfig:
    filters: tuple = (16, 32, 64)
    kernel: tuple = (4, 4)
    pool: tuple = (5, 5)
    latent_dim: int = 10
    lrelu_alpha: float = 0.1
    lr: float = 0.001
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0

    def validate(self):
        if len(self.kernel) != 2 or len(self.pool) != 2:
            raise ConfigError('kernel and pool need two extents, got {} and {}'.format(self.kernel, self.pool))
        _check_positive(self, ('filters', 'kernel', 'pool', 'latent_dim', 'lrelu_alpha', 'lr', 'batch_size', 'epochs'))
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(filters=tuple(d['filters']), kernel=tuple(d['kernel']), pool=tuple(d['pool']),
                   latent_dim=d['latent_dim'], lrelu_alpha=d['lrelu_alpha'], lr=d['lr'],
                   batch_size=d['batch_size'], epochs=d['epochs'], seed=d['seed'])


@dataclass(frozen=True)
class DenseDaeConfig:
    hidden_dims: tuple = (500, 500, 2000)
    latent_dim: int = 5
    noise_std: float = 0.2
    lrelu_alpha: float = 0.1
    lr: float = 0.001
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0

    def validate(self):
        _check_positive(self, ('hidden_dims', 'latent_dim', 'lrelu_alpha', 'lr', 'batch_size', 'epochs'))
        if self.noise_std < 0:
            raise ParameterError('noise_std must be >= 0, got {}'.format(self.noise_std))
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(hidden_dims=tuple(d['hidden_dims']), latent_dim=d['latent_dim'], noise_std=d['noise_std'],
                   lrelu_alpha=d['lrelu_alpha'], lr=d['lr'], batch_size=d['batch_size'],
                   epochs=d['epochs'], seed=d['seed'])


CONFIGS = {'cnn_gru': CnnGruConfig, 'dense_dae': DenseDaeConfig}


class LayerPlan(NamedTuple):
    '''Effective geometry of one convolution level'''
    in_channels: int
    filters: int
    kernel: tuple
    pool: tuple
    in_hw: tuple


@dataclass
class ModelParams:
    architecture: str
    config: object
    input_shape: tuple
    layers: dict
    plan: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def parameters(self):
        '''Flat name -> Tensor map, "layer.param", in build order'''
        return {'{}.{}'.format(layer, name): t
                for layer, params in self.layers.items() for name, t in params.items()}

    @property
    def latent_dim(self):
        return self.config.latent_dim


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _gru_params(input_dim, state_dim, rng):
    return {'W': T.glorot_uniform((input_dim, 3 * state_dim), input_dim, 3 * state_dim, rng),
            'U': T.glorot_uniform((state_dim, 3 * state_dim), state_dim, 3 * state_dim, rng),
            'b': _zeros(3 * state_dim)}


def _conv_params(c_out, c_in, kernel, rng):
    kh, kw = kernel
    return {'K': T.glorot_uniform((c_out, c_in, kh, kw), c_in * kh * kw, c_out * kh * kw, rng),
            'b': _zeros(c_out)}


def _dense_params(n_in, n_out, rng):
    return {'W': T.glorot_uniform((n_in, n_out), n_in, n_out, rng), 'b': _zeros(n_out)}


def cnn_plan(input_shape, cfg):
    '''Per-level geometry with kernel and pool clamped to the map they see.
    Returns (plan, (H3, W3, F3))'''
    rows, cols, channels = input_shape
    h, w, c = rows, cols, channels
    plan = []
    for i, f in enumerate(cfg.filters):
        if h < 1 or w < 1:
            raise ConfigError('conv layer {} receives an empty {}x{} map'.format(i + 1, h, w))
        kernel = (min(cfg.kernel[0], h), min(cfg.kernel[1], w))
        ph, out_h = T.pooled_extent(h, cfg.pool[0])
        pw, out_w = T.pooled_extent(w, cfg.pool[1])
        if kernel != tuple(cfg.kernel) or (ph, pw) != tuple(cfg.pool):
            logger.info('conv layer {}: {}x{} input, kernel {}x{}, pool {}x{}'.format(
                i + 1, h, w, kernel[0], kernel[1], ph, pw))
        plan.append(LayerPlan(c, f, kernel, (ph, pw), (h, w)))
        h, w, c = out_h, out_w, f
    return plan, (h, w, c)


def build_cnn_gru(input_shape, cfg=None):
    cfg = (cfg or CnnGruConfig()).validate()
    input_shape = tuple(int(x) for x in input_shape)
    if len(input_shape) == 2:
        input_shape = input_shape + (1,)
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise ConfigError('input shape must be (rows, cols, channels) >= 1, got {}'.format(input_shape))
    plan, (h3, w3, f3) = cnn_plan(input_shape, cfg)
    rng = np.random.default_rng(cfg.seed)
    layers = {}
    for i, level in enumerate(plan):
        layers['conv{}'.format(i + 1)] = _conv_params(level.filters, level.in_channels, level.kernel, rng)
    layers['enc_gru'] = _gru_params(f3 * w3, cfg.latent_dim, rng)
    layers['dec_gru'] = _gru_params(cfg.latent_dim, f3 * w3, rng)
    for i in reversed(range(len(plan))):
        level = plan[i]
        layers['deconv{}'.format(i + 1)] = _conv_params(level.in_channels, level.filters, level.kernel, rng)
    return ModelParams('cnn_gru', cfg, input_shape, layers, plan)


def build_dense_dae(input_dim, cfg=None):
    cfg = (cfg or DenseDaeConfig()).validate()
    if input_dim < 1:
        raise ParameterError('input_dim must be >= 1, got {}'.format(input_dim))
    rng = np.random.default_rng(cfg.seed)
    dims = (int(input_dim),) + tuple(cfg.hidden_dims) + (cfg.latent_dim,)
    layers = {}
    for i in range(len(dims) - 1):
        layers['enc{}'.format(i + 1)] = _dense_params(dims[i], dims[i + 1], rng)
    back = dims[::-1]
    for i in range(len(back) - 1):
        layers['dec{}'.format(i + 1)] = _dense_params(back[i], back[i + 1], rng)
    return ModelParams('dense_dae', cfg, (int(input_dim),), layers)


def encoder_graph(model, x):
    '''Latent Tensor [B, latent_dim] for an input Tensor in model layout'''
    cfg = model.config
    if model.architecture == 'dense_dae':
        depth = len(cfg.hidden_dims) + 1
        for i in range(depth):
            p = model.layers['enc{}'.format(i + 1)]
            x = T.linear(x, p['W'], p['b'])
            if i < depth - 1:
                x = T.leaky_relu(x, cfg.lrelu_alpha)
        return x
    for i, level in enumerate(model.plan):
        p = model.layers['conv{}'.format(i + 1)]
        x = T.leaky_relu(T.conv2d(x, p['K'], p['b']), cfg.lrelu_alpha)
        x = T.maxpool2d(x, level.pool)
    B, F, H, W = x.shape
    seq = x.transpose(0, 2, 1, 3).reshape(B, H, F * W)
    return T.gru(seq, cfg.latent_dim, model.layers['enc_gru'])


def decoder_graph(model, z):
    '''Reconstruction Tensor in model layout for a latent Tensor [B, latent_dim]'''
    cfg = model.config
    if model.architecture == 'dense_dae':
        depth = len(cfg.hidden_dims) + 1
        for i in range(depth):
            p = model.layers['dec{}'.format(i + 1)]
            z = T.linear(z, p['W'], p['b'])
            if i < depth - 1:
                z = T.leaky_relu(z, cfg.lrelu_alpha)
        return z
    h3, w3, f3 = _final_extent(model)
    B = z.shape[0]
    # the latent is replicated across the H3 steps the decoder GRU unrolls
    seq = T.gru(T.stack([z] * h3, axis=1), f3 * w3, model.layers['dec_gru'], return_sequences=True)
    x = seq.reshape(B, h3, f3, w3).transpose(0, 2, 1, 3)
    for i in reversed(range(len(model.plan))):
        level = model.plan[i]
        p = model.layers['deconv{}'.format(i + 1)]
        x = T.upsample2d(x, level.pool, level.in_hw)
        x = T.conv2d(x, p['K'], p['b'])
        if i > 0:
            x = T.leaky_relu(x, cfg.lrelu_alpha)
    return x


def _final_extent(model):
    last = model.plan[-1]
    h = T.pooled_extent(last.in_hw[0], last.pool[0])[1]
    w = T.pooled_extent(last.in_hw[1], last.pool[1])[1]
    return h, w, last.filters


def prepare_inputs(model, data):
    '''Arrange a Dataset, ProjectionMatrix or array as the model's input batch.

    Projections enter the CNN as p x W single-channel maps, raw datasets as
    T x V maps; the dense model sees flattened rows.'''
    if isinstance(data, ProjectionMatrix):
        X = np.asarray(data.values)
    elif isinstance(data, Dataset):
        X = data.to_array().transpose(0, 2, 1)
    else:
        X = np.asarray(data, dtype=np.float64)
    if model.architecture == 'dense_dae':
        X = X.reshape(X.shape[0], -1)
        if X.shape[1:] != model.input_shape:
            raise ShapeError('model expects {} features, got {}'.format(model.input_shape[0], X.shape[1]))
        return np.ascontiguousarray(X, dtype=np.float64)
    rows, cols, channels = model.input_shape
    if X.ndim == 3:
        X = X[..., None]
    if X.shape[1:] != (rows, cols, channels):
        raise ShapeError('model expects inputs of shape {}, got {}'.format(model.input_shape, X.shape[1:]))
    return np.ascontiguousarray(X.transpose(0, 3, 1, 2), dtype=np.float64)


def _to_input_layout(model, out):
    if model.architecture == 'dense_dae':
        return out
    return out.transpose(0, 2, 3, 1)


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def train(model, data, cfg=None):
    '''Minimize reconstruction MSE with Adam. Returns (model, per-epoch mean losses)'''
    cfg = (cfg or model.config).validate()
    X = prepare_inputs(model, data)
    n = X.shape[0]
    batch = min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    noise_std = getattr(cfg, 'noise_std', 0.0)
    noise_scale = noise_std * X.std(axis=0) if noise_std > 0 else None
    params = model.parameters()
    state = T.AdamState(lr=cfg.lr)
    history = []
    logger.info('training {} on {} samples: {} epochs, batch {}'.format(model.architecture, n, cfg.epochs, batch))
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for sl in _batches(n, batch):
            xb = X[order[sl]]
            inp = xb
            if noise_scale is not None:
                inp = xb + noise_scale * rng.standard_normal(xb.shape)
            for p in params.values():
                p.grad = None
            loss = T.mse_loss(decoder_graph(model, encoder_graph(model, Tensor(inp))), Tensor(xb))
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(epoch, value)
            loss.backward()
            T.adam_step(params, state)
            total += value * xb.shape[0]
        history.append(total / n)
        logger.debug('epoch {}: mean loss {:.6g}'.format(epoch, history[-1]))
    logger.info('final loss {:.6g} after {} epochs'.format(history[-1], cfg.epochs))
    return model, history


def encode(model, samples):
    '''N x latent_dim matrix; deterministic, no corruption noise'''
    X = prepare_inputs(model, samples)
    out = []
    with no_grad():
        for sl in _batches(X.shape[0], min(model.config.batch_size, X.shape[0])):
            out.append(encoder_graph(model, Tensor(X[sl])).data)
    return np.concatenate(out, axis=0)


def decode(model, latents):
    '''Decoder output for an N x latent_dim matrix, shaped (N,) + input_shape'''
    Z = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if Z.shape[1] != model.latent_dim:
        raise ShapeError('latent matrix has {} columns, model has {}'.format(Z.shape[1], model.latent_dim))
    out = []
    with no_grad():
        for sl in _batches(Z.shape[0], min(model.config.batch_size, Z.shape[0])):
            out.append(decoder_graph(model, Tensor(Z[sl])).data)
    return _to_input_layout(model, np.concatenate(out, axis=0))


def reconstruct(model, samples):
    return decode(model, encode(model, samples))


def save_checkpoint(model, path):
    params = model.parameters()
    header = {'architecture': model.architecture,
              'config': model.config.to_dict(),
              'input_shape': list(model.input_shape),
              'meta': model.meta,
              'blobs': [{'name': name, 'shape': list(t.shape)} for name, t in params.items()]}
    text = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(text)))
        f.write(text)
        for t in params.values():
            f.write(np.ascontiguousarray(t.data, dtype='<f8').tobytes())
    logger.info('Wrote checkpoint {}'.format(path))


def load_checkpoint(path):
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < CKPT_HEADER.size:
        raise FormatError('{} is too short for a checkpoint'.format(path))
    magic, version, length = CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise FormatError('{} is not a checkpoint file'.format(path))
    if version != CKPT_VERSION:
        raise FormatError('{} has checkpoint version {}, expected {}'.format(path, version, CKPT_VERSION))
    try:
        header = json.loads(raw[CKPT_HEADER.size:CKPT_HEADER.size + length].decode('utf-8'))
        cfg = CONFIGS[header['architecture']].from_dict(header['config'])
    except (ValueError, KeyError) as e:
        raise FormatError('{} has a malformed header: {}'.format(path, e))
    if header['architecture'] == 'cnn_gru':
        model = build_cnn_gru(header['input_shape'], cfg)
    else:
        model = build_dense_dae(header['input_shape'][0], cfg)
    params = model.parameters()
    offset = CKPT_HEADER.size + length
    seen = set()
    for blob in header['blobs']:
        shape = tuple(blob['shape'])
        if blob['name'] not in params or params[blob['name']].shape != shape or blob['name'] in seen:
            raise FormatError('{}: unexpected parameter {} {}'.format(path, blob['name'], shape))
        seen.add(blob['name'])
        count = int(np.prod(shape))
        if offset + 8 * count > len(raw):
            raise FormatError('{} is truncated at {}'.format(path, blob['name']))
        params[blob['name']].data = np.frombuffer(raw, dtype='<f8', count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(raw):
        raise FormatError('{} has {} trailing bytes'.format(path, len(raw) - offset))
    missing = sorted(set(params) - seen)
    if missing:
        raise FormatError('{} has no values for {}'.format(path, ', '.join(missing)))
    model.meta = header['meta']
    logger.info('Read checkpoint {}'.format(path))
    return model


def write_loss_history(history, path):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['epoch', 'mean_loss'])
        for epoch, loss in enumerate(history, 1):
            writer.writerow([epoch, repr(float(loss))])
