'''Reverse-mode automatic differentiation over float64 numpy arrays.

Each differentiable operation is a Function subclass with a forward and a backward
rule; Function.apply records the inputs on the output Tensor so that
Tensor.backward can walk the graph in reverse topological order.
'''

import math, contextlib
from dataclasses import dataclass, field
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .utils import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    '''Evaluate without recording the graph'''
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    '''n-dimensional float64 array node with an optional gradient'''
    def __init__(self, data, requires_grad=False, ctx=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.ctx = ctx

    def __repr__(self):
        return '<Tensor shape={} grad={}>'.format(self.shape, self.requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def __add__(self, x): return Add.apply(self, x)
    def __radd__(self, x): return Add.apply(x, self)
    def __sub__(self, x): return Sub.apply(self, x)
    def __rsub__(self, x): return Sub.apply(x, self)
    def __mul__(self, x): return Mul.apply(self, x)
    def __rmul__(self, x): return Mul.apply(x, self)
    def __neg__(self): return Neg.apply(self)
    def __matmul__(self, x): return MatMul.apply(self, x)
    def __getitem__(self, idx): return Index.apply(self, idx=idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        return Transpose.apply(self, axes=axes)

    def sum(self):
        return Sum.apply(self)

    def backward(self, grad=None):
        Graph(self).backward(grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Graph:
    '''Operation nodes reachable from an output, parents before children'''
    def __init__(self, output):
        self.output = output
        self.nodes = self._toposort(output)

    @staticmethod
    def _toposort(output):
        order, visited = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.ctx is not None:
                for parent in node.ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self, grad=None):
        out = self.output
        seed = np.ones_like(out.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if seed.shape != out.shape:
            raise ShapeError('seed gradient shape {} does not match output {}'.format(seed.shape, out.shape))
        for node in self.nodes:
            if node.ctx is not None:
                node.grad = None
        _accumulate(out, seed)
        # reverse topological order: every consumer is done before its inputs
        for node in reversed(self.nodes):
            if node.ctx is None or node.grad is None:
                continue
            for parent, g in zip(node.ctx.parents, node.ctx.backward(node.grad)):
                if g is not None and parent.requires_grad:
                    _accumulate(parent, g)


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    def __init__(self, *parents):
        self.parents = parents

    @classmethod
    def apply(cls, *inputs, **kwargs):
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(*tensors)
        out = fn.forward(*[t.data for t in tensors], **kwargs)
        if _grad_enabled and any(t.requires_grad for t in tensors):
            return Tensor(out, requires_grad=True, ctx=fn)
        return Tensor(out)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Add(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x + y

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = x.shape, y.shape
        return x - y

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return _unbroadcast(grad * self.y, self.x.shape), _unbroadcast(grad * self.x, self.y.shape)


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class MatMul(Function):
    def forward(self, x, y):
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
            raise ShapeError('matmul needs (a, b) @ (b, c), got {} @ {}'.format(x.shape, y.shape))
        self.x, self.y = x, y
        return x @ y

    def backward(self, grad):
        return grad @ self.y.T, self.x.T @ grad


class Sigmoid(Function):
    def forward(self, x):
        # tanh form does not overflow for large |x|
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out ** 2),)


class LeakyReLU(Function):
    def forward(self, x, alpha=0.1):
        self.slope = np.where(x > 0, 1.0, alpha)
        return x * self.slope

    def backward(self, grad):
        return (grad * self.slope,)


class Reshape(Function):
    def forward(self, x, shape=None):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = axes if axes else tuple(reversed(range(x.ndim)))
        return x.transpose(self.axes)

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.axes)),)


class Index(Function):
    '''Basic (slice/integer) indexing'''
    def forward(self, x, idx=None):
        self.in_shape, self.idx = x.shape, idx
        return np.array(x[idx])

    def backward(self, grad):
        out = np.zeros(self.in_shape)
        out[self.idx] += grad
        return (out,)


class Stack(Function):
    def forward(self, *xs, axis=0):
        self.axis = axis
        return np.stack(xs, axis=axis)

    def backward(self, grad):
        return tuple(np.take(grad, i, axis=self.axis) for i in range(grad.shape[self.axis]))


class Sum(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.array(x.sum())

    def backward(self, grad):
        return (np.full(self.in_shape, float(grad)),)


class MSELoss(Function):
    def forward(self, a, b):
        if a.shape != b.shape:
            raise ShapeError('mse needs equal shapes, got {} and {}'.format(a.shape, b.shape))
        self.diff = a - b
        return np.array(np.mean(self.diff ** 2))

    def backward(self, grad):
        g = 2.0 * self.diff / self.diff.size * float(grad)
        return g, -g


def _same_padding(k):
    before = (k - 1) // 2
    return before, k - 1 - before


class Conv2d(Function):
    '''Stride-1 cross-correlation with "same" zero padding'''
    def forward(self, x, kernels, bias):
        if x.ndim != 4 or kernels.ndim != 4:
            raise ShapeError('conv2d needs [B,C,H,W] input and [F,C,kh,kw] kernels')
        if x.shape[1] != kernels.shape[1]:
            raise ShapeError('conv2d input has {} channels, kernels expect {}'.format(x.shape[1], kernels.shape[1]))
        if bias.shape != (kernels.shape[0],):
            raise ShapeError('conv2d bias shape {} does not match {} filters'.format(bias.shape, kernels.shape[0]))
        kh, kw = kernels.shape[2:]
        self.pad_h, self.pad_w = _same_padding(kh), _same_padding(kw)
        xp = np.pad(x, ((0, 0), (0, 0), self.pad_h, self.pad_w))
        self.cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
        self.kernels, self.xp_shape, self.hw = kernels, xp.shape, x.shape[2:]
        return np.einsum('bchwij,fcij->bfhw', self.cols, kernels, optimize=True) + bias[None, :, None, None]

    def backward(self, grad):
        H, W = self.hw
        kh, kw = self.kernels.shape[2:]
        dk = np.einsum('bchwij,bfhw->fcij', self.cols, grad, optimize=True)
        db = grad.sum(axis=(0, 2, 3))
        dxp = np.zeros(self.xp_shape)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + H, j:j + W] += np.einsum('bfhw,fc->bchw', grad, self.kernels[:, :, i, j])
        dx = dxp[:, :, self.pad_h[0]:self.pad_h[0] + H, self.pad_w[0]:self.pad_w[0] + W]
        return dx, dk, db


def pooled_extent(extent, size):
    '''(clamped window, output extent) for ceil-mode pooling'''
    window = min(size, extent)
    return window, int(math.ceil(extent / window))


class MaxPool2d(Function):
    '''Non-overlapping max pooling; windows clamp to the input, ragged edges pool in ceil mode'''
    def forward(self, x, size=(2, 2)):
        B, C, H, W = x.shape
        ph, Ho = pooled_extent(H, size[0])
        pw, Wo = pooled_extent(W, size[1])
        xp = np.pad(x, ((0, 0), (0, 0), (0, Ho * ph - H), (0, Wo * pw - W)), constant_values=-np.inf)
        win = xp.reshape(B, C, Ho, ph, Wo, pw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, ph * pw)
        # argmax keeps the first index on ties
        self.arg = win.argmax(axis=-1)
        self.geometry = (B, C, H, W, Ho, Wo, ph, pw)
        return np.take_along_axis(win, self.arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        B, C, H, W, Ho, Wo, ph, pw = self.geometry
        gwin = np.zeros((B, C, Ho, Wo, ph * pw))
        np.put_along_axis(gwin, self.arg[..., None], grad[..., None], axis=-1)
        full = gwin.reshape(B, C, Ho, Wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * ph, Wo * pw)
        return (full[:, :, :H, :W],)


class Upsample2d(Function):
    '''Nearest-neighbour repetition, optionally cropped to out_hw'''
    def forward(self, x, size=(2, 2), out_hw=None):
        ph, pw = size
        up = x.repeat(ph, axis=2).repeat(pw, axis=3)
        self.geometry = x.shape, ph, pw
        if out_hw is not None:
            if out_hw[0] > up.shape[2] or out_hw[1] > up.shape[3]:
                raise ShapeError('cannot upsample {} by {} to {}'.format(x.shape[2:], size, out_hw))
            up = up[:, :, :out_hw[0], :out_hw[1]]
        return up

    def backward(self, grad):
        (B, C, H, W), ph, pw = self.geometry
        full = np.zeros((B, C, H * ph, W * pw))
        full[:, :, :grad.shape[2], :grad.shape[3]] = grad
        return (full.reshape(B, C, H, ph, W, pw).sum(axis=(3, 5)),)


def conv2d(x, kernels, bias):
    return Conv2d.apply(x, kernels, bias)


def maxpool2d(x, size):
    return MaxPool2d.apply(x, size=tuple(size))


def upsample2d(x, size, out_hw=None):
    return Upsample2d.apply(x, size=tuple(size), out_hw=None if out_hw is None else tuple(out_hw))


def leaky_relu(x, alpha=0.1):
    return LeakyReLU.apply(x, alpha=alpha)


def sigmoid(x):
    return Sigmoid.apply(x)


def tanh(x):
    return Tanh.apply(x)


def stack(tensors, axis=0):
    return Stack.apply(*tensors, axis=axis)


def mse_loss(a, b):
    return MSELoss.apply(a, b)


def linear(x, weight, bias):
    return x @ weight + bias


def gru(x, state_dim, params, return_sequences=False):
    '''Gated recurrent unit over x [B,T,D]; params W [D,3H], U [H,3H], b [3H], gates ordered z, r, h.
    Returns the final state [B,H], or every state [B,T,H] with return_sequences'''
    x = as_tensor(x)
    B, T, D = x.shape
    H = state_dim
    W, U, b = params['W'], params['U'], params['b']
    if W.shape != (D, 3 * H) or U.shape != (H, 3 * H):
        raise ShapeError('gru weights {} / {} do not fit input dim {} and state {}'.format(W.shape, U.shape, D, H))
    xw = linear(x.reshape(B * T, D), W, b).reshape(B, T, 3 * H)
    u_zr, u_h = U[:, :2 * H], U[:, 2 * H:]
    h = Tensor(np.zeros((B, H)))
    states = []
    for t in range(T):
        xt = xw[:, t, :]
        hu = h @ u_zr
        z = sigmoid(xt[:, :H] + hu[:, :H])
        r = sigmoid(xt[:, H:2 * H] + hu[:, H:])
        candidate = tanh(xt[:, 2 * H:] + (r * h) @ u_h)
        h = (1.0 - z) * h + z * candidate
        states.append(h)
    if return_sequences:
        return stack(states, axis=1)
    return h


def glorot_uniform(shape, fan_in, fan_out, rng):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    '''One bias-corrected Adam update of every named parameter, in place'''
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.beta1 * state.m.get(name, np.zeros_like(p.data)) + (1.0 - state.beta1) * g
        v = state.beta2 * state.v.get(name, np.zeros_like(p.data)) + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        state.m[name], state.v[name] = m, v
    return params, state


def gradcheck(op, inputs, seed=0, h=1e-5, floor=1e-6):
    '''Worst relative error between backward() and central differences.

    inputs holds shapes (random normal values are drawn), arrays, or Tensors
    (perturbed in place, so parameters captured by op can be checked too).
    The scalar probed is sum(op(*inputs) * R) for a fixed random R.'''
    rng = np.random.default_rng(seed)
    tensors = []
    for x in inputs:
        if isinstance(x, Tensor):
            x.requires_grad = True
            tensors.append(x)
        elif isinstance(x, tuple):
            tensors.append(Tensor(rng.standard_normal(x), requires_grad=True))
        else:
            tensors.append(Tensor(np.array(x, dtype=np.float64), requires_grad=True))
    for t in tensors:
        t.grad = None
    out = op(*tensors)
    weights = rng.standard_normal(out.shape)
    (out * weights).sum().backward()
    analytic = [np.array(t.grad) if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def probe():
        with no_grad():
            return float(np.sum(op(*tensors).data * weights))

    worst = 0.0
    for t, a in zip(tensors, analytic):
        for idx in np.ndindex(t.shape):
            orig = t.data[idx]
            t.data[idx] = orig + h
            f_plus = probe()
            t.data[idx] = orig - h
            f_minus = probe()
            t.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(a[idx] - numeric) / max(abs(a[idx]), abs(numeric), floor)
            worst = max(worst, err)
    return worst
