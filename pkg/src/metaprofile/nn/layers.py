"""NHWC layer kernels with hand-written backward passes.

Each kernel is a pair ``*_forward(...) -> (out, cache)`` / ``*_backward(dout, cache)``;
the ``Layer`` classes wrap them with parameter and gradient storage.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

_DEBUG = False


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def set_debug(flag: bool) -> None:
    """Enable non-finite checks after every layer op."""
    global _DEBUG
    _DEBUG = bool(flag)


def check_finite(x: np.ndarray, where: str, force: bool = False) -> np.ndarray:
    if (_DEBUG or force) and not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {where}")
    return x


def same_padding(k: int) -> tuple[int, int]:
    # TensorFlow convention: the extra row/col for even kernels goes after
    before = (k - 1) // 2
    return before, k - 1 - before


# ---------------------------------------------------------------- convolution

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1):
    """Stride-1 SAME cross-correlation. x: (B, H, W, Cin), w: (kh, kw, Cin, Cout)."""
    if stride != 1:
        raise ShapeError("only stride 1 is supported")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    bsz, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if cin != wcin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, kernel expects {wcin}")
    (pt, pb), (pl, pr) = same_padding(kh), same_padding(kw)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (B, H, W, Cin, kh, kw)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(bsz * h * wd, kh * kw * cin)
    out = (cols @ w.reshape(-1, cout) + b).reshape(bsz, h, wd, cout)
    return check_finite(out, "conv2d"), (cols, x.shape, w)


def conv2d_backward(dout: np.ndarray, cache, need_dx: bool = True):
    """Returns (dx, dw, db); dx is None when ``need_dx`` is False."""
    cols, xshape, w = cache
    bsz, h, wd, cin = xshape
    kh, kw, _, cout = w.shape
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    (pt, pb), (pl, pr) = same_padding(kh), same_padding(kw)
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(bsz, h, wd, kh, kw, cin)
    dxp = np.zeros((bsz, h + pt + pb, wd + pl + pr, cin), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + h, j:j + wd, :] += dcols[:, :, :, i, j, :]
    return dxp[:, pt:pt + h, pl:pl + wd, :], dw, db


def conv2d_forward_sparse(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same result as ``conv2d_forward`` but builds the patch matrix sparsely.

    Worth it for the input layer, whose heatmaps are mostly empty. The returned
    cache only supports weight gradients.
    """
    bsz, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if cin != wcin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, kernel expects {wcin}")
    pt, pl = same_padding(kh)[0], same_padding(kw)[0]
    bi, yi, xi, ci = np.nonzero(x)
    vals = x[bi, yi, xi, ci]
    rows, colsi, data = [], [], []
    for i in range(kh):
        for j in range(kw):
            # input (y, x) feeds output (y - i + pt, x - j + pl) through tap (i, j)
            oy = yi - i + pt
            ox = xi - j + pl
            ok = (oy >= 0) & (oy < h) & (ox >= 0) & (ox < wd)
            rows.append(((bi[ok] * h + oy[ok]) * wd + ox[ok]))
            colsi.append((i * kw + j) * cin + ci[ok])
            data.append(vals[ok])
    cols = sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(colsi))),
        shape=(bsz * h * wd, kh * kw * cin), dtype=x.dtype,
    )
    out = np.asarray(cols @ w.reshape(-1, cout)) + b
    return check_finite(out.reshape(bsz, h, wd, cout), "conv2d"), (cols, x.shape, w)


def conv2d_backward_sparse(dout: np.ndarray, cache):
    cols, _, w = cache
    d2 = dout.reshape(-1, w.shape[3])
    dw = np.asarray(cols.T @ d2).reshape(w.shape)
    return None, dw, d2.sum(axis=0)


# ---------------------------------------------------------------- pooling

def maxpool_forward(x: np.ndarray, pool: tuple[int, int]):
    """Non-overlapping max pool; trailing rows/cols that do not fill a window are dropped."""
    bsz, h, wd, c = x.shape
    ph, pw = pool
    ho, wo = h // ph, wd // pw
    if ho == 0 or wo == 0:
        raise ShapeError(f"pool {pool} larger than input {x.shape[1:3]}")
    t = x[:, :ho * ph, :wo * pw, :].reshape(bsz, ho, ph, wo, pw, c)
    best = t[:, :, 0, :, 0, :].copy()
    arg = np.zeros(best.shape, dtype=np.int8 if ph * pw < 128 else np.int32)
    # strict '>' keeps the first occurrence (row-major within the window) on ties
    for k in range(1, ph * pw):
        v = t[:, :, k // pw, :, k % pw, :]
        better = v > best
        np.copyto(best, v, where=better)
        arg[better] = k
    return best, (arg, x.shape, pool)


def maxpool_backward(dout: np.ndarray, cache) -> np.ndarray:
    arg, xshape, (ph, pw) = cache
    bsz, h, wd, c = xshape
    ho, wo = dout.shape[1:3]
    dx = np.zeros(xshape, dtype=dout.dtype)
    t = dx[:, :ho * ph, :wo * pw, :].reshape(bsz, ho, ph, wo, pw, c)
    for k in range(ph * pw):
        np.copyto(t[:, :, k // pw, :, k % pw, :], dout, where=(arg == k))
    return dx


# ---------------------------------------------------------------- batch norm

def _colsum(x2: np.ndarray) -> np.ndarray:
    # BLAS reduction over rows; much faster than ndarray.sum(axis=0) on tall arrays
    return np.ones(x2.shape[0], dtype=x2.dtype) @ x2


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode: str = "train",
                      momentum: float = 0.9, eps: float = 1e-5):
    """Per-channel normalisation over every axis but the last.

    In train mode the running statistics are updated in place.
    """
    c = x.shape[-1]
    x2 = x.reshape(-1, c)
    if mode == "train":
        n = x2.shape[0]
        if n < 2:
            raise ShapeError("batch norm in train mode needs more than one value per channel")
        mu = _colsum(x2) / n
        xc = x2 - mu
        var = _colsum(xc * xc) / n
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    elif mode == "infer":
        mu, var = running_mean, running_var
        xc = x2 - mu
    else:
        raise ValueError(f"unknown batch norm mode {mode!r}")
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xc *= inv
    xhat = xc
    out = xhat * gamma
    out += beta
    return check_finite(out.reshape(x.shape), "batchnorm"), (xhat, inv, gamma, mode, x.shape)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, mode, shape = cache
    d2 = dout.reshape(-1, shape[-1])
    dgamma = _colsum(d2 * xhat)
    dbeta = _colsum(d2)
    dxhat = d2 * gamma
    if mode == "infer":
        return (dxhat * inv).reshape(shape), dgamma, dbeta
    n = d2.shape[0]
    s1 = _colsum(dxhat) / n
    s2 = _colsum(dxhat * xhat) / n
    dxhat -= s1
    dxhat -= xhat * s2
    dxhat *= inv
    return dxhat.reshape(shape), dgamma, dbeta


# ---------------------------------------------------------------- small ops

def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dout, mask):
    return dout * mask


def dense_forward(x, w, b):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense expects (B, {w.shape[0]}), got {x.shape}")
    return check_finite(x @ w + b, "dense"), x


def dense_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


# ---------------------------------------------------------------- layer objects

class Layer:
    """Base layer: ``params``/``grads`` dicts keyed by short names, optional buffers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train: bool = True):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grad(self) -> None:
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def astype(self, dtype) -> "Layer":
        for d in (self.params, self.buffers):
            for k in d:
                d[k] = d[k].astype(dtype)
        self.zero_grad()
        return self

    def named_children(self):
        return []

    def state(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.params.items()}
        out.update({prefix + k: v for k, v in self.buffers.items()})
        for name, child in self.named_children():
            out.update(child.state(f"{prefix}{name}."))
        return out

    def named_params(self, prefix: str = ""):
        for k in self.params:
            yield prefix + k, self.params, self.grads, k
        for name, child in self.named_children():
            yield from child.named_params(f"{prefix}{name}.")

    def load_state(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for d in (self.params, self.buffers):
            for k in d:
                src = state[prefix + k]
                if src.shape != d[k].shape:
                    raise ShapeError(f"{prefix + k}: checkpoint shape {src.shape} != {d[k].shape}")
                d[k][...] = src
        for name, child in self.named_children():
            child.load_state(state, f"{prefix}{name}.")


class Conv2D(Layer):
    def __init__(self, kh: int, kw: int, cin: int, cout: int, rng: np.random.Generator,
                 dtype=np.float32, input_layer: bool = False):
        super().__init__()
        fan_in = kh * kw * cin
        self.params["W"] = (rng.standard_normal((kh, kw, cin, cout)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.params["b"] = np.zeros(cout, dtype=dtype)
        self.input_layer = input_layer
        self.zero_grad()

    def forward(self, x, train=True):
        if self.input_layer:
            out, self._cache = conv2d_forward_sparse(x, self.params["W"], self.params["b"])
        else:
            out, self._cache = conv2d_forward(x, self.params["W"], self.params["b"])
        return out

    def backward(self, dout):
        if self.input_layer:
            dx, dw, db = conv2d_backward_sparse(dout, self._cache)
        else:
            dx, dw, db = conv2d_backward(dout, self._cache)
        self.grads["W"] += dw
        self.grads["b"] += db
        self._cache = None
        return dx


class MaxPool2D(Layer):
    def __init__(self, ph: int, pw: int):
        super().__init__()
        self.pool = (ph, pw)

    def forward(self, x, train=True):
        out, self._cache = maxpool_forward(x, self.pool)
        return out

    def backward(self, dout):
        return maxpool_backward(dout, self._cache)


class BatchNorm(Layer):
    def __init__(self, c: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(c, dtype=dtype)
        self.buffers["running_var"] = np.ones(c, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.zero_grad()

    def forward(self, x, train=True):
        out, self._cache = batchnorm_forward(
            x, self.params["gamma"], self.params["beta"], self.buffers["running_mean"],
            self.buffers["running_var"], "train" if train else "infer", self.momentum, self.eps)
        return out.astype(x.dtype, copy=False)

    def backward(self, dout):
        dx, dg, db = batchnorm_backward(dout, self._cache)
        self.grads["gamma"] += dg
        self.grads["beta"] += db
        return dx.astype(dout.dtype, copy=False)


class ReLU(Layer):
    def forward(self, x, train=True):
        out, self._cache = relu_forward(x)
        return out

    def backward(self, dout):
        return relu_backward(dout, self._cache)


class Dense(Layer):
    def __init__(self, nin: int, nout: int, rng: np.random.Generator, dtype=np.float32, gain: float = 2.0):
        super().__init__()
        self.params["W"] = (rng.standard_normal((nin, nout)) * np.sqrt(gain / nin)).astype(dtype)
        self.params["b"] = np.zeros(nout, dtype=dtype)
        self.zero_grad()

    def forward(self, x, train=True):
        out, self._cache = dense_forward(x, self.params["W"], self.params["b"])
        return out

    def backward(self, dout):
        dx, dw, db = dense_backward(dout, self._cache, self.params["W"])
        self.grads["W"] += dw
        self.grads["b"] += db
        return dx


class Flatten(Layer):
    def forward(self, x, train=True):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._cache)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = list(layers)

    def named_children(self):
        return [(str(i), l) for i, l in enumerate(self.layers)]

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def trace_shapes(self, x, train=True) -> list[tuple[str, tuple[int, ...]]]:
        """Forward pass recording each layer's output shape."""
        shapes = []
        for layer in self.layers:
            x = layer.forward(x, train)
            shapes.append((type(layer).__name__, x.shape))
        return shapes
