"""Dense tanh networks with hand-written reverse-mode gradients."""
from __future__ import annotations

import math

import numpy as np

_OUT_ACTS = ("sigmoid", "linear", "tanh")


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class MLP:
    """Fully connected network.

    ``sizes`` lists the layer widths from input to output. Hidden layers use
    ``tanh``; the output uses ``out_act``. Inputs are divided elementwise by
    the fixed ``input_scale`` before the first layer. Weights are stored as
    ``(fan_in, fan_out)`` matrices in ``params = [W0, b0, W1, b1, ...]``.
    """

    def __init__(self, sizes, out_act: str = "linear", input_scale=None, dtype=np.float64):
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least input and output widths, all positive")
        if out_act not in _OUT_ACTS:
            raise ValueError(f"out_act must be one of {_OUT_ACTS}")
        self.sizes = tuple(int(s) for s in sizes)
        self.out_act = out_act
        self.dtype = np.dtype(dtype)
        scale = np.ones(self.sizes[0]) if input_scale is None else np.asarray(input_scale, dtype=float)
        if scale.shape != (self.sizes[0],) or np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise ValueError("input_scale must be positive with one entry per input")
        self.input_scale = scale
        self._inv_scale = (1.0 / scale).astype(self.dtype)
        self.params = []
        for fi, fo in zip(self.sizes[:-1], self.sizes[1:]):
            self.params.append(np.zeros((fi, fo), dtype=self.dtype))
            self.params.append(np.zeros(fo, dtype=self.dtype))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def init(self, rng: np.random.Generator) -> "MLP":
        """Uniform fan-in initialisation, layer by layer from ``rng``."""
        for i, fi in enumerate(self.sizes[:-1]):
            bound = 1.0 / math.sqrt(fi)
            W, b = self.params[2 * i], self.params[2 * i + 1]
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)
        return self

    def copy(self) -> "MLP":
        net = MLP(self.sizes, self.out_act, self.input_scale, self.dtype)
        net.params = [p.copy() for p in self.params]
        return net

    def _check(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[-1]}")
        return x

    def _out(self, z):
        if self.out_act == "sigmoid":
            return _sigmoid(z)
        if self.out_act == "tanh":
            return np.tanh(z)
        return z

    def forward(self, x) -> np.ndarray:
        x = self._check(x)
        single = x.ndim == 1
        h = np.atleast_2d(x) * self._inv_scale
        n = len(self.sizes) - 1
        for i in range(n):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = np.tanh(z) if i < n - 1 else self._out(z)
        return h[0] if single else h

    __call__ = forward

    def forward_cache(self, x):
        """Batch forward pass keeping the activations for :meth:`backward`."""
        x = np.atleast_2d(self._check(x))
        acts = [x * self._inv_scale]
        n = len(self.sizes) - 1
        h = acts[0]
        for i in range(n):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = np.tanh(z) if i < n - 1 else self._out(z)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out, need_input_grad: bool = False):
        """Gradients of a scalar loss given its gradient w.r.t. the output.

        Returns parameter gradients in ``params`` order and, optionally, the
        gradient w.r.t. the raw (unscaled) input.
        """
        g = np.asarray(grad_out, dtype=self.dtype).reshape(acts[-1].shape)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite loss gradient")
        y = acts[-1]
        if self.out_act == "sigmoid":
            g = g * y * (1.0 - y)
        elif self.out_act == "tanh":
            g = g * (1.0 - y * y)
        n = len(self.sizes) - 1
        grads = [None] * (2 * n)
        for i in range(n - 1, -1, -1):
            h = acts[i]
            grads[2 * i] = h.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0 or need_input_grad:
                g = g @ self.params[2 * i].T
                if i > 0:
                    g = g * (1.0 - h * h)
        gx = g * self._inv_scale if need_input_grad else None
        return grads, gx

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, v) -> None:
        v = np.asarray(v)
        off = 0
        for p in self.params:
            p[...] = v[off:off + p.size].reshape(p.shape)
            off += p.size
        if off != v.size:
            raise ValueError("flat parameter vector has the wrong length")

    def soft_update(self, source: "MLP", tau: float) -> None:
        """Move parameters toward ``source`` by the fraction ``tau``."""
        for p, q in zip(self.params, source.params):
            p += tau * (q - p)


def policy_forward(net: MLP, s) -> np.ndarray:
    """Deterministic normalized action in (0, 1)."""
    s = np.asarray(s)
    if s.shape[-1] != net.in_dim:
        raise ValueError(f"state has width {s.shape[-1]}, policy expects {net.in_dim}")
    return net.forward(s)


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        a = self.lr * math.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= (a * m / (np.sqrt(v) + self.eps)).astype(p.dtype, copy=False)
