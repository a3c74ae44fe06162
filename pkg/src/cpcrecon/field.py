"""Magnitude-phase neural field with Fourier-feature inputs.

The network maps ``(x, t) in [-1, 1]^2 x [0, 1]`` to ``(r, phi0, phi1)``:
sin/cos Fourier features of ``x`` and ``t``, five ``tanh`` hidden layers of
width 128 and a linear output layer whose first channel goes through
``exp`` so that the magnitude stays positive.

Forward and reverse passes are written out by hand with NumPy. Weights are
kept in double precision; the matrix products can run in single precision
(``compute_dtype``) while gradients are returned in double.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

M_X = 32
M_T = 32
SIGMA_X = 0.5
SIGMA_T = 1.0
HIDDEN = 128
N_HIDDEN = 5
EXP_CLAMP = 30.0


@dataclass
class FieldParams:
    """Frozen encodings ``B_x`` (m_x, 2), ``B_t`` (m_t, 1) and MLP layers.

    ``weights[l]`` has shape (fan_in, fan_out); layers are applied as
    ``h @ W + b``.
    """

    B_x: np.ndarray
    B_t: np.ndarray
    weights: list
    biases: list
    sigma_x: float = SIGMA_X
    sigma_t: float = SIGMA_T

    def trainable(self):
        """Flat list ``[W1, b1, ..., W6, b6]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return FieldParams(self.B_x.copy(), self.B_t.copy(),
                           [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.sigma_x, self.sigma_t)

    @property
    def n_features(self):
        return 2 * (self.B_x.shape[0] + self.B_t.shape[0])


def init_params(seed=0, m_x=M_X, m_t=M_T, sigma_x=SIGMA_X, sigma_t=SIGMA_T,
                hidden=HIDDEN, n_hidden=N_HIDDEN, n_out=3):
    """Gaussian encodings, Xavier-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    B_x = rng.normal(0.0, sigma_x, size=(m_x, 2))
    B_t = rng.normal(0.0, sigma_t, size=(m_t, 1))
    sizes = [2 * (m_x + m_t)] + [hidden] * n_hidden + [n_out]
    weights, biases = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-lim, lim, size=(fi, fo)))
        biases.append(np.zeros(fo))
    return FieldParams(B_x, B_t, weights, biases, sigma_x, sigma_t)


def encode_space(x, B_x):
    proj = 2 * np.pi * np.asarray(x, dtype=np.float64) @ B_x.T
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)


def encode_time(t, B_t):
    proj = 2 * np.pi * np.asarray(t, dtype=np.float64)[..., None] * B_t[:, 0]
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)


def encode(x, t, params):
    """Feature vector ``(sin 2pi B_x x, cos 2pi B_x x, sin 2pi B_t t, cos 2pi B_t t)``.

    ``x`` is (..., 2) and ``t`` is (...,); returns (..., 2 m_x + 2 m_t).
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape[:-1])
    return np.concatenate([encode_space(x, params.B_x), encode_time(t, params.B_t)], axis=-1)


def mlp_forward(feats, params, compute_dtype=np.float64):
    """Raw network output (P, 3) and the activations needed for backward."""
    for w in params.weights:
        if not np.all(np.isfinite(w)):
            raise NumericError("non-finite network weights")
    h = np.asarray(feats, dtype=compute_dtype)
    acts = [h]
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.astype(compute_dtype, copy=False)
        h += b.astype(compute_dtype, copy=False)
        if i < n - 1:
            np.tanh(h, out=h)
        acts.append(h)
    return acts[-1], acts


def mlp_backward(grad_out, acts, params):
    """Gradients of ``sum(grad_out * out)`` with respect to ``[W1, b1, ...]``."""
    dtype = acts[0].dtype
    g = np.asarray(grad_out, dtype=dtype)
    n = len(params.weights)
    grads = [None] * (2 * n)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            # tanh' = 1 - h^2, formed in one scratch buffer
            d = np.multiply(acts[i + 1], acts[i + 1])
            np.subtract(1, d, out=d)
            d *= g
            g = d
        grads[2 * i] = (acts[i].T @ g).astype(np.float64)
        grads[2 * i + 1] = g.sum(axis=0, dtype=np.float64)
        if i > 0:
            g = g @ params.weights[i].astype(dtype, copy=False).T
    return grads


def output_transform(out):
    """Map raw outputs to ``(r, phi0, phi1)`` with a clamped exponent."""
    o0 = out[..., 0].astype(np.float64)
    r = np.exp(np.clip(o0, -EXP_CLAMP, EXP_CLAMP))
    return r, out[..., 1].astype(np.float64), out[..., 2].astype(np.float64)


def eval_field(points, params, compute_dtype=np.float64):
    """Evaluate ``(r, phi0, phi1)`` at points (P, 3) given as ``(x, y, t)``."""
    points = np.asarray(points, dtype=np.float64)
    feats = encode(points[..., :2], points[..., 2], params)
    out, _ = mlp_forward(feats.reshape(-1, feats.shape[-1]), params, compute_dtype)
    r, p0, p1 = output_transform(out)
    return np.stack([r, p0, p1], axis=-1).reshape(points.shape[:-1] + (3,))


def grid_axes(nx, ny, n_t):
    """Equispaced grid: endpoints of [-1, 1] included, ``t_j = j / (N_T - 1)``."""
    xs = np.linspace(-1.0, 1.0, nx)
    ys = np.linspace(-1.0, 1.0, ny)
    ts = np.arange(n_t) / (n_t - 1) if n_t > 1 else np.zeros(1)
    return xs, ys, ts


class FieldGrid:
    """Cached spatial and temporal features for rasterising one field."""

    def __init__(self, params, nx, ny, n_t):
        self.shape = (nx, ny)
        self.n_t = n_t
        xs, ys, ts = grid_axes(nx, ny, n_t)
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        self.points = np.stack([xx.ravel(), yy.ravel()], axis=-1)
        self.ts = ts
        self.space = encode_space(self.points, params.B_x)
        self.time = encode_time(ts, params.B_t)

    def features(self, frames):
        n = self.points.shape[0]
        frames = np.atleast_1d(frames)
        sp = np.broadcast_to(self.space, (len(frames), n, self.space.shape[1]))
        tm = np.broadcast_to(self.time[frames][:, None, :], (len(frames), n, self.time.shape[1]))
        return np.concatenate([sp, tm], axis=-1).reshape(len(frames) * n, -1)


@dataclass
class Raster:
    """Rasterised field on a set of frames, with the backward cache."""

    R: np.ndarray
    phi0: np.ndarray
    phi1: np.ndarray
    raw0: np.ndarray
    acts: list = field(repr=False)

    @property
    def psi0(self):
        return np.exp(1j * self.phi0)

    @property
    def psi1(self):
        return np.exp(1j * self.phi1)

    @property
    def u0(self):
        return self.R * self.psi0

    @property
    def u1(self):
        return self.R * self.psi1


def rasterize(params, grid, frames=None, compute_dtype=np.float64):
    """Evaluate the field on ``grid`` for ``frames``; images are (nF, N_x, N_y)."""
    frames = np.arange(grid.n_t) if frames is None else np.atleast_1d(frames)
    out, acts = mlp_forward(grid.features(frames), params, compute_dtype)
    shape = (len(frames),) + grid.shape
    r, p0, p1 = output_transform(out)
    return Raster(r.reshape(shape), p0.reshape(shape), p1.reshape(shape),
                  out[:, 0].astype(np.float64).reshape(shape), acts)


def backward(raster, grad_u0, grad_u1, params):
    """Parameter gradients from image-space gradients of a real loss.

    ``grad_uj`` holds ``dL/dRe(u^j) + i dL/dIm(u^j)`` at the rasterised
    points. The chain runs through ``u = R exp(i phi)``, the clamped ``exp``
    and the MLP; the Fourier features are frozen and get no gradient.
    """
    u0, u1 = raster.u0, raster.u1
    dR = np.real(np.conj(grad_u0) * raster.psi0 + np.conj(grad_u1) * raster.psi1)
    dphi0 = np.real(np.conj(grad_u0) * 1j * u0)
    dphi1 = np.real(np.conj(grad_u1) * 1j * u1)
    inside = np.abs(raster.raw0) < EXP_CLAMP
    d0 = dR * raster.R * inside
    grad_out = np.stack([d0.ravel(), dphi0.ravel(), dphi1.ravel()], axis=-1)
    return mlp_backward(grad_out, raster.acts, params)


@dataclass
class AdamState:
    """Adam moments per trainable array plus hyper-parameters."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   0, lr, beta1, beta2, eps)


def adam_step(arrays, grads, state):
    """In-place Adam update of ``arrays``; returns them for convenience."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return arrays
