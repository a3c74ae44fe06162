"""Forward, adjoint and normal operators for one velocity encoding.

Image series are stored frame-first, shape ``(N_T, N_x, N_y)``. Coil maps
have shape ``(N_C, N_x, N_y)``. Cartesian k-space is kept zero-filled on the
full grid, shape ``(N_T, N_C, N_x, N_y)``; radial k-space has shape
``(N_T, N_C, M)`` with ``M`` samples per frame.
"""
import os
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import ShapeError
from .nufft import DEFAULT_OVERSAMP, DEFAULT_WIDTH, KBNufft

TOEPLITZ_WIDTH = 8


def workers():
    """FFT worker count from ``CPCRECON_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CPCRECON_WORKERS", "1")))
    except ValueError:
        return 1


def fft2c(x):
    """Centred orthonormal 2D FFT over the last two axes."""
    return np.fft.fftshift(
        sfft.fft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho", workers=workers()),
        axes=(-2, -1))


def ifft2c(x):
    """Centred orthonormal inverse 2D FFT over the last two axes."""
    return np.fft.fftshift(
        sfft.ifft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho", workers=workers()),
        axes=(-2, -1))


def _vdot(a, b):
    return np.vdot(a, b)


def _frames(frames, n_t):
    if frames is None:
        return np.arange(n_t)
    return np.atleast_1d(np.asarray(frames, dtype=np.int64))


def apply_cartesian(u, maps, mask_line):
    """Per-coil masked k-space ``M_t F S_c u`` of a single frame.

    Parameters
    ----------
    u : ndarray, shape (N_x, N_y)
    maps : ndarray, shape (N_C, N_x, N_y)
    mask_line : ndarray of bool, shape (N_y,)
        Sampled phase-encode lines (the second image axis).
    """
    u = np.asarray(u)
    maps = np.asarray(maps)
    mask_line = np.asarray(mask_line, dtype=bool)
    if u.ndim != 2 or maps.shape[1:] != u.shape:
        raise ShapeError(f"image {u.shape} incompatible with maps {maps.shape}")
    if mask_line.shape != (u.shape[1],):
        raise ShapeError(f"mask of shape {mask_line.shape} does not match N_y={u.shape[1]}")
    return fft2c(maps * u[None]) * mask_line[None, None, :]


class CartesianEncoding:
    """``K_{c,t} = M_t F S_c`` for every frame of one echo.

    Methods taking data ``f`` expect the full series (N_T, N_C, N_x, N_y)
    and pick ``f[frames]`` themselves.

    Parameters
    ----------
    maps : ndarray, shape (N_C, N_x, N_y)
    lines : ndarray of bool, shape (N_T, N_y)
    """

    mode = "cartesian"

    def __init__(self, maps, lines):
        self.maps = np.asarray(maps, dtype=np.complex128)
        self.lines = np.asarray(lines, dtype=bool)
        if self.maps.ndim != 3:
            raise ShapeError("maps must have shape (N_C, N_x, N_y)")
        if self.lines.ndim != 2 or self.lines.shape[1] != self.maps.shape[2]:
            raise ShapeError(f"line mask {self.lines.shape} does not match N_y={self.maps.shape[2]}")
        self.n_t = self.lines.shape[0]
        self.im_shape = self.maps.shape[1:]

    def _mask(self, frames):
        return self.lines[frames][:, None, None, :]

    def _check(self, u, frames):
        if u.shape != (len(frames),) + self.im_shape:
            raise ShapeError(f"expected images of shape {(len(frames),) + self.im_shape}, got {u.shape}")

    def forward(self, u, frames=None):
        frames = _frames(frames, self.n_t)
        u = np.asarray(u)
        self._check(u, frames)
        return fft2c(self.maps[None] * u[:, None]) * self._mask(frames)

    def adjoint(self, y, frames=None):
        frames = _frames(frames, self.n_t)
        img = ifft2c(np.asarray(y) * self._mask(frames))
        return np.sum(np.conj(self.maps)[None] * img, axis=1)

    def normal(self, u, frames=None):
        return self.adjoint(self.forward(u, frames), frames)

    def rhs(self, f, frames=None):
        """Coil-combined adjoint image ``sum_c K^H f``."""
        frames = _frames(frames, self.n_t)
        return self.adjoint(np.asarray(f)[frames], frames)

    def weighted_residual(self, u, f, frames=None):
        frames = _frames(frames, self.n_t)
        return self.forward(u, frames) - np.asarray(f)[frames] * self._mask(frames)

    def loss_grad(self, u, f, frames=None):
        """Data term on ``frames`` and its gradient ``K^H (K u - f)``."""
        res = self.weighted_residual(u, f, frames)
        return 0.5 * float(np.sum(np.abs(res) ** 2)), self.adjoint(res, frames)


@dataclass
class ToeplitzKernel:
    """Precomputed normal-operator kernels and coil-combined adjoint images.

    ``kernels`` has shape (N_T, 2 N_x, 2 N_y) and holds the FFT of the
    circularly embedded point-spread function of ``(d F)^H (d F)``.
    ``adjoint_image`` has shape (N_T, N_x, N_y). ``frame_constants`` holds
    the data-only term ``1/2 sum_c |d f|^2`` of the quadratic loss
    expansion per frame; it carries no gradient and is kept for reporting.
    """

    kernels: np.ndarray
    adjoint_image: np.ndarray
    frame_constants: np.ndarray

    @property
    def constant(self):
        return float(np.sum(self.frame_constants))


class RadialEncoding:
    """``K_{c,t} = s F~_t S_c`` with density compensation ``d_t``.

    ``s = 1 / sqrt(N_x N_y)`` puts samples on the same scale as the
    orthonormal Cartesian FFT, so noise levels are comparable across modes.

    Parameters
    ----------
    maps : ndarray, shape (N_C, N_x, N_y)
    coords : ndarray, shape (N_T, M, 2)
        k-space locations in cycles/pixel.
    dcomp : ndarray, shape (N_T, M)
        Density compensation ``d_t`` (the loss uses ``d_t^2``).
    """

    mode = "radial"

    def __init__(self, maps, coords, dcomp, oversamp=DEFAULT_OVERSAMP, width=DEFAULT_WIDTH):
        self.maps = np.asarray(maps, dtype=np.complex128)
        coords = np.asarray(coords, dtype=np.float64)
        self.dcomp = np.asarray(dcomp, dtype=np.float64)
        if coords.ndim != 3 or coords.shape[:2] != self.dcomp.shape:
            raise ShapeError("coords (N_T, M, 2) and dcomp (N_T, M) disagree")
        self.coords = coords
        self.n_t = coords.shape[0]
        self.im_shape = self.maps.shape[1:]
        self.scale = 1.0 / np.sqrt(self.im_shape[0] * self.im_shape[1])
        self.nuffts = [KBNufft(c, self.im_shape, oversamp, width) for c in coords]
        self.toeplitz = None

    def forward(self, u, frames=None):
        frames = _frames(frames, self.n_t)
        u = np.asarray(u)
        if u.shape != (len(frames),) + self.im_shape:
            raise ShapeError(f"expected images of shape {(len(frames),) + self.im_shape}, got {u.shape}")
        return np.stack([
            self.scale * self.nuffts[t].forward(self.maps * u[i][None])
            for i, t in enumerate(frames)
        ])

    def adjoint(self, y, frames=None):
        frames = _frames(frames, self.n_t)
        return np.stack([
            self.scale * np.sum(np.conj(self.maps) * self.nuffts[t].adjoint(y[i]), axis=0)
            for i, t in enumerate(frames)
        ])

    def normal_direct(self, u, frames=None):
        """``sum_c (d K)^H (d K) u`` through the NUFFT pair."""
        frames = _frames(frames, self.n_t)
        y = self.forward(u, frames) * (self.dcomp[frames] ** 2)[:, None, :]
        return self.adjoint(y, frames)

    def normal(self, u, frames=None):
        if self.toeplitz is None:
            return self.normal_direct(u, frames)
        return self.normal_toeplitz(u, frames)

    def rhs(self, f, frames=None):
        """Coil-combined ``sum_c (d K)^H d f`` (precomputed once Toeplitz is built)."""
        frames = _frames(frames, self.n_t)
        if self.toeplitz is not None:
            return self.toeplitz.adjoint_image[frames]
        return self.adjoint(np.asarray(f)[frames] * (self.dcomp[frames] ** 2)[:, None, :], frames)

    def weighted_residual(self, u, f, frames=None):
        frames = _frames(frames, self.n_t)
        return (self.forward(u, frames) - np.asarray(f)[frames]) * self.dcomp[frames][:, None, :]

    def loss_grad(self, u, f, frames=None):
        """Data term on ``frames`` and its gradient.

        With Toeplitz kernels the loss uses the quadratic expansion
        ``1/2 <T u, u> - Re <u, b> + c`` and the gradient ``T u - b``.
        """
        frames = _frames(frames, self.n_t)
        if self.toeplitz is None:
            res = self.weighted_residual(u, f, frames)
            grad = self.adjoint(res * self.dcomp[frames][:, None, :], frames)
            return 0.5 * float(np.sum(np.abs(res) ** 2)), grad
        tu = self.normal_toeplitz(u, frames)
        b = self.toeplitz.adjoint_image[frames]
        loss = (0.5 * np.real(np.vdot(u, tu)) - np.real(np.vdot(u, b))
                + float(np.sum(self.toeplitz.frame_constants[frames])))
        return float(loss), tu - b

    def build_toeplitz(self, f, width=TOEPLITZ_WIDTH):
        """Precompute kernels and adjoint images for data ``f`` (N_T, N_C, M).

        The PSF is gridded with a wider kernel than the forward NUFFT so the
        Toeplitz route is closer to the exact normal operator than the
        composed forward/adjoint pair.
        """
        self.toeplitz = build_toeplitz(self, f, width)
        return self.toeplitz

    def normal_toeplitz(self, u, frames=None):
        frames = _frames(frames, self.n_t)
        return toeplitz_normal(self.toeplitz.kernels[frames], self.maps, u)


def build_toeplitz(enc, f, width=TOEPLITZ_WIDTH):
    """Build the :class:`ToeplitzKernel` of a :class:`RadialEncoding`."""
    nx, ny = enc.im_shape
    f = np.asarray(f)
    if f.shape[0] != enc.n_t or f.shape[1] != enc.maps.shape[0]:
        raise ShapeError(f"data of shape {f.shape} does not match encoding")
    w = enc.dcomp ** 2
    kernels = np.empty((enc.n_t, 2 * nx, 2 * ny), dtype=np.complex128)
    for t in range(enc.n_t):
        big = KBNufft(enc.coords[t], (2 * nx, 2 * ny), enc.nuffts[t].oversamp, width)
        psf = big.adjoint(w[t].astype(np.complex128)) * enc.scale ** 2
        kernels[t] = np.fft.fft2(np.fft.ifftshift(psf))
    saved, enc.toeplitz = enc.toeplitz, None
    try:
        adj = enc.rhs(f)
    finally:
        enc.toeplitz = saved
    const = 0.5 * np.sum(np.abs(f * enc.dcomp[:, None, :]) ** 2, axis=(1, 2))
    return ToeplitzKernel(kernels, adj, const)


def toeplitz_normal(kernels, maps, u):
    """Apply ``sum_c S_c^H T_t S_c`` with per-frame kernels to ``u`` (nF, N_x, N_y)."""
    nx, ny = u.shape[-2:]
    pad = np.zeros(u.shape[:1] + maps.shape[:1] + (2 * nx, 2 * ny), dtype=np.complex128)
    pad[..., :nx, :ny] = maps[None] * u[:, None]
    w = workers()
    out = sfft.ifft2(sfft.fft2(pad, workers=w) * kernels[:, None], workers=w)[..., :nx, :ny]
    return np.sum(np.conj(maps)[None] * out, axis=1)


def data_fidelity(enc, u, f, frames=None, use_toeplitz=False):
    """Data term ``1/2 sum_t sum_c ||d_t (K_{c,t} u_t - f_{c,t})||^2``.

    With ``use_toeplitz`` the radial loss is evaluated through its quadratic
    expansion, including the stored constant, so both routes agree.
    """
    frames = _frames(frames, enc.n_t)
    if use_toeplitz and getattr(enc, "toeplitz", None) is not None:
        tk = enc.toeplitz
        quad = np.real(_vdot(u, enc.normal_toeplitz(u, frames)))
        cross = np.real(_vdot(u, tk.adjoint_image[frames]))
        return 0.5 * quad - cross + float(np.sum(tk.frame_constants[frames]))
    r = enc.weighted_residual(u, f, frames)
    return 0.5 * float(np.sum(np.abs(r) ** 2))


def data_fidelity_grad(enc, u, f, frames=None):
    """Gradient ``N u - b`` with respect to ``Re u + i Im u``."""
    frames = _frames(frames, enc.n_t)
    return enc.normal(u, frames) - enc.rhs(f, frames)


def joint_data_fidelity(encs, us, fs, frames=None, use_toeplitz=False):
    """Sum of the per-echo data terms ``D(K^0 u^0, f^0) + D(K^1 u^1, f^1)``."""
    return sum(
        data_fidelity(e, u, f, frames, use_toeplitz) for e, u, f in zip(encs, us, fs)
    )


def power_norm(normal, shape, n_iter=20, seed=0):
    """Largest eigenvalue of a Hermitian PSD operator by power iteration."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        y = normal(x)
        lam = float(np.real(_vdot(x, y)))
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        x = y / nrm
    return lam
