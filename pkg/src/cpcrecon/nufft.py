"""Kaiser-Bessel gridding NUFFT for 2D images.

The forward transform approximates the type-2 non-uniform DFT

    F(k) = sum_x u(x) exp(-2 pi i k . x)

with pixel coordinates ``x`` centred on the array (index ``N // 2`` is the
origin) and ``k`` in cycles/pixel, ``k in [-0.5, 0.5)`` per axis.
"""
import numpy as np
import scipy.sparse as sp
from scipy.special import i0

from .errors import DomainError, ShapeError

DEFAULT_OVERSAMP = 2.0
DEFAULT_WIDTH = 6


def beatty_beta(width, oversamp):
    """Kaiser-Bessel shape parameter from Beatty et al. (2005)."""
    return np.pi * np.sqrt((width / oversamp) ** 2 * (oversamp - 0.5) ** 2 - 0.8)


def kb_kernel(s, width, beta):
    """Kaiser-Bessel window evaluated at grid offsets ``s`` (zero outside)."""
    s = np.asarray(s, dtype=np.float64)
    arg = 1.0 - (2.0 * s / width) ** 2
    out = np.zeros_like(s)
    inside = arg >= 0
    out[inside] = i0(beta * np.sqrt(arg[inside]))
    return out


def kb_transform(xi, width, beta):
    """Continuous Fourier transform of :func:`kb_kernel` at frequency ``xi``.

    ``xi`` is in cycles per grid unit. For ``(pi W xi)^2 > beta^2`` the
    hyperbolic sine turns into an ordinary sine.
    """
    xi = np.asarray(xi, dtype=np.float64)
    z2 = beta ** 2 - (np.pi * width * xi) ** 2
    z = np.sqrt(np.abs(z2))
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.where(z2 > 0, np.sinh(z) / z, np.sin(z) / z)
    val = np.where(z == 0, 1.0, val)
    return width * val


def _check_coords(coords):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"coords must have shape (M, 2), got {coords.shape}")
    if np.any(coords < -0.5) or np.any(coords >= 0.5):
        raise DomainError("k-space coordinates must lie in [-0.5, 0.5) cycles/pixel")
    return coords


class KBNufft:
    """Gridding NUFFT for one fixed set of sample locations.

    Parameters
    ----------
    coords : array_like, shape (M, 2)
        Sample locations in cycles/pixel along (x, y).
    im_shape : tuple of int
        Image shape ``(N_x, N_y)``.
    oversamp : float
        Grid oversampling factor.
    width : int
        Kernel width in oversampled grid units.
    """

    def __init__(self, coords, im_shape, oversamp=DEFAULT_OVERSAMP, width=DEFAULT_WIDTH):
        self.coords = _check_coords(coords)
        self.im_shape = tuple(int(n) for n in im_shape)
        self.oversamp = float(oversamp)
        self.width = int(width)
        self.beta = beatty_beta(self.width, self.oversamp)
        # even grid sizes keep the centred index convention simple
        self.grid_shape = tuple(2 * int(np.ceil(self.oversamp * n / 2)) for n in self.im_shape)

        scales = []
        for n, g in zip(self.im_shape, self.grid_shape):
            x = np.arange(n) - n // 2
            scales.append(1.0 / kb_transform(x / g, self.width, self.beta))
        self.scaling = np.outer(scales[0], scales[1])
        self.interp = self._interp_matrix()

    @property
    def n_samples(self):
        return self.coords.shape[0]

    def _interp_matrix(self):
        m = self.coords.shape[0]
        gx, gy = self.grid_shape
        offs = np.arange(self.width)
        idx, wts = [], []
        for d, g in enumerate(self.grid_shape):
            kg = self.coords[:, d] * g
            l0 = np.floor(kg - self.width / 2).astype(np.int64) + 1
            lidx = l0[:, None] + offs[None, :]
            wts.append(kb_kernel(kg[:, None] - lidx, self.width, self.beta))
            idx.append((lidx + g // 2) % g)
        rows = np.repeat(np.arange(m), self.width * self.width)
        cols = (idx[0][:, :, None] * gy + idx[1][:, None, :]).ravel()
        vals = (wts[0][:, :, None] * wts[1][:, None, :]).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, gx * gy))

    def _pad(self, u):
        nx, ny = self.im_shape
        gx, gy = self.grid_shape
        out = np.zeros(u.shape[:-2] + (gx, gy), dtype=np.complex128)
        sx, sy = gx // 2 - nx // 2, gy // 2 - ny // 2
        out[..., sx:sx + nx, sy:sy + ny] = u
        return out

    def _crop(self, g):
        nx, ny = self.im_shape
        gx, gy = self.grid_shape
        sx, sy = gx // 2 - nx // 2, gy // 2 - ny // 2
        return g[..., sx:sx + nx, sy:sy + ny]

    def forward(self, u):
        """Image(s) ``(..., N_x, N_y)`` to samples ``(..., M)``."""
        u = np.asarray(u)
        if u.shape[-2:] != self.im_shape:
            raise ShapeError(f"image shape {u.shape[-2:]} does not match {self.im_shape}")
        lead = u.shape[:-2]
        grid = self._pad(u * self.scaling)
        grid = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(grid, axes=(-2, -1))), axes=(-2, -1))
        flat = grid.reshape(-1, grid.shape[-2] * grid.shape[-1])
        out = (self.interp @ flat.T).T
        return out.reshape(lead + (self.n_samples,))

    def adjoint(self, y):
        """Samples ``(..., M)`` to image(s) ``(..., N_x, N_y)``."""
        y = np.asarray(y)
        if y.shape[-1] != self.n_samples:
            raise ShapeError(f"expected {self.n_samples} samples, got {y.shape[-1]}")
        lead = y.shape[:-1]
        flat = (self.interp.T @ y.reshape(-1, self.n_samples).T).T
        grid = flat.reshape(lead + self.grid_shape)
        # adjoint of the unnormalised forward FFT is N * ifft
        size = self.grid_shape[0] * self.grid_shape[1]
        grid = np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(grid, axes=(-2, -1))), axes=(-2, -1)) * size
        return self._crop(grid) * self.scaling


def apply_nufft(u, coords, oversamp=DEFAULT_OVERSAMP, width=DEFAULT_WIDTH):
    """One-shot forward NUFFT of a single image frame."""
    u = np.asarray(u)
    return KBNufft(coords, u.shape[-2:], oversamp, width).forward(u)


def apply_nufft_adjoint(samples, coords, im_shape, oversamp=DEFAULT_OVERSAMP, width=DEFAULT_WIDTH):
    """One-shot adjoint NUFFT back onto an ``im_shape`` grid."""
    return KBNufft(coords, im_shape, oversamp, width).adjoint(samples)


def ndft_matrix(coords, im_shape):
    """Dense non-uniform DFT matrix, shape (M, N_x * N_y). For small problems."""
    coords = _check_coords(coords)
    nx, ny = im_shape
    x = np.arange(nx) - nx // 2
    y = np.arange(ny) - ny // 2
    xx, yy = np.meshgrid(x, y, indexing="ij")
    phase = coords[:, :1] * xx.ravel()[None, :] + coords[:, 1:] * yy.ravel()[None, :]
    return np.exp(-2j * np.pi * phase)
