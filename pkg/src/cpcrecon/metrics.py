"""Flow over a region of interest and the reported error metrics."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

PSNR_CAP = 200.0


@dataclass
class FlowSeries:
    """Flow per frame, ``Q`` (N_T,), in area x velocity units."""

    Q: np.ndarray
    roi: np.ndarray
    venc: float
    pixel_area: float = 1.0


def velocity(u0, u1, venc):
    """Velocity from the phase difference ``angle(u1 conj(u0)) * venc / pi``."""
    return np.angle(u1 * np.conj(u0)) * venc / np.pi


def flow(u0, u1, roi, venc, pixel_area=1.0):
    """Per-frame flow ``Q_t = |A_t| mean_{x in A_t} v(x, t)``.

    ``roi`` is either a static (N_x, N_y) mask or one mask per frame
    (N_T, N_x, N_y). ``|A_t|`` is the ROI pixel count times ``pixel_area``.
    """
    u0 = np.asarray(u0)
    roi = np.asarray(roi, dtype=bool)
    masks = np.broadcast_to(roi, u0.shape) if roi.ndim == 2 else roi
    counts = masks.reshape(masks.shape[0], -1).sum(axis=1)
    if np.any(counts == 0):
        raise ConfigError("empty ROI in at least one frame")
    v = velocity(u0, u1, venc)
    vsum = np.sum(np.where(masks, v, 0.0), axis=(1, 2))
    area = counts * pixel_area
    Q = area * (vsum / counts)
    return FlowSeries(Q, roi, venc, pixel_area)


def flow_errors(Q, Q_ref):
    """2-norm, inf-norm and overall relative flow errors, in percent."""
    Q = np.asarray(getattr(Q, "Q", Q), dtype=np.float64)
    Q_ref = np.asarray(getattr(Q_ref, "Q", Q_ref), dtype=np.float64)
    n2 = np.linalg.norm(Q_ref)
    ninf = np.max(np.abs(Q_ref))
    total = np.sum(Q_ref)
    if n2 == 0 or total == 0:
        raise ConfigError("reference flow is zero; relative errors are undefined")
    e2 = np.linalg.norm(Q - Q_ref) / n2 * 100
    einf = np.max(np.abs(Q - Q_ref)) / ninf * 100
    eall = abs(np.sum(Q) - total) / abs(total) * 100
    return float(e2), float(einf), float(eall)


def frame_errors(Q, Q_ref):
    """Absolute per-frame flow error ``|Q_t - Q*_t|``."""
    return np.abs(np.asarray(Q) - np.asarray(Q_ref))


def combine_magnitudes(u0, u1):
    """Average magnitude of two independently reconstructed echoes."""
    return (np.abs(u0) + np.abs(u1)) / 2


def psnr(u, u_ref, region=None):
    """PSNR in dB of magnitude images over ``region``.

    Peak is the largest reference magnitude inside the region. A perfect
    match returns :data:`PSNR_CAP`.
    """
    a = np.abs(np.asarray(u))
    b = np.abs(np.asarray(u_ref))
    if region is not None:
        region = np.broadcast_to(np.asarray(region, dtype=bool), b.shape)
        a, b = a[region], b[region]
    if a.size == 0:
        raise ConfigError("empty PSNR region")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(b.max() ** 2 / mse)))


def relative_error(u, u_ref):
    return float(np.linalg.norm(u - u_ref) / np.linalg.norm(u_ref))


def geometric_mean(values):
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= 0):
        return 0.0 if np.any(values == 0) else float("nan")
    return float(np.exp(np.mean(np.log(values))))


def zoom_region(roi, n_t=None, margin=6):
    """Box around the ROI, grown by ``margin`` pixels, for zoomed PSNR."""
    roi = np.asarray(roi, dtype=bool)
    m2 = roi if roi.ndim == 2 else roi.any(axis=0)
    xs, ys = np.nonzero(m2)
    box = np.zeros(m2.shape, dtype=bool)
    box[max(0, xs.min() - margin):xs.max() + margin + 1,
        max(0, ys.min() - margin):ys.max() + margin + 1] = True
    if n_t is not None:
        box = np.broadcast_to(box, (n_t,) + m2.shape)
    return box


def evaluate(u0, u1, ref0, ref1, roi, venc, pixel_area=1.0, region=None):
    """All reported numbers for one reconstruction against a reference."""
    q = flow(u0, u1, roi, venc, pixel_area).Q
    q_ref = flow(ref0, ref1, roi, venc, pixel_area).Q
    e2, einf, eall = flow_errors(q, q_ref)
    if region is None:
        region = zoom_region(roi)
    mag = combine_magnitudes(u0, u1)
    mag_ref = combine_magnitudes(ref0, ref1)
    return {
        "e2": e2,
        "einf": einf,
        "eoverall": eall,
        "psnr": psnr(mag, mag_ref, region),
        "Q": q.tolist(),
        "Q_ref": q_ref.tolist(),
    }
