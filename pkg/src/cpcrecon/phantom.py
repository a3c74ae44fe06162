"""Synthetic two-echo flow phantom, coil maps and simulated acquisition."""
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, ShapeError
from .operators import CartesianEncoding, RadialEncoding, ifft2c
from .sampling import SamplingPlan, radial_trajectory

DEFAULT_VENC = 150.0


@dataclass
class PhantomConfig:
    """Geometry and flow settings of the synthetic scene.

    Positions and radii are in normalised coordinates where the field of
    view spans [-1, 1] along both axes.
    """

    venc: float = DEFAULT_VENC
    peak_phase: float = 0.8 * np.pi
    vessel_center: tuple = (0.35, 0.15)
    vessel_radius: float = 0.16
    vessel_magnitude: float = 1.0
    inflow: float = 0.25
    heart_motion: float = 0.12
    # waveform shape, in cardiac-cycle units
    systole_time: float = 0.18
    systole_width: float = 0.07
    dip_time: float = 0.42
    dip_width: float = 0.035
    dip_amplitude: float = -0.3
    baseline: float = 0.06
    spike_frame: int = None
    spike_amplitude: float = -0.6
    constant_velocity: float = None
    profile: str = "parabolic"

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown phantom option(s): {sorted(unknown)}")
        d = dict(d)
        for k in ("vessel_center",):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def flow_waveform(n_t, cfg):
    """Normalised velocity waveform sampled at ``t_j = j / N_T`` (peak ~ 1)."""
    t = np.arange(n_t) / n_t
    w = (np.exp(-((t - cfg.systole_time) / cfg.systole_width) ** 2)
         + cfg.dip_amplitude * np.exp(-((t - cfg.dip_time) / cfg.dip_width) ** 2)
         + cfg.baseline)
    if cfg.spike_frame is not None:
        if not 0 <= cfg.spike_frame < n_t:
            raise ConfigError(f"spike_frame {cfg.spike_frame} outside [0, {n_t})")
        w[cfg.spike_frame] += cfg.spike_amplitude
    return w


def velocity_waveform(n_t, cfg):
    """Peak (centreline) vessel velocity per frame, same units as venc."""
    if cfg.constant_velocity is not None:
        return np.full(n_t, float(cfg.constant_velocity))
    v_peak = cfg.peak_phase / np.pi * cfg.venc
    return v_peak * flow_waveform(n_t, cfg)


@dataclass
class ScenePair:
    """Ground truth for both echoes; arrays are (N_T, N_x, N_y)."""

    magnitude: np.ndarray
    phase0: np.ndarray
    phase1: np.ndarray
    venc: float
    roi: np.ndarray
    velocity: np.ndarray
    config: PhantomConfig = field(default_factory=PhantomConfig)

    @property
    def u0(self):
        return self.magnitude * np.exp(1j * self.phase0)

    @property
    def u1(self):
        return self.magnitude * np.exp(1j * self.phase1)

    def images(self):
        return self.u0, self.u1

    def reference_flow(self, pixel_area=1.0):
        """Analytic flow: ROI area times the mean prescribed vessel velocity."""
        return self.roi.sum() * pixel_area * self.velocity


def _grid(nx, ny):
    x = (np.arange(nx) - nx // 2) / (nx / 2)
    y = (np.arange(ny) - ny // 2) / (ny / 2)
    return np.meshgrid(x, y, indexing="ij")


def _ellipse(xx, yy, cx, cy, ax, ay):
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def vessel_profile(xx, yy, cfg):
    """Spatial velocity profile inside the vessel, zero outside.

    ``plug`` is uniform; ``parabolic`` is laminar flow ``1 - rho^2 / a^2``,
    peaking on the centreline and vanishing at the wall.
    """
    cx, cy = cfg.vessel_center
    rho2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / cfg.vessel_radius ** 2
    inside = rho2 <= 1.0
    if cfg.profile == "plug" or cfg.constant_velocity is not None:
        return inside.astype(np.float64)
    if cfg.profile == "parabolic":
        return np.where(inside, 1.0 - rho2, 0.0)
    raise ConfigError(f"unknown velocity profile {cfg.profile!r}")


def make_phantom(nx, ny, n_t, config=None):
    """Dynamic two-echo scene with one pulsatile vessel.

    Static ellipses form the body, a dark lung pair and a bright spine; a
    "heart" ellipse pulsates over the cycle. The vessel carries laminar (or
    plug) flow following :func:`velocity_waveform` and its magnitude brightens with
    inflow. ``phase0`` is identically zero and ``phase1`` encodes velocity.

    Returns
    -------
    ScenePair
        With ``roi`` the (N_x, N_y) boolean vessel mask.
    """
    cfg = config or PhantomConfig()
    if n_t < 2:
        raise ConfigError("the phantom needs at least two frames")
    cx, cy = cfg.vessel_center
    r = cfg.vessel_radius
    if r <= 0 or abs(cx) + r > 1.0 or abs(cy) + r > 1.0:
        raise ConfigError("vessel does not fit inside the field of view")
    xx, yy = _grid(nx, ny)
    t = np.arange(n_t) / n_t

    base = np.zeros((nx, ny))
    base[_ellipse(xx, yy, 0.0, 0.0, 0.88, 0.72)] = 0.35
    base[_ellipse(xx, yy, -0.45, -0.25, 0.25, 0.3)] = 0.08
    base[_ellipse(xx, yy, 0.45, -0.3, 0.22, 0.28)] = 0.08
    base[_ellipse(xx, yy, 0.0, -0.55, 0.12, 0.1)] = 0.9

    vessel = _ellipse(xx, yy, cx, cy, r, r)
    if not vessel.any():
        raise ConfigError("vessel is smaller than one pixel")
    base[vessel] = 0.0

    mag = np.empty((n_t, nx, ny))
    wave = flow_waveform(n_t, cfg)
    for j in range(n_t):
        m = base.copy()
        s = 1.0 + cfg.heart_motion * np.cos(2 * np.pi * t[j])
        heart = _ellipse(xx, yy, -0.2, 0.2, 0.26 * s, 0.22 * s) & ~vessel
        m[heart] = 0.6
        m[vessel] = cfg.vessel_magnitude * (1.0 + cfg.inflow * np.clip(wave[j], 0, None))
        mag[j] = m

    vel = velocity_waveform(n_t, cfg)
    velocity = vel[:, None, None] * vessel_profile(xx, yy, cfg)[None]
    phase0 = np.zeros_like(mag)
    phase1 = np.pi * velocity / cfg.venc
    if np.any(np.abs(phase1) >= np.pi):
        raise ConfigError("velocity exceeds venc; phase difference would wrap")
    # per-frame mean velocity over the discrete ROI, so flow is exact on the grid
    vmean = velocity[:, vessel].mean(axis=1)
    return ScenePair(mag, phase0, phase1, cfg.venc, vessel, vmean, cfg)


def make_coilmaps(n_coils, nx, ny, width=0.9, phase_slope=0.3):
    """Smooth Gaussian-lobe sensitivities normalised to unit root-sum-of-squares.

    Lobe centres sit just outside the field of view, evenly spread in angle.
    Each coil carries a mild linear phase plus a constant offset.
    """
    if n_coils < 1:
        raise ConfigError("need at least one coil")
    if n_coils == 1:
        return np.ones((1, nx, ny), dtype=np.complex128)
    xx, yy = _grid(nx, ny)
    maps = np.empty((n_coils, nx, ny), dtype=np.complex128)
    for c in range(n_coils):
        a = 2 * np.pi * c / n_coils + np.pi / 4
        px, py = 1.2 * np.cos(a), 1.2 * np.sin(a)
        mag = np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / (2 * width ** 2))
        ph = phase_slope * (xx * np.cos(a) + yy * np.sin(a)) + np.pi * c / n_coils
        maps[c] = mag * np.exp(1j * ph)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / rss[None]


@dataclass
class KSpaceDataset:
    """Measured samples of both echoes plus everything needed to model them.

    ``kspace[j]`` is (N_T, N_C, N_x, N_y) zero-filled for Cartesian plans and
    (N_T, N_C, M) for radial plans. ``reference`` optionally holds the
    reference images (u0, u1) and ``roi`` the (N_x, N_y) flow mask.
    """

    mode: str
    kspace: list
    plan: SamplingPlan
    maps: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0
    venc: float = DEFAULT_VENC
    reference: tuple = None
    roi: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._encs = {}
        n_t = self.n_t
        for j, k in enumerate(self.kspace):
            if k.shape[0] != n_t or k.shape[1] != self.maps.shape[0]:
                raise ShapeError(f"kspace echo {j} shape {k.shape} inconsistent with plan/maps")
            if not np.all(np.isfinite(k)):
                raise ShapeError(f"kspace echo {j} contains non-finite samples")

    @property
    def n_t(self):
        return self.plan.n_t

    @property
    def im_shape(self):
        return self.maps.shape[1:]

    @property
    def dims(self):
        nx, ny = self.im_shape
        return {"n_x": nx, "n_y": ny, "n_t": self.n_t, "n_c": self.maps.shape[0]}

    def encodings(self, toeplitz=False):
        """Per-echo operators; radial ones get Toeplitz kernels on request."""
        key = bool(toeplitz)
        if key not in self._encs:
            self._encs[key] = [make_encoding(self.plan, self.maps, j) for j in (0, 1)]
            if toeplitz and self.mode == "radial":
                for enc, f in zip(self._encs[key], self.kspace):
                    enc.build_toeplitz(f)
        return self._encs[key]


def make_encoding(plan, maps, echo):
    """Operator ``K^echo`` for a sampling plan."""
    if plan.mode == "cartesian":
        return CartesianEncoding(maps, plan.lines[echo])
    if plan.mode == "radial":
        coords, dcomp = radial_trajectory(plan, echo, maps.shape[1:])
        return RadialEncoding(maps, coords, dcomp)
    raise ConfigError(f"unknown sampling mode {plan.mode!r}")


def _noise(rng, shape, sigma):
    # complex Gaussian with E|n|^2 = sigma^2
    return sigma / np.sqrt(2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def acquire(scene, maps, plan, noise_sigma=0.0, seed=0, with_clean=False):
    """Simulate k-space of both echoes under ``plan`` with i.i.d. noise.

    Noise has complex standard deviation ``noise_sigma`` per acquired sample
    (unsampled Cartesian positions stay exactly zero).
    """
    if scene.magnitude.shape[1:] != maps.shape[1:] or scene.magnitude.shape[0] != plan.n_t:
        raise ShapeError("scene, maps and plan dimensions disagree")
    rng = np.random.default_rng(seed)
    kspace, clean = [], []
    for j, u in enumerate(scene.images()):
        enc = make_encoding(plan, maps, j)
        y = enc.forward(u)
        clean.append(y)
        n = _noise(rng, y.shape, noise_sigma) if noise_sigma > 0 else 0.0
        if plan.mode == "cartesian":
            n = n * enc.lines[:, None, None, :]
        kspace.append(y + n)
    ds = KSpaceDataset(plan.mode, kspace, plan, np.asarray(maps), float(noise_sigma), int(seed),
                       scene.venc, reference=scene.images(), roi=scene.roi)
    if with_clean:
        return ds, clean
    return ds


def undersample(full, plan):
    """Retrospectively undersample a fully sampled Cartesian dataset.

    Cartesian plans mask lines; radial plans interpolate the per-coil images
    of the full data onto the spokes with the Kaiser-Bessel NUFFT.
    """
    if full.mode != "cartesian" or not full.plan.lines.all():
        raise ConfigError("retrospective undersampling needs a fully sampled Cartesian dataset")
    if plan.n_t != full.n_t:
        raise ConfigError("plan and dataset disagree on the number of frames")
    kspace = []
    for j, f in enumerate(full.kspace):
        enc = make_encoding(plan, full.maps, j)
        if plan.mode == "cartesian":
            kspace.append(f * enc.lines[:, None, None, :])
        else:
            coil_img = ifft2c(f)
            kspace.append(np.stack([
                enc.scale * enc.nuffts[t].forward(coil_img[t]) for t in range(plan.n_t)
            ]))
    return KSpaceDataset(plan.mode, kspace, plan, full.maps, full.noise_sigma, full.seed,
                         full.venc, reference=full.reference, roi=full.roi, meta=dict(full.meta))
