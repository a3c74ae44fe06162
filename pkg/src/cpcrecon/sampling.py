"""Retrospective undersampling schedules.

Cartesian plans follow a centre-first rule plus round-robin random draws of
phase-encode lines; radial plans use a golden-angle spoke counter shared by
both echoes.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

GOLDEN_ANGLE = np.pi * (np.sqrt(5.0) - 1.0) / 2.0  # 111.246...deg
N_CENTRAL = 16
SUPPORTED_ACCEL = (1, 2, 4, 8, 16, 32, 64)


@dataclass
class SamplingPlan:
    """Sampling description for both echoes.

    ``lines`` is a bool array (2, N_T, N_y) for Cartesian plans; ``angles``
    is (2, N_T, spokes_per_frame) in radians for radial plans.
    """

    mode: str
    acceleration: float
    n_t: int
    n_y: int
    seed: int
    lines: np.ndarray = None
    angles: np.ndarray = None
    samples_per_spoke: int = None
    meta: dict = field(default_factory=dict)

    @property
    def per_frame(self):
        """Lines (Cartesian) or spokes (radial) per frame and echo."""
        if self.mode == "cartesian":
            return int(self.lines[0, 0].sum())
        return self.angles.shape[2]

    def to_dict(self):
        d = {
            "mode": self.mode,
            "acceleration": self.acceleration,
            "n_t": self.n_t,
            "n_y": self.n_y,
            "seed": self.seed,
        }
        if self.mode == "cartesian":
            d["lines"] = [
                [np.flatnonzero(fr).tolist() for fr in echo] for echo in self.lines
            ]
        else:
            d["angles"] = self.angles.tolist()
            d["samples_per_spoke"] = self.samples_per_spoke
        return d

    @classmethod
    def from_dict(cls, d):
        mode = d["mode"]
        if mode == "cartesian":
            lines = np.zeros((2, d["n_t"], d["n_y"]), dtype=bool)
            for e, echo in enumerate(d["lines"]):
                for t, idx in enumerate(echo):
                    lines[e, t, idx] = True
            return cls(mode, d["acceleration"], d["n_t"], d["n_y"], d["seed"], lines=lines)
        if mode == "radial":
            return cls(mode, d["acceleration"], d["n_t"], d["n_y"], d["seed"],
                       angles=np.asarray(d["angles"], dtype=np.float64),
                       samples_per_spoke=d["samples_per_spoke"])
        raise ConfigError(f"unknown sampling mode {mode!r}")


def lines_per_frame(n_y, accel):
    """Phase-encode lines per frame, ``ceil(N_y / R)``.

    For N_y=142 this gives 71, 36, 18, 9, 5, 3 at R=2..64.
    """
    if accel < 1:
        raise ConfigError(f"acceleration must be >= 1, got {accel}")
    if accel > n_y:
        raise ConfigError(f"acceleration {accel} exceeds N_y={n_y}")
    return int(np.ceil(n_y / accel - 1e-9))


def check_accel(accel):
    """Accept only the supported factors (1 means full sampling)."""
    if accel not in SUPPORTED_ACCEL:
        raise ConfigError(f"unsupported acceleration {accel!r}; choose one of "
                          f"{', '.join(map(str, SUPPORTED_ACCEL))}")
    return int(accel)


def fixed_lines(n_y, n_lines):
    """Lines included in every frame for a given per-frame budget."""
    c = n_y // 2
    if n_lines >= n_y:
        return np.arange(n_y)
    if n_lines > N_CENTRAL:
        return np.arange(c - N_CENTRAL // 2, c + N_CENTRAL // 2)
    if n_lines >= 3:
        return np.array([c - 1, c + 1])
    if n_lines == 2:
        return np.array([c])
    return np.array([], dtype=np.int64)


class _Pool:
    """Lines not yet sampled in the current sweep over the candidate set."""

    def __init__(self, candidates, rng):
        self.candidates = np.asarray(candidates)
        self.rng = rng
        self.left = list(self.candidates)

    def draw(self, k, avoid=()):
        """Draw ``k`` distinct lines, preferring ones not in ``avoid``."""
        picked = []
        while len(picked) < k:
            if not self.left:
                self.left = [c for c in self.candidates if c not in picked]
                if not self.left:
                    break
            need = k - len(picked)
            pref = [c for c in self.left if c not in avoid]
            if len(pref) >= need:
                chosen = list(self.rng.choice(pref, size=need, replace=False))
            else:
                rest = [c for c in self.left if c in avoid]
                m = min(need - len(pref), len(rest))
                chosen = pref + list(self.rng.choice(rest, size=m, replace=False))
            for c in chosen:
                self.left.remove(c)
            picked += [int(c) for c in chosen]
        return picked


def cartesian_plan(n_y, n_t, accel, seed=0):
    """Variable-density line schedule for both echoes.

    Every frame holds the fixed central lines (see :func:`fixed_lines`) plus
    random lines drawn without replacement from a per-echo pool that is
    refilled once exhausted. Echo 1 avoids the lines echo 0 drew in the same
    frame whenever its pool allows.
    """
    accel = check_accel(accel)
    n_lines = lines_per_frame(n_y, accel)
    lines = np.zeros((2, n_t, n_y), dtype=bool)
    fixed = fixed_lines(n_y, n_lines)
    lines[:, :, fixed] = True
    k = n_lines - len(fixed)
    if k > 0:
        rng = np.random.default_rng(seed)
        cand = np.setdiff1d(np.arange(n_y), fixed)
        pools = [_Pool(cand, rng), _Pool(cand, rng)]
        for t in range(n_t):
            d0 = pools[0].draw(k)
            d1 = pools[1].draw(k, avoid=set(d0))
            lines[0, t, d0] = True
            lines[1, t, d1] = True
    return SamplingPlan("cartesian", accel, n_t, n_y, int(seed), lines=lines)


def coverage_frames(n_y, accel):
    """Frames needed for the random draws of one echo to visit every line."""
    n_lines = lines_per_frame(n_y, accel)
    nf = len(fixed_lines(n_y, n_lines))
    k = n_lines - nf
    if k == 0:
        return 1
    return int(np.ceil((n_y - nf) / k))


def radial_plan(n_t, spokes_per_frame, seed=0, n_y=None, samples_per_spoke=None, accel=None):
    """Golden-angle spokes alternating between echoes.

    Global spoke ``n`` has angle ``n * GOLDEN_ANGLE`` and belongs to echo
    ``n % 2``; frame ``t`` owns spokes ``2 S t .. 2 S (t+1) - 1``.
    """
    if spokes_per_frame < 1:
        raise ConfigError("spokes_per_frame must be >= 1")
    s = int(spokes_per_frame)
    n = np.arange(2 * s * n_t).reshape(n_t, s, 2)
    ang = np.mod(n * GOLDEN_ANGLE, 2 * np.pi)
    angles = np.moveaxis(ang, 2, 0).copy()
    if accel is None:
        accel = (n_y / s) if n_y else float("nan")
    return SamplingPlan("radial", accel, n_t, n_y, int(seed), angles=angles,
                        samples_per_spoke=samples_per_spoke or n_y)


def radial_plan_for_accel(n_y, n_t, accel, seed=0, samples_per_spoke=None):
    """Radial plan with as many spokes per frame as Cartesian lines at ``accel``."""
    accel = check_accel(accel)
    s = lines_per_frame(n_y, accel)
    return radial_plan(n_t, s, seed, n_y=n_y, samples_per_spoke=samples_per_spoke or n_y,
                       accel=accel)


def spoke_positions(samples_per_spoke, kmax=0.5):
    """Signed radial positions along a spoke, symmetric about its centre."""
    s = samples_per_spoke
    return (np.arange(s) - (s - 1) / 2) * (2 * kmax / s)


def radial_trajectory(plan, echo, im_shape):
    """k-space coordinates (N_T, M, 2) and density compensation (N_T, M).

    Density weights ``d^2`` follow a ramp ``|k|`` floored at a quarter of
    the sample spacing (the share of the DC disc owned by one spoke). They
    are scaled so that, with the ``1/sqrt(N)`` sample scaling of
    :class:`~cpcrecon.operators.RadialEncoding`, one spoke carries the
    energy of one fully sampled Cartesian line.
    """
    nx, ny = im_shape
    s = plan.samples_per_spoke
    pos = spoke_positions(s)
    ang = plan.angles[echo]
    kx = np.cos(ang)[..., None] * pos
    ky = np.sin(ang)[..., None] * pos
    coords = np.stack([kx, ky], axis=-1).reshape(plan.n_t, -1, 2)
    ramp = np.maximum(np.abs(pos), 0.25 / s)
    w = ramp / ramp.sum() * nx
    w = np.broadcast_to(w, ang.shape + (s,)).reshape(plan.n_t, -1)
    return coords, np.sqrt(w)
