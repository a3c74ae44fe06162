"""Reconstruction methods: SWS, LLR (FISTA), neural field, hybrid, embedding."""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .field import (AdamState, FieldGrid, FieldParams, adam_step, backward, init_params,
                    rasterize)
from .operators import data_fidelity, power_norm

log = logging.getLogger(__name__)

BLOCK = 8
CG_MAX_ITER = 30
CG_TOL = 1e-10
LLR_ITERS = 30


# ---------------------------------------------------------------- CG


@dataclass
class CGInfo:
    iterations: int
    residual_norms: list = field(default_factory=list)
    converged: np.ndarray = None


def _bdot(a, b):
    """Per-frame inner product over all trailing axes."""
    return np.sum(np.conj(a) * b, axis=tuple(range(1, a.ndim)))


def _bshape(s, ndim):
    return s.reshape((-1,) + (1,) * (ndim - 1))


def cg(apply_A, b, x0=None, max_iter=CG_MAX_ITER, tol=CG_TOL):
    """Conjugate gradient on a batch of independent Hermitian PSD systems.

    The leading axis of ``b`` indexes independent systems (frames); each has
    its own step sizes and stops once ``||r|| <= tol * ||b||``.

    Raises
    ------
    NumericError
        If an iterate turns non-finite; the message names the frame.
    """
    b = np.asarray(b, dtype=np.complex128)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.complex128)
    r = b - apply_A(x) if x0 is not None else b.copy()
    p = r.copy()
    rs = np.real(_bdot(r, r))
    bnorm = np.sqrt(np.real(_bdot(b, b)))
    thresh = tol * np.where(bnorm > 0, bnorm, 1.0)
    info = CGInfo(0, [np.sqrt(rs)])
    for it in range(max_iter):
        active = np.sqrt(rs) > thresh
        if not active.any():
            break
        Ap = apply_A(p)
        pAp = np.real(_bdot(p, Ap))
        ok = active & (pAp > 0)
        alpha = np.where(ok, rs / np.where(ok, pAp, 1.0), 0.0)
        x += _bshape(alpha, x.ndim) * p
        r -= _bshape(alpha, x.ndim) * Ap
        rs_new = np.real(_bdot(r, r))
        bad = ~np.isfinite(rs_new)
        if bad.any():
            raise NumericError(f"CG diverged in frame {int(np.flatnonzero(bad)[0])}")
        beta = np.where(ok, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + _bshape(beta, x.ndim) * p
        rs = np.where(ok, rs_new, rs)
        info.iterations = it + 1
        info.residual_norms.append(np.sqrt(rs))
    info.converged = np.sqrt(rs) <= thresh
    return x, info


# ---------------------------------------------------------------- SWS / hybrid


def _echo_system(enc, f, lam=0.0, prior=None):
    def apply(u):
        out = enc.normal(u)
        return out + lam * u if lam else out

    rhs = enc.rhs(f)
    if lam:
        rhs = rhs + lam * prior
    return apply, rhs


def solve_sws(dataset, max_iter=CG_MAX_ITER, tol=CG_TOL):
    """Sensitivity weighted solution: CG on ``sum_c K^H K u = sum_c K^H f`` per echo."""
    encs = dataset.encodings(toeplitz=True)
    out = []
    for enc, f in zip(encs, dataset.kspace):
        apply, rhs = _echo_system(enc, f)
        u, _ = cg(apply, rhs, max_iter=max_iter, tol=tol)
        out.append(u)
    return tuple(out)


def solve_hybrid(dataset, field_images, lam, max_iter=CG_MAX_ITER, tol=CG_TOL):
    """Voxel solution pulled towards the field: ``(N + lam I) u = b + lam u_field``.

    CG starts from zero, so ``lam = 0`` gives exactly the SWS iterates.
    """
    if lam < 0:
        raise ConfigError("lambda_hyb must be >= 0")
    encs = dataset.encodings(toeplitz=True)
    out = []
    for enc, f, prior in zip(encs, dataset.kspace, field_images):
        apply, rhs = _echo_system(enc, f, lam, np.asarray(prior))
        u, _ = cg(apply, rhs, max_iter=max_iter, tol=tol)
        out.append(u)
    return tuple(out)


# ---------------------------------------------------------------- LLR


def svt(M, tau):
    """Singular value soft-thresholding ``U max(S - tau, 0) V^H``.

    Works on stacks of matrices (..., m, n).
    """
    if tau < 0:
        raise ConfigError("threshold must be >= 0")
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (U * s[..., None, :]) @ Vh


def to_casorati(u, block=BLOCK):
    """Non-overlapping ``block x block x N_T`` patches as (n_bx, n_by, block^2, N_T).

    Images whose sides are not multiples of ``block`` are zero-padded.
    """
    n_t, nx, ny = u.shape
    px, py = -nx % block, -ny % block
    if px or py:
        u = np.pad(u, ((0, 0), (0, px), (0, py)))
    bx, by = u.shape[1] // block, u.shape[2] // block
    p = u.reshape(n_t, bx, block, by, block).transpose(1, 3, 2, 4, 0)
    return p.reshape(bx, by, block * block, n_t)


def from_casorati(p, shape, block=BLOCK):
    n_t, nx, ny = shape
    bx, by = p.shape[:2]
    u = p.reshape(bx, by, block, block, n_t).transpose(4, 0, 2, 1, 3)
    return u.reshape(n_t, bx * block, by * block)[:, :nx, :ny]


def llr_prox(u, tau, block=BLOCK):
    """Proximal map of ``tau * sum_i ||P_i u||_*`` over non-overlapping patches."""
    return from_casorati(svt(to_casorati(u, block), tau), u.shape, block)


def llr_penalty(u, block=BLOCK):
    return float(np.sum(np.linalg.svd(to_casorati(u, block), compute_uv=False)))


@dataclass
class FistaTrace:
    objective: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    step: float = 0.0


def llr_echo(enc, f, lam, init, iters=LLR_ITERS, step_factor=0.9, power_iters=20, block=BLOCK):
    """FISTA for one echo with monotone restarts.

    When an accelerated step raises the objective, momentum is reset and the
    step is redone from the last iterate (a plain proximal-gradient step,
    which cannot increase the objective for step <= 1/L).
    """
    shape = init.shape
    L = power_norm(enc.normal, shape, power_iters)
    step = step_factor / L
    b = enc.rhs(f)

    def objective(u):
        return data_fidelity(enc, u, f, use_toeplitz=True) + lam * llr_penalty(u, block)

    def prox_grad(y):
        z = y - step * (enc.normal(y) - b)
        return llr_prox(z, step * lam, block) if lam > 0 else z

    x = np.array(init, dtype=np.complex128)
    y = x.copy()
    t = 1.0
    fx = objective(x)
    trace = FistaTrace([fx], [], step)
    for k in range(iters):
        xn = prox_grad(y)
        fn = objective(xn)
        if fn > fx:
            trace.restarts.append(k)
            t = 1.0
            xn = prox_grad(x)
            fn = objective(xn)
        if not np.isfinite(fn):
            raise NumericError(f"FISTA produced a non-finite objective at iteration {k}")
        tn = (1 + np.sqrt(1 + 4 * t * t)) / 2
        y = xn + ((t - 1) / tn) * (xn - x)
        x, fx, t = xn, fn, tn
        trace.objective.append(fx)
    return x, trace


def solve_llr(dataset, lam, iters=LLR_ITERS, init=None, return_trace=False, **kw):
    """Locally low-rank solution, two independent problems (one per echo).

    Starts from the SWS solution unless ``init`` is given.
    """
    if lam < 0:
        raise ConfigError("lambda_llr must be >= 0")
    encs = dataset.encodings(toeplitz=True)
    if init is None:
        init = solve_sws(dataset)
    out, traces = [], []
    for enc, f, u0 in zip(encs, dataset.kspace, init):
        u, tr = llr_echo(enc, f, lam, u0, iters, **kw)
        out.append(u)
        traces.append(tr)
    if return_trace:
        return tuple(out), traces
    return tuple(out)


# ---------------------------------------------------------------- neural field


def default_schedule(n_t):
    """Stage list ``[(epochs, batch), ...]`` scaled from the reference runs.

    Long series follow 1000/200/200 epochs at batch 1, ~N_T/4, ~N_T/2;
    short series (N_T <= 16) 5000 epochs at batch 1 then 1000 at N_T.
    """
    if n_t <= 16:
        return [(5000, 1), (1000, n_t)]
    return [(1000, 1), (200, max(1, round(n_t / 4))), (200, max(1, round(n_t / 2)))]


def iters_per_epoch(n_t, batch):
    return max(1, int(round(n_t / batch)))


@dataclass
class TrainResult:
    params: FieldParams
    adam: AdamState
    loss: list
    batch: list
    seconds: float = 0.0
    rng_state: dict = None


def _check_schedule(schedule, n_t):
    if not schedule:
        raise ConfigError("empty training schedule")
    for epochs, batch in schedule:
        if epochs < 0 or not 1 <= batch <= n_t:
            raise ConfigError(f"invalid stage (epochs={epochs}, batch={batch}) for N_T={n_t}")


def fit_field(loss_grad, im_shape, n_t, schedule, seed=0, lr=1e-3, compute_dtype=np.float32,
              params=None, adam=None, rng=None, progress=None):
    """Generic staged Adam loop over randomly drawn frame batches.

    ``loss_grad(frames, u0, u1)`` returns ``(loss, grad_u0, grad_u1)``.
    """
    _check_schedule(schedule, n_t)
    ss = np.random.SeedSequence(seed)
    init_seed, frame_seed = ss.spawn(2)
    if params is None:
        params = init_params(int(init_seed.generate_state(1)[0]))
    arrays = params.trainable()
    if adam is None:
        adam = AdamState.zeros_like(arrays, lr=lr)
    if rng is None:
        rng = np.random.default_rng(frame_seed)
    grid = FieldGrid(params, im_shape[0], im_shape[1], n_t)
    losses, batches = [], []
    t0 = time.perf_counter()
    total = sum(e * iters_per_epoch(n_t, b) for e, b in schedule)
    for epochs, batch in schedule:
        for _ in range(epochs * iters_per_epoch(n_t, batch)):
            frames = np.sort(rng.choice(n_t, size=batch, replace=False))
            ras = rasterize(params, grid, frames, compute_dtype)
            loss, g0, g1 = loss_grad(frames, ras.u0, ras.u1)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss after {len(losses)} iterations; "
                                   f"last losses {losses[-5:]}")
            grads = backward(ras, g0, g1, params)
            adam_step(arrays, grads, adam)
            losses.append(float(loss))
            batches.append(int(batch))
            if progress is not None and len(losses) % 200 == 0:
                progress(len(losses), total, float(loss))
    return TrainResult(params, adam, losses, batches, time.perf_counter() - t0,
                       rng.bit_generator.state)


def field_loss_grad(encs, kspace):
    """Joint data term of both echoes and its image-space gradients."""
    def loss_grad(frames, u0, u1):
        loss = 0.0
        grads = []
        for enc, f, u in zip(encs, kspace, (u0, u1)):
            l, g = enc.loss_grad(u, f, frames)
            loss += l
            grads.append(g)
        return loss, grads[0], grads[1]
    return loss_grad


def train_field(dataset, schedule=None, seed=0, lr=1e-3, compute_dtype=np.float32, **kw):
    """Fit the magnitude-phase field to both echoes jointly.

    Each iteration rasterises only the ``N_B`` frames drawn for it.
    """
    schedule = default_schedule(dataset.n_t) if schedule is None else schedule
    encs = dataset.encodings(toeplitz=True)
    return fit_field(field_loss_grad(encs, dataset.kspace), dataset.im_shape, dataset.n_t,
                     schedule, seed, lr, compute_dtype, **kw)


def field_images(params, im_shape, n_t, compute_dtype=np.float64):
    """Rasterise a trained field on every frame; returns ``(u0, u1)``."""
    grid = FieldGrid(params, im_shape[0], im_shape[1], n_t)
    frames = np.arange(n_t)
    u0 = np.empty((n_t,) + tuple(im_shape), dtype=np.complex128)
    u1 = np.empty_like(u0)
    for t in frames:
        ras = rasterize(params, grid, [t], compute_dtype)
        u0[t], u1[t] = ras.u0[0], ras.u1[0]
    return u0, u1


def embed_loss_grad(ref0, ref1):
    """``1/2 (||u0 - ref0||^2 + ||u1 - ref1||^2)`` on the drawn frames."""
    def loss_grad(frames, u0, u1):
        r0 = u0 - ref0[frames]
        r1 = u1 - ref1[frames]
        loss = 0.5 * (np.sum(np.abs(r0) ** 2) + np.sum(np.abs(r1) ** 2))
        return float(loss), r0, r1
    return loss_grad


def embed_field(ref0, ref1, schedule=None, seed=0, lr=1e-3, compute_dtype=np.float32, **kw):
    """Fit the field directly to reference images (no forward model)."""
    ref0 = np.asarray(ref0)
    ref1 = np.asarray(ref1)
    n_t = ref0.shape[0]
    schedule = default_schedule(n_t) if schedule is None else schedule
    return fit_field(embed_loss_grad(ref0, ref1), ref0.shape[1:], n_t, schedule, seed, lr,
                     compute_dtype, **kw)
