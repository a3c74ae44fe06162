"""Reading and writing datasets, reconstructions and field checkpoints.

All three use the directory container from :mod:`cpcrecon.container`.

Dataset (``format = "cpcrecon-dataset"``) arrays:

``kspace_e0``, ``kspace_e1``
    (N_T, N_C, N_x, N_y) zero-filled Cartesian samples, or (N_T, N_C, M)
    radial samples.
``maps``
    (N_C, N_x, N_y) coil sensitivities.
``roi``
    (N_x, N_y) flow mask, stored as 0/1 floats (optional).
``reference_e0``, ``reference_e1``
    (N_T, N_x, N_y) reference images (optional).

The manifest records ``dims``, ``mode``, ``plan``, ``seed``, ``venc``,
``noise_sigma``, ``axis_order`` and free-form ``meta``.
"""
import numpy as np

from .container import read_container, write_container
from .errors import ContainerError
from .field import AdamState, FieldParams
from .phantom import KSpaceDataset
from .sampling import SamplingPlan

DATASET = "cpcrecon-dataset"
RECON = "cpcrecon-recon"
CHECKPOINT = "cpcrecon-checkpoint"

AXIS_ORDER = {
    "kspace_cartesian": ["t", "coil", "x", "y"],
    "kspace_radial": ["t", "coil", "sample"],
    "maps": ["coil", "x", "y"],
    "images": ["t", "x", "y"],
}


def write_dataset(directory, ds, precision="single", atomic=True, extra=None):
    """Write ``ds``; ``extra`` adds run-manifest keys (config, timings, ...)."""
    arrays = {"kspace_e0": ds.kspace[0], "kspace_e1": ds.kspace[1], "maps": ds.maps}
    if ds.roi is not None:
        arrays["roi"] = np.asarray(ds.roi, dtype=np.float32)
    if ds.reference is not None:
        arrays["reference_e0"], arrays["reference_e1"] = ds.reference
    manifest = {
        "dims": ds.dims,
        "mode": ds.mode,
        "plan": ds.plan.to_dict(),
        "seed": ds.seed,
        "venc": ds.venc,
        "noise_sigma": ds.noise_sigma,
        "axis_order": AXIS_ORDER,
        "meta": ds.meta,
        **(extra or {}),
    }
    return write_container(directory, DATASET, manifest, arrays, precision, atomic=atomic)


def read_dataset(directory):
    """Load a dataset; arrays are promoted to double precision."""
    doc, arr = read_container(directory, DATASET)
    try:
        plan = SamplingPlan.from_dict(doc["plan"])
        kspace = [arr["kspace_e0"].astype(np.complex128), arr["kspace_e1"].astype(np.complex128)]
        maps = arr["maps"].astype(np.complex128)
    except KeyError as exc:
        raise ContainerError(f"dataset {directory} is missing {exc}") from None
    reference = None
    if "reference_e0" in arr:
        reference = (arr["reference_e0"].astype(np.complex128),
                     arr["reference_e1"].astype(np.complex128))
    roi = arr["roi"] > 0.5 if "roi" in arr else None
    return KSpaceDataset(doc["mode"], kspace, plan, maps, float(doc["noise_sigma"]),
                         int(doc["seed"]), float(doc["venc"]), reference, roi,
                         doc.get("meta", {}))


def write_recon(directory, u0, u1, manifest, precision="single", extra_files=None,
                atomic=True):
    return write_container(directory, RECON, manifest, {"u0": u0, "u1": u1}, precision,
                           extra_files, atomic)


def read_recon(directory):
    doc, arr = read_container(directory, RECON)
    return doc, arr["u0"].astype(np.complex128), arr["u1"].astype(np.complex128)


def save_checkpoint(directory, params, adam=None, rng_state=None, meta=None, atomic=True):
    """Store a field with its optimizer and frame-sampler state, all in double."""
    arrays = {"B_x": params.B_x, "B_t": params.B_t}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    manifest = {
        "n_layers": len(params.weights),
        "sigma_x": params.sigma_x,
        "sigma_t": params.sigma_t,
        "rng_state": rng_state,
        "meta": meta or {},
    }
    if adam is not None:
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays[f"adam_m{i}"] = m
            arrays[f"adam_v{i}"] = v
        manifest["adam"] = {"step": adam.step, "lr": adam.lr, "beta1": adam.beta1,
                            "beta2": adam.beta2, "eps": adam.eps}
    return write_container(directory, CHECKPOINT, manifest, arrays, "double", atomic=atomic)


def load_checkpoint(directory):
    """Return ``(params, adam or None, rng_state or None, meta)``."""
    doc, arr = read_container(directory, CHECKPOINT)
    n = doc["n_layers"]
    params = FieldParams(arr["B_x"], arr["B_t"], [arr[f"W{i}"] for i in range(n)],
                         [arr[f"b{i}"] for i in range(n)], doc["sigma_x"], doc["sigma_t"])
    adam = None
    if "adam" in doc:
        a = doc["adam"]
        k = 2 * n
        adam = AdamState([arr[f"adam_m{i}"] for i in range(k)],
                         [arr[f"adam_v{i}"] for i in range(k)],
                         a["step"], a["lr"], a["beta1"], a["beta2"], a["eps"])
    return params, adam, doc.get("rng_state"), doc.get("meta", {})


def restore_rng(state):
    """A ``Generator`` continuing exactly from a saved bit-generator state."""
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
