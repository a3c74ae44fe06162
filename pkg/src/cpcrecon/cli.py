"""Command-line front end: simulate, sample, recon, eval, sweep, embed.

Every command writes its output directory atomically together with a
``manifest.json`` holding the resolved config, input paths, versions and
timings. Passing that manifest back through ``--config`` repeats the run.
Progress goes to stderr; summaries to stdout.
"""
import argparse
import csv
import io
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import load_config, set_path
from .container import atomic_dir, read_manifest
from .errors import ConfigError, ContainerError, DomainError, NumericError, ShapeError
from .metrics import evaluate, frame_errors, geometric_mean
from .phantom import PhantomConfig, acquire, make_coilmaps, make_phantom, undersample
from .recon import (default_schedule, embed_field, field_images, solve_hybrid, solve_llr,
                    solve_sws, train_field)
from .sampling import cartesian_plan, radial_plan_for_accel
from .storage import (DATASET, RECON, load_checkpoint, read_dataset, read_recon,
                      save_checkpoint, write_dataset, write_recon)

EXIT_USAGE = 2
EXIT_NUMERIC = 3


def log(msg):
    print(msg, file=sys.stderr, flush=True)


def versions():
    return {"cpcrecon": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_manifest(cfg, command, timings):
    return {"command": command, "config": cfg, "versions": versions(), "timings": timings}


def make_plan(sampling, n_y, n_t, seed):
    accel = sampling["accel"]
    if sampling["mode"] == "cartesian":
        return cartesian_plan(n_y, n_t, accel, seed)
    return radial_plan_for_accel(n_y, n_t, accel, seed, sampling["samples_per_spoke"])


def _schedule(cfg, n_t):
    s = cfg["recon"]["schedule"]
    return [tuple(x) for x in s] if s is not None else default_schedule(n_t)


def _train_progress(tag):
    def report(it, total, loss):
        log(f"[{tag}] iteration {it}/{total}  loss {loss:.4g}")
    return report


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg, out):
    """Phantom, coil maps and noisy k-space under the configured plan."""
    t0 = time.perf_counter()
    ph, seed = cfg["phantom"], cfg["seed"]
    pcfg = PhantomConfig.from_dict(ph["options"])
    scene = make_phantom(ph["nx"], ph["ny"], ph["n_t"], pcfg)
    maps = make_coilmaps(ph["n_coils"], ph["nx"], ph["ny"])
    plan = make_plan(cfg["sampling"], ph["ny"], ph["n_t"], seed)
    log(f"[simulate] {ph['nx']}x{ph['ny']}x{ph['n_t']}, {ph['n_coils']} coils, "
        f"{plan.mode} R={plan.acceleration}")
    ds = acquire(scene, maps, plan, ph["noise_sigma"], seed)
    ds.meta = {"phantom": pcfg.to_dict(), "reference_flow": scene.reference_flow().tolist()}
    timings = {"total_s": time.perf_counter() - t0}
    write_dataset(out, ds, cfg["output"]["precision"],
                  extra=run_manifest(cfg, "simulate", timings))
    return {"out": str(out), "samples_e0": int(np.count_nonzero(ds.kspace[0]))}


def cmd_sample(cfg, out):
    """Retrospectively undersample a fully sampled Cartesian dataset."""
    t0 = time.perf_counter()
    full = read_dataset(_input(cfg, "dataset"))
    plan = make_plan(cfg["sampling"], full.plan.n_y, full.n_t, cfg["seed"])
    log(f"[sample] {plan.mode} R={plan.acceleration}, {plan.per_frame} per frame and echo")
    ds = undersample(full, plan)
    write_dataset(out, ds, cfg["output"]["precision"],
                  extra=run_manifest(cfg, "sample", {"total_s": time.perf_counter() - t0}))
    return {"out": str(out), "per_frame": plan.per_frame}


def _field_from_checkpoint(path):
    path = Path(path)
    # a recon or embed directory carries its checkpoint in a subdirectory
    if (path / "checkpoint").is_dir():
        path = path / "checkpoint"
    try:
        return load_checkpoint(path)[0]
    except ContainerError as exc:
        raise ConfigError(f"cannot use {path} as a field checkpoint ({exc}); train one with "
                          "`cpcrecon recon --method field` first") from None


def reconstruct(ds, cfg, tag="recon"):
    """Run the configured method; returns ``(u0, u1, train_result or None)``."""
    rc = cfg["recon"]
    method = rc["method"]
    if method == "sws":
        u0, u1 = solve_sws(ds, rc["cg_max_iter"], rc["cg_tol"])
        return u0, u1, None
    if method == "llr":
        u0, u1 = solve_llr(ds, rc["lambda_llr"], rc["llr_iters"])
        return u0, u1, None
    res = None
    if method == "hybrid" and rc["checkpoint"]:
        params = _field_from_checkpoint(rc["checkpoint"])
    elif method == "field" or rc["train_field"]:
        res = train_field(ds, _schedule(cfg, ds.n_t), cfg["seed"], rc["lr"],
                          progress=_train_progress(tag))
        params = res.params
    else:
        raise ConfigError("the hybrid method needs a trained field: pass --checkpoint DIR "
                          "(written by `cpcrecon recon --method field`) or --train-field")
    uf = field_images(params, ds.im_shape, ds.n_t)
    if method == "field":
        return uf[0], uf[1], res
    u0, u1 = solve_hybrid(ds, uf, rc["lambda_hyb"], rc["cg_max_iter"], rc["cg_tol"])
    return u0, u1, res


def cmd_recon(cfg, out):
    dpath = _input(cfg, "dataset")
    ds = read_dataset(dpath)
    method = cfg["recon"]["method"]
    log(f"[recon] {method} on {dpath} ({ds.mode}, R={ds.plan.acceleration})")
    t0 = time.perf_counter()
    u0, u1, res = reconstruct(ds, cfg)
    timings = {"total_s": time.perf_counter() - t0}
    manifest = run_manifest(cfg, "recon", timings)
    manifest["method"] = method
    with atomic_dir(out) as tmp:
        write_recon(tmp, u0, u1, manifest, cfg["output"]["precision"], atomic=False)
        if res is not None:
            save_checkpoint(tmp / "checkpoint", res.params, res.adam, res.rng_state,
                            {"loss": res.loss, "batch": res.batch}, atomic=False)
    return {"out": str(out), "method": method, "seconds": timings["total_s"]}


def _load_images(path):
    doc = read_manifest(path)
    if doc.get("format") == DATASET:
        ds = read_dataset(path)
        if ds.reference is None:
            raise ConfigError(f"dataset {path} carries no reference images")
        return doc, ds.reference[0], ds.reference[1]
    if doc.get("format") != RECON:
        raise ContainerError(f"{path} is neither a reconstruction nor a dataset")
    return read_recon(path)


def metric_files(metrics, method="recon"):
    """``flow.csv`` (per frame plus a summary row) and ``metrics.csv`` as text."""
    q, q_ref = np.asarray(metrics["Q"]), np.asarray(metrics["Q_ref"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "Q", "Q_ref", "error"])
    for t, (a, b) in enumerate(zip(q, q_ref)):
        w.writerow([t, repr(float(a)), repr(float(b)), repr(float(abs(a - b)))])
    w.writerow(["summary", repr(float(q.sum())), repr(float(q_ref.sum())),
                repr(float(abs(q.sum() - q_ref.sum())))])
    flow_csv = buf.getvalue()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "e2", "einf", "eoverall", "psnr"])
    w.writerow([method] + [repr(float(metrics[k])) for k in ("e2", "einf", "eoverall", "psnr")])
    return flow_csv, buf.getvalue()


def write_report(directory, metrics, images, ref, roi, method, figures=True):
    """Metric files plus optional figures into an existing directory."""
    directory = Path(directory)
    flow_csv, metrics_csv = metric_files(metrics, method)
    (directory / "metrics.json").write_text(json.dumps({"method": method, **metrics}, indent=2))
    (directory / "flow.csv").write_text(flow_csv)
    (directory / "metrics.csv").write_text(metrics_csv)
    if figures:
        from . import plotting
        plotting.plot_flow({method: metrics["Q"]}, directory / "flow.png",
                           reference=metrics["Q_ref"])
        plotting.plot_frame_errors({method: frame_errors(metrics["Q"], metrics["Q_ref"])},
                                   directory / "frame_errors.png")
        frame = int(np.argmax(np.abs(metrics["Q_ref"])))
        plotting.plot_montage({"reference": ref, method: images}, directory / "montage.png",
                              frame=frame, roi=roi)


def cmd_eval(cfg, out):
    rpath = _input(cfg, "recon")
    doc, u0, u1 = _load_images(rpath)
    dpath = cfg["inputs"].get("dataset") or doc.get("config", {}).get("inputs", {}).get("dataset")
    if dpath is None:
        if doc.get("format") == DATASET:
            dpath = rpath
        else:
            raise ConfigError("no dataset given and none recorded in the recon manifest; "
                              "pass --dataset DIR")
    ds = read_dataset(dpath)
    if ds.reference is None or ds.roi is None:
        raise ConfigError(f"dataset {dpath} lacks reference images or an ROI mask")
    ref0, ref1 = ds.reference
    m = evaluate(u0, u1, ref0, ref1, ds.roi, ds.venc)
    method = doc.get("method", "reference" if doc.get("format") == DATASET else "recon")
    with atomic_dir(out) as tmp:
        write_report(tmp, m, (u0, u1), (ref0, ref1), ds.roi, method, cfg["output"]["figures"])
        manifest = run_manifest(cfg, "eval", {})
        (tmp / "manifest.json").write_text(json.dumps(
            {"format": "cpcrecon-report", "version": 1, **manifest}, indent=2))
    return {k: m[k] for k in ("e2", "einf", "eoverall", "psnr")} | {"method": method}


def select_lambda(rows, method):
    """Geometric mean of e2 over accelerations per lambda; smallest wins."""
    by_lam = {}
    for r in rows:
        if r["method"] == method:
            by_lam.setdefault(r["lambda"], []).append(r["e2"])
    scores = {lam: geometric_mean(v) for lam, v in by_lam.items()}
    best = min(scores, key=lambda k: scores[k])
    return best, scores


def cmd_sweep(cfg, out):
    full = read_dataset(_input(cfg, "dataset"))
    if full.reference is None or full.roi is None:
        raise ConfigError("sweep needs a dataset with reference images and an ROI")
    sw, rc = cfg["sweep"], cfg["recon"]
    methods = sw["methods"]
    ref0, ref1 = full.reference
    rows, t0 = [], time.perf_counter()
    for accel in sw["accels"]:
        plan = make_plan(dict(cfg["sampling"], accel=accel), full.plan.n_y, full.n_t, cfg["seed"])
        ds = undersample(full, plan)

        def record(method, lam, u):
            m = evaluate(u[0], u[1], ref0, ref1, full.roi, full.venc)
            rows.append({"method": method, "lambda": lam, "accel": accel,
                         **{k: m[k] for k in ("e2", "einf", "eoverall", "psnr")}})
            log(f"[sweep] R={accel:g} {method} lambda={lam}: e2={m['e2']:.2f}%")

        if "sws" in methods:
            record("sws", 0.0, solve_sws(ds, rc["cg_max_iter"], rc["cg_tol"]))
        if "llr" in methods:
            for lam in sw["lambda_llr"]:
                record("llr", lam, solve_llr(ds, lam, rc["llr_iters"]))
        if "field" in methods or "hybrid" in methods:
            res = train_field(ds, _schedule(cfg, ds.n_t), cfg["seed"], rc["lr"],
                              progress=_train_progress(f"sweep R={accel:g}"))
            uf = field_images(res.params, ds.im_shape, ds.n_t)
            if "field" in methods:
                record("field", 0.0, uf)
            if "hybrid" in methods:
                for lam in sw["lambda_hyb"]:
                    record("hybrid", lam, solve_hybrid(ds, uf, lam, rc["cg_max_iter"],
                                                       rc["cg_tol"]))
    selection, table = {}, {}
    for method in methods:
        best, scores = select_lambda(rows, method)
        selection[method] = {"lambda": best, "geometric_mean_e2": scores[best],
                             "scores": {repr(k): v for k, v in scores.items()}}
        table[method] = {r["accel"]: r["e2"] for r in rows
                         if r["method"] == method and r["lambda"] == best}
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["method", "lambda", "accel", "e2", "einf", "eoverall", "psnr"],
                       lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    tbuf = io.StringIO()
    tw = csv.writer(tbuf, lineterminator="\n")
    tw.writerow(["method", "lambda"] + [f"R{a:g}" for a in sw["accels"]])
    for method in methods:
        tw.writerow([method, repr(selection[method]["lambda"])]
                    + [repr(table[method][a]) for a in sw["accels"]])
    with atomic_dir(out) as tmp:
        (tmp / "sweep.csv").write_text(buf.getvalue())
        (tmp / "table.csv").write_text(tbuf.getvalue())
        (tmp / "selection.json").write_text(json.dumps(selection, indent=2))
        manifest = run_manifest(cfg, "sweep", {"total_s": time.perf_counter() - t0})
        (tmp / "manifest.json").write_text(json.dumps(
            {"format": "cpcrecon-sweep", "version": 1, **manifest}, indent=2))
        if cfg["output"]["figures"]:
            from . import plotting
            plotting.plot_error_vs_accel(table, tmp / "error_vs_R.png")
    sys.stdout.write(tbuf.getvalue())
    return None


def cmd_embed(cfg, out):
    """Fit the field straight to the dataset's reference images."""
    dpath = _input(cfg, "dataset")
    ds = read_dataset(dpath)
    if ds.reference is None:
        raise ConfigError(f"dataset {dpath} carries no reference images to embed")
    t0 = time.perf_counter()
    ref0, ref1 = ds.reference
    res = embed_field(ref0, ref1, _schedule(cfg, ds.n_t), cfg["seed"], cfg["recon"]["lr"],
                      progress=_train_progress("embed"))
    u0, u1 = field_images(res.params, ds.im_shape, ds.n_t)
    manifest = run_manifest(cfg, "embed", {"total_s": time.perf_counter() - t0})
    manifest["method"] = "embed"
    summary = {"out": str(out), "method": "embed"}
    with atomic_dir(out) as tmp:
        write_recon(tmp, u0, u1, manifest, cfg["output"]["precision"], atomic=False)
        save_checkpoint(tmp / "checkpoint", res.params, res.adam, res.rng_state,
                        {"loss": res.loss, "batch": res.batch}, atomic=False)
        if ds.roi is not None:
            m = evaluate(u0, u1, ref0, ref1, ds.roi, ds.venc)
            write_report(tmp, m, (u0, u1), (ref0, ref1), ds.roi, "embed",
                         cfg["output"]["figures"])
            summary.update({k: m[k] for k in ("e2", "einf", "eoverall", "psnr")})
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "sample": cmd_sample,
    "recon": cmd_recon,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "embed": cmd_embed,
}


# ---------------------------------------------------------------- argument handling


def _input(cfg, name):
    path = cfg["inputs"].get(name)
    if path is None:
        raise ConfigError(f"missing input {name!r}: give it on the command line or in the "
                          "config's inputs section")
    return path


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _schedule_arg(text):
    try:
        s = json.loads(text)
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError(f"schedule must be JSON like [[60,1],[10,8]], "
                                         f"got {text!r}")
    return s


def _set_arg(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser():
    p = argparse.ArgumentParser(prog="cpcrecon", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, inputs=()):
        for name in inputs:
            sp.add_argument(name, nargs="?", help=f"input {name} directory")
        sp.add_argument("--config", help="JSON config or a previous run manifest")
        sp.add_argument("--out", required=True, help="output directory (replaced atomically)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--precision", choices=["single", "double"])
        sp.add_argument("--no-figures", action="store_true")
        sp.add_argument("--set", action="append", type=_set_arg, default=[],
                        metavar="KEY=VALUE", help="override any config entry, e.g. "
                        "phantom.options.spike_frame=12")

    def sampling(sp):
        sp.add_argument("--mode", choices=["cartesian", "radial"])
        sp.add_argument("--accel", type=float)
        sp.add_argument("--samples-per-spoke", type=int)

    def recon_flags(sp):
        sp.add_argument("--lambda-llr", type=float)
        sp.add_argument("--lambda-hyb", type=float)
        sp.add_argument("--schedule", type=_schedule_arg, help="JSON [[epochs, batch], ...]")
        sp.add_argument("--lr", type=float)
        sp.add_argument("--cg-iters", type=int)
        sp.add_argument("--llr-iters", type=int)

    sp = sub.add_parser("simulate", help="synthesise a phantom dataset")
    common(sp)
    sampling(sp)
    sp.add_argument("--nx", type=int)
    sp.add_argument("--ny", type=int)
    sp.add_argument("--nt", type=int)
    sp.add_argument("--coils", type=int)
    sp.add_argument("--noise", type=float)

    sp = sub.add_parser("sample", help="retrospectively undersample a full dataset")
    common(sp, ["dataset"])
    sampling(sp)

    sp = sub.add_parser("recon", help="reconstruct a dataset")
    common(sp, ["dataset"])
    sp.add_argument("--method", choices=["sws", "llr", "field", "hybrid"])
    recon_flags(sp)
    sp.add_argument("--checkpoint", help="field checkpoint (or recon dir) for --method hybrid")
    sp.add_argument("--train-field", action="store_true", default=None,
                    help="train the field first when no checkpoint is given")

    sp = sub.add_parser("eval", help="flow errors and PSNR of a reconstruction")
    common(sp, ["recon"])
    sp.add_argument("--dataset", help="dataset with the reference (default: from the manifest)")

    sp = sub.add_parser("sweep", help="lambda/acceleration sweep with geometric-mean selection")
    common(sp, ["dataset"])
    sampling(sp)
    recon_flags(sp)
    sp.add_argument("--methods", type=lambda s: [m.strip() for m in s.split(",")])
    sp.add_argument("--accels", type=_floats)
    sp.add_argument("--lambdas-llr", type=_floats)
    sp.add_argument("--lambdas-hyb", type=_floats)

    sp = sub.add_parser("embed", help="fit the field directly to the reference images")
    common(sp, ["dataset"])
    recon_flags(sp)
    return p


_FLAG_PATHS = {
    "seed": "seed",
    "precision": "output.precision",
    "mode": "sampling.mode",
    "accel": "sampling.accel",
    "samples_per_spoke": "sampling.samples_per_spoke",
    "nx": "phantom.nx",
    "ny": "phantom.ny",
    "nt": "phantom.n_t",
    "coils": "phantom.n_coils",
    "noise": "phantom.noise_sigma",
    "method": "recon.method",
    "lambda_llr": "recon.lambda_llr",
    "lambda_hyb": "recon.lambda_hyb",
    "schedule": "recon.schedule",
    "lr": "recon.lr",
    "cg_iters": "recon.cg_max_iter",
    "llr_iters": "recon.llr_iters",
    "checkpoint": "recon.checkpoint",
    "train_field": "recon.train_field",
    "methods": "sweep.methods",
    "accels": "sweep.accels",
    "lambdas_llr": "sweep.lambda_llr",
    "lambdas_hyb": "sweep.lambda_hyb",
}


def resolve_config(args):
    """File config, then flags, then ``--set`` entries; paths made absolute."""
    ov = {}
    for attr, path in _FLAG_PATHS.items():
        set_path(ov, path, getattr(args, attr, None))
    if args.no_figures:
        set_path(ov, "output.figures", False)
    for name in ("dataset", "recon"):
        value = getattr(args, name, None)
        if value is not None:
            set_path(ov, f"inputs.{name}", str(Path(value).resolve()))
    if args.command == "recon" and getattr(args, "checkpoint", None):
        set_path(ov, "recon.checkpoint", str(Path(args.checkpoint).resolve()))
    for key, value in args.set:
        set_path(ov, key, value)
    return load_config(args.config, ov)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        summary = COMMANDS[args.command](cfg, Path(args.out))
    except NumericError as exc:
        log(f"cpcrecon {args.command}: numerical failure: {exc}")
        return EXIT_NUMERIC
    except (ConfigError, ContainerError, ShapeError, DomainError, FileNotFoundError) as exc:
        log(f"cpcrecon {args.command}: error: {exc}")
        return EXIT_USAGE
    if summary is not None:
        print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
