import csv
import json

import numpy as np
import pytest

from cpcrecon.cli import main, select_lambda
from cpcrecon.config import ConfigError, load_config, merge, DEFAULTS
from cpcrecon.metrics import evaluate
from cpcrecon.phantom import undersample
from cpcrecon.recon import solve_sws
from cpcrecon.sampling import cartesian_plan
from cpcrecon.storage import read_dataset, read_recon

SMALL = ["--nx", "16", "--ny", "16", "--nt", "4", "--coils", "2"]
TINY_SCHEDULE = ["--schedule", "[[3, 1], [2, 4]]"]


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def bin_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.glob("*.bin"))}


@pytest.fixture(scope="module")
def full_ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "full"
    assert run("simulate", "--out", out, *SMALL, "--seed", 3, "--precision", "double") == 0
    return out


def test_simulate_default_dimensions(tmp_path):
    assert run("simulate", "--out", tmp_path / "d", "--no-figures") == 0
    doc = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert doc["dims"] == {"n_x": 64, "n_y": 64, "n_t": 32, "n_c": 4}
    assert doc["mode"] == "cartesian"
    assert doc["command"] == "simulate"
    ds = read_dataset(tmp_path / "d")
    assert ds.kspace[0].shape == (32, 4, 64, 64)


def test_seed_reuse_gives_identical_bytes(tmp_path):
    for name in ("a", "b"):
        assert run("simulate", "--out", tmp_path / name, *SMALL, "--accel", 4, "--seed", 5) == 0
    assert bin_bytes(tmp_path / "a") == bin_bytes(tmp_path / "b")
    assert run("simulate", "--out", tmp_path / "c", *SMALL, "--accel", 4, "--seed", 6) == 0
    assert bin_bytes(tmp_path / "a") != bin_bytes(tmp_path / "c")


@pytest.mark.parametrize("accel", ["3", "0", "128"])
def test_invalid_acceleration_fails_cleanly(tmp_path, capsys, accel):
    code = run("simulate", "--out", tmp_path / "d", *SMALL, "--accel", accel)
    assert code != 0
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "d").exists()


def test_sws_on_full_sampling_reproduces_the_reference(tmp_path):
    clean = tmp_path / "clean"
    assert run("simulate", "--out", clean, *SMALL, "--noise", 0, "--precision", "double") == 0
    out = tmp_path / "r"
    assert run("recon", clean, "--out", out, "--method", "sws", "--precision", "double") == 0
    _, u0, u1 = read_recon(out)
    ref0, ref1 = read_dataset(clean).reference
    for u, ref in zip((u0, u1), (ref0, ref1)):
        assert np.linalg.norm(u - ref) / np.linalg.norm(ref) <= 1e-8


def test_hybrid_uses_a_field_checkpoint(tmp_path, full_ds):
    field = tmp_path / "field"
    assert run("recon", full_ds, "--out", field, "--method", "field", *TINY_SCHEDULE) == 0
    assert (field / "checkpoint" / "manifest.json").exists()
    hyb = tmp_path / "hyb"
    assert run("recon", full_ds, "--out", hyb, "--method", "hybrid", "--lambda-hyb", "5e-2",
               "--checkpoint", field / "checkpoint") == 0
    # the recon dir itself is accepted too, and gives the same result
    hyb2 = tmp_path / "hyb2"
    assert run("recon", full_ds, "--out", hyb2, "--method", "hybrid", "--lambda-hyb", "5e-2",
               "--checkpoint", field) == 0
    assert bin_bytes(hyb) == bin_bytes(hyb2)
    doc = json.loads((hyb / "manifest.json").read_text())
    assert doc["config"]["recon"]["lambda_hyb"] == 5e-2


def test_hybrid_without_checkpoint_is_an_actionable_error(tmp_path, full_ds, capsys):
    code = run("recon", full_ds, "--out", tmp_path / "h", "--method", "hybrid")
    err = capsys.readouterr().err
    assert code == 2 and "--checkpoint" in err and "--train-field" in err
    code = run("recon", full_ds, "--out", tmp_path / "h", "--method", "hybrid",
               "--checkpoint", tmp_path / "nowhere")
    assert code == 2 and "checkpoint" in capsys.readouterr().err
    assert not (tmp_path / "h").exists()


def test_eval_of_reference_against_itself(tmp_path, full_ds):
    out = tmp_path / "ev"
    assert run("eval", full_ds, "--out", out) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert (m["e2"], m["einf"], m["eoverall"]) == (0.0, 0.0, 0.0)
    rows = read_csv(out / "flow.csv")
    assert rows[0] == ["t", "Q", "Q_ref", "error"]
    assert len(rows) == 1 + 4 + 1 and rows[-1][0] == "summary"
    assert all(float(r[3]) == 0 for r in rows[1:])
    for fig in ("flow.png", "frame_errors.png", "montage.png"):
        assert (out / fig).stat().st_size > 0


def test_eval_matches_library(tmp_path, full_ds):
    sub = tmp_path / "sub"
    assert run("sample", full_ds, "--out", sub, "--accel", 4, "--seed", 2,
               "--precision", "double") == 0
    rec = tmp_path / "rec"
    assert run("recon", sub, "--out", rec, "--method", "sws", "--precision", "double") == 0
    out = tmp_path / "ev"
    assert run("eval", rec, "--out", out, "--no-figures") == 0
    m = json.loads((out / "metrics.json").read_text())
    assert not (out / "flow.png").exists()

    full = read_dataset(full_ds)
    ds = undersample(full, cartesian_plan(16, 4, 4, seed=2))
    u0, u1 = solve_sws(ds)
    lib = evaluate(u0, u1, *full.reference, full.roi, full.venc)
    for k in ("e2", "einf", "eoverall", "psnr"):
        assert m[k] == pytest.approx(lib[k], rel=1e-9)
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == ["method", "e2", "einf", "eoverall", "psnr"]
    assert float(rows[1][1]) == m["e2"]


def test_sweep_single_point_equals_recon_and_eval(tmp_path, full_ds):
    out = tmp_path / "sw"
    assert run("sweep", full_ds, "--out", out, "--methods", "llr", "--accels", "8",
               "--lambdas-llr", "0.01", "--llr-iters", 5, "--seed", 1, "--no-figures") == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 1

    sub = tmp_path / "sub"
    assert run("sample", full_ds, "--out", sub, "--accel", 8, "--seed", 1,
               "--precision", "double") == 0
    rec = tmp_path / "rec"
    assert run("recon", sub, "--out", rec, "--method", "llr", "--lambda-llr", "0.01",
               "--llr-iters", 5, "--precision", "double") == 0
    ev = tmp_path / "ev"
    assert run("eval", rec, "--out", ev, "--dataset", full_ds, "--no-figures") == 0
    m = json.loads((ev / "metrics.json").read_text())
    assert float(rows[0]["e2"]) == pytest.approx(m["e2"], rel=1e-9)


def test_sweep_table_and_selection(tmp_path, full_ds, capsys):
    out = tmp_path / "sw"
    assert run("sweep", full_ds, "--out", out, "--methods", "sws,llr,field,hybrid",
               "--accels", "4,8", "--lambdas-llr", "0.01,0.1", "--lambdas-hyb", "0.01",
               "--llr-iters", 3, *TINY_SCHEDULE) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0] == "method,lambda,R4,R8"
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 2 * (1 + 2 + 1 + 1)
    sel = json.loads((out / "selection.json").read_text())
    assert set(sel) == {"sws", "llr", "field", "hybrid"}
    assert (out / "error_vs_R.png").exists()


def test_geometric_mean_selection():
    rows = [{"method": "llr", "lambda": 0.1, "e2": 4.0}, {"method": "llr", "lambda": 0.1, "e2": 9.0},
            {"method": "llr", "lambda": 1.0, "e2": 1.0}, {"method": "llr", "lambda": 1.0, "e2": 25.0}]
    best, scores = select_lambda(rows, "llr")
    assert scores[0.1] == pytest.approx(6.0)
    assert scores[1.0] == pytest.approx(5.0)
    assert best == 1.0


@pytest.mark.parametrize("method", ["sws", "llr", "field"])
def test_manifest_rerun_is_bit_identical(tmp_path, full_ds, method):
    sub = tmp_path / "sub"
    assert run("sample", full_ds, "--out", sub, "--accel", 4, "--seed", 9) == 0
    assert run("sample", full_ds, "--out", tmp_path / "sub2",
               "--config", sub / "manifest.json") == 0
    assert bin_bytes(sub) == bin_bytes(tmp_path / "sub2")

    first = tmp_path / "a"
    assert run("recon", sub, "--out", first, "--method", method, "--llr-iters", 3,
               *TINY_SCHEDULE) == 0
    again = tmp_path / "b"
    assert run("recon", "--config", first / "manifest.json", "--out", again) == 0
    assert bin_bytes(first) == bin_bytes(again)


def test_embed_writes_checkpoint_and_report(tmp_path, full_ds):
    out = tmp_path / "emb"
    assert run("embed", full_ds, "--out", out, *TINY_SCHEDULE, "--no-figures") == 0
    assert (out / "checkpoint" / "manifest.json").exists()
    m = json.loads((out / "metrics.json").read_text())
    assert m["method"] == "embed" and m["e2"] >= 0


def test_failed_run_keeps_previous_output(tmp_path, full_ds):
    out = tmp_path / "keep"
    assert run("recon", full_ds, "--out", out, "--method", "sws") == 0
    before = bin_bytes(out)
    assert run("recon", full_ds, "--out", out, "--method", "llr", "--lambda-llr", "-1") != 0
    assert bin_bytes(out) == before


def test_set_overrides_and_schema_errors(tmp_path, capsys):
    assert run("simulate", "--out", tmp_path / "d", *SMALL,
               "--set", "phantom.options.spike_frame=2") == 0
    doc = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert doc["config"]["phantom"]["options"] == {"spike_frame": 2}
    assert run("simulate", "--out", tmp_path / "e", "--set", "phantom.colour=1") == 2
    assert "phantom" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"recon": {"lambda_llr": -1}}))
    assert run("simulate", "--out", tmp_path / "f", "--config", bad) == 2


def test_config_file_and_flags_merge(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 4, "phantom": {"nx": 32}}))
    cfg = load_config(path, {"phantom": {"ny": 24}})
    assert cfg["seed"] == 4 and cfg["phantom"]["nx"] == 32 and cfg["phantom"]["ny"] == 24
    assert cfg["phantom"]["n_t"] == DEFAULTS["phantom"]["n_t"]
    with pytest.raises(ConfigError):
        load_config(None, {"sampling": {"mode": "spiral"}})
    assert merge({"a": {"b": 1}}, {"a": {"c": 2}}) == {"a": {"b": 1, "c": 2}}
