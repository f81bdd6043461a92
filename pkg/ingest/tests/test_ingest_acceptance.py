"""Secondary acceptance: a converted pretrained MNIST-scale CNN passes
source-runtime parity, and after 8/8 PTQ plus channel-wise fusion the
integer path's top-1 accuracy stays within 0.5% of float on a 1k eval.
"""

import json

import numpy as np
import torch

from conftest import read_batches, run_qlower, write_batches
from qlower_ingest import reference_forward
from qlower_ingest.convert import load_state_archive
from qlower_ingest.fixture import fetch_fixture


def test_criterion_10_fixture_parity_and_ptq_drop(fixture_cache, tmp_path):
    fx = fetch_fixture("digits-cnn", cache_dir=fixture_cache)
    data = np.load(fx.data_path)
    x_train = data["x_train"]
    x_eval, y_eval = data["x_eval"][:1000], data["y_eval"][:1000]
    desc = json.loads(fx.descriptor_path.read_text("utf-8"))
    state = load_state_archive(fx.state_path)

    # source-runtime vs float-path parity on 8 random inputs
    rng = np.random.default_rng(0)
    probe = rng.normal(0, 1, size=(8, 1, 28, 28)).astype(np.float32)
    write_batches(tmp_path / "probe", [probe])
    r = run_qlower("run", str(fx.bundle_dir), "--data", str(tmp_path / "probe"),
                   "--out", str(tmp_path / "probe_out"), "--path", "float")
    assert r.returncode == 0, r.stderr
    got = read_batches(tmp_path / "probe_out")[0]
    want = reference_forward(desc, state, probe)
    rel = np.abs(got - want).max() / max(1.0, np.abs(want).max())
    assert rel <= 1e-4, f"parity {rel}"
    print(f"\n  source-runtime parity max rel diff {rel:.2e} <= 1e-4")

    # 8/8 min-max PTQ + channel-wise fusion through the CLI
    write_batches(tmp_path / "calib",
                  [x_train[i:i + 32] for i in range(0, 128, 32)])
    ann = tmp_path / "ann"
    fused = tmp_path / "fused"
    r = run_qlower("calibrate", str(fx.bundle_dir), "--data",
                   str(tmp_path / "calib"), "--out", str(ann),
                   "--w-bits", "8", "--a-bits", "8", "--method", "minmax")
    assert r.returncode == 0, r.stderr
    r = run_qlower("fuse", str(ann), "--out", str(fused), "--mode",
                   "channelwise", "--int-bits", "4", "--frac-bits", "12")
    assert r.returncode == 0, r.stderr

    eval_batches = [x_eval[i:i + 125] for i in range(0, 1000, 125)]
    write_batches(tmp_path / "eval", eval_batches)
    r = run_qlower("run", str(fx.bundle_dir), "--data", str(tmp_path / "eval"),
                   "--out", str(tmp_path / "float_out"), "--path", "float")
    assert r.returncode == 0, r.stderr
    r = run_qlower("run", str(fused), "--data", str(tmp_path / "eval"),
                   "--out", str(tmp_path / "int_out"), "--path", "int",
                   "--assert-int-only")
    assert r.returncode == 0, r.stderr

    fl = np.concatenate([b.argmax(axis=1) for b in
                         read_batches(tmp_path / "float_out")])
    iq = np.concatenate([b.argmax(axis=1) for b in
                         read_batches(tmp_path / "int_out")])
    acc_float = float((fl == y_eval).mean())
    acc_int = float((iq == y_eval).mean())
    drop = acc_float - acc_int
    print(f"  float top-1 {acc_float:.4f}, integer top-1 {acc_int:.4f}, "
          f"drop {drop * 100:.2f}%")
    assert drop <= 0.005, f"top-1 drop {drop * 100:.2f}% > 0.5%"
