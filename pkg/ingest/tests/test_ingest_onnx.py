import json

import numpy as np
import pytest

import onnx_build as ob
from conftest import read_batches, run_qlower, write_batches
from qlower_ingest import convert, parse_model
from qlower_ingest.convert import ConversionError


def _tiny_mlp(rng):
    w1 = rng.normal(0, 0.5, size=(8, 4)).astype(np.float32)
    b1 = rng.normal(0, 0.1, size=8).astype(np.float32)
    w2 = rng.normal(0, 0.5, size=(3, 8)).astype(np.float32)
    b2 = rng.normal(0, 0.1, size=3).astype(np.float32)
    nodes = [
        ob.node("Gemm", ["x", "w1", "b1"], ["h"], "fc1",
                [ob.attr_int("transB", 1)]),
        ob.node("Relu", ["h"], ["r"], "act"),
        ob.node("Gemm", ["r", "w2", "b2"], ["y"], "fc2",
                [ob.attr_int("transB", 1)]),
    ]
    inits = [ob.tensor("w1", w1), ob.tensor("b1", b1),
             ob.tensor("w2", w2), ob.tensor("b2", b2)]
    data = ob.model(nodes, inits, [ob.value_info("x", (1, 4))],
                    [ob.value_info("y", (1, 3))])
    return data, (w1, b1, w2, b2)


def test_parse_model_structure():
    rng = np.random.default_rng(0)
    data, _ = _tiny_mlp(rng)
    g = parse_model(data)
    assert [n.op for n in g.nodes] == ["Gemm", "Relu", "Gemm"]
    assert set(g.initializers) == {"w1", "b1", "w2", "b2"}
    assert g.inputs == [("x", [1, 4])]
    assert g.outputs == ["y"]


def test_tiny_mlp_converts_clean(tmp_path):
    rng = np.random.default_rng(1)
    data, _ = _tiny_mlp(rng)
    src = tmp_path / "mlp.onnx"
    src.write_bytes(data)
    report = convert(src, tmp_path / "bundle", strict=True, stubs=False)
    assert report.ok and report.skipped == []
    assert report.mapped_nodes == 3
    manifest = json.loads((tmp_path / "bundle" / "manifest.json").read_text())
    assert [n["kind"] for n in manifest["nodes"]] == ["linear", "relu",
                                                      "linear"]
    assert len(report.checksums) == 4


def test_checksums_match_source_bytes(tmp_path):
    rng = np.random.default_rng(2)
    data, (w1, b1, w2, b2) = _tiny_mlp(rng)
    src = tmp_path / "mlp.onnx"
    src.write_bytes(data)
    report = convert(src, tmp_path / "bundle", stubs=False)
    import hashlib
    for name, arr in (("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)):
        want = hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()
        assert report.checksums[name] == want


def test_converted_mlp_matches_numpy_reference(tmp_path):
    rng = np.random.default_rng(3)
    data, (w1, b1, w2, b2) = _tiny_mlp(rng)
    src = tmp_path / "mlp.onnx"
    src.write_bytes(data)
    convert(src, tmp_path / "bundle", strict=True)

    x = rng.normal(0, 1, size=(8, 4)).astype(np.float32)
    write_batches(tmp_path / "in", [x])
    r = run_qlower("run", str(tmp_path / "bundle"), "--data",
                   str(tmp_path / "in"), "--out", str(tmp_path / "out"),
                   "--path", "float")
    assert r.returncode == 0, r.stderr
    got = read_batches(tmp_path / "out")[0]
    ref = np.maximum(x @ w1.T + b1, 0.0) @ w2.T + b2
    rel = np.abs(got - ref).max() / max(1.0, np.abs(ref).max())
    assert rel <= 1e-4


def test_unsupported_op_listed_and_strict_fails(tmp_path):
    rng = np.random.default_rng(4)
    w1 = rng.normal(0, 0.5, size=(4, 4)).astype(np.float32)
    nodes = [
        ob.node("Gemm", ["x", "w1"], ["h"], "fc", [ob.attr_int("transB", 1)]),
        ob.node("Tanh", ["h"], ["y"], "act"),
    ]
    data = ob.model(nodes, [ob.tensor("w1", w1)],
                    [ob.value_info("x", (1, 4))], [ob.value_info("y", (1, 4))])
    src = tmp_path / "m.onnx"
    src.write_bytes(data)
    report = convert(src, tmp_path / "bundle", strict=False, stubs=False)
    assert not report.ok
    assert report.skipped and report.skipped[0][0] == "Tanh"
    with pytest.raises(ConversionError, match="Tanh"):
        convert(src, tmp_path / "bundle2", strict=True)


def test_matmul_add_folds_to_linear_bias(tmp_path):
    rng = np.random.default_rng(5)
    w = rng.normal(0, 0.5, size=(4, 6)).astype(np.float32)   # (in, out)
    b = rng.normal(0, 0.1, size=6).astype(np.float32)
    nodes = [ob.node("MatMul", ["x", "w"], ["h"], "mm"),
             ob.node("Add", ["h", "b"], ["y"], "badd")]
    data = ob.model(nodes, [ob.tensor("w", w), ob.tensor("b", b)],
                    [ob.value_info("x", (1, 4))], [ob.value_info("y", (1, 6))])
    src = tmp_path / "m.onnx"
    src.write_bytes(data)
    report = convert(src, tmp_path / "bundle", strict=True, stubs=False)
    assert report.ok
    manifest = json.loads((tmp_path / "bundle" / "manifest.json").read_text())
    (lin,) = [n for n in manifest["nodes"] if n["kind"] == "linear"]
    assert "bias" in lin["params"]


def test_cli_convert_onnx(tmp_path):
    from qlower_ingest.cli import main
    rng = np.random.default_rng(6)
    data, _ = _tiny_mlp(rng)
    src = tmp_path / "m.onnx"
    src.write_bytes(data)
    rc = main(["convert", str(src), str(tmp_path / "b"),
               "--report", str(tmp_path / "rep.json")])
    assert rc == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["ok"] and rep["mapped_nodes"] == 3
    assert main(["convert", str(tmp_path / "missing.onnx"),
                 str(tmp_path / "x")]) == 4
