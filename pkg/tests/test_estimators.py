import numpy as np
from sklearn.pipeline import make_pipeline

from qlower.estimators import BundleExporter, Calibrator, Fuser, Pruner
from qlower.export import import_bundle
from qlower.fixtures import calib_batches, make_conv_bn_relu_cnn
from qlower.fuse import assert_integer_only
from qlower.sparsity import verify_nm


def test_get_params_roundtrip():
    f = Fuser(mode="prefuse", int_bits=12, frac_bits=4)
    params = f.get_params()
    assert params["mode"] == "prefuse" and params["frac_bits"] == 4
    f.set_params(frac_bits=12)
    assert f.frac_bits == 12


def test_calibrator_fit_transform():
    rng = np.random.default_rng(0)
    g = make_conv_bn_relu_cnn(rng)
    cal = Calibrator(batches=calib_batches(rng, g.inputs[0][1]))
    out = cal.fit_transform(g)
    assert out.edge_qp and out.param_qp


def test_sklearn_pipeline_composes(tmp_path):
    rng = np.random.default_rng(1)
    g = make_conv_bn_relu_cnn(rng)
    pipe = make_pipeline(
        Calibrator(batches=calib_batches(rng, g.inputs[0][1])),
        Pruner(mode="nm", n=2, m=4),
        Fuser(mode="channelwise", int_bits=4, frac_bits=12),
        BundleExporter(out_dir=str(tmp_path / "bundle"), format="hex"),
    )
    bundle = pipe.fit_transform(g)
    imported = import_bundle(bundle)
    assert_integer_only(imported)
    wq = np.asarray(imported.tensors["conv0.w.q"].data)
    ok, _ = verify_nm(wq.reshape(wq.shape[0], -1), 2, 4, group_axis=1)
    assert ok
