"""qlower: post-training quantization, integer-only lowering, and
hardware-ready export for small CNN / ViT models.

The flow: calibrate a float graph (observers pick scales, integer weights
freeze), optionally prune, fuse norm layers and quantizer scales into
per-layer fixed-point rescalers, verify the integer path against the
fake-quant training path, then export hex/binary memory files.
"""

from .ir import (DType, FixedPointCode, Graph, Node, QuantParams, Tensor,
                 graph_equal, infer_shapes, load_model, save_model, validate)
from .quant import (Observer, QConfig, calibrate_graph, compute_qparams,
                    compute_qparams_mse, dequantize, fake_quant, observe,
                    quantize)
from .rescale import MulQuantParams, build_mulquant, requantize
from .fuse import (FuseMode, NormParams, assert_integer_only, bn_channelwise,
                   bn_prefuse, fuse_graph, layernorm_fold)
from .engine import (ExecReport, compare_paths, exec_fakequant, exec_float,
                     exec_int, int_softmax, lut_build)
from .sparsity import (SparsityConfig, prune_graph, prune_magnitude, prune_nm,
                       schedule_sparsity, verify_nm)
from .export import (ExportConfig, bundle_hash, export_binstr, export_hex,
                     export_model, export_rawbin, import_bundle, parse_binstr,
                     parse_hex, parse_rawbin)

__version__ = "0.1.0"

__all__ = [
    "DType", "FixedPointCode", "Graph", "Node", "QuantParams", "Tensor",
    "graph_equal", "infer_shapes", "load_model", "save_model", "validate",
    "Observer", "QConfig", "calibrate_graph", "compute_qparams",
    "compute_qparams_mse", "dequantize", "fake_quant", "observe", "quantize",
    "MulQuantParams", "build_mulquant", "requantize", "FuseMode",
    "NormParams", "assert_integer_only", "bn_channelwise", "bn_prefuse",
    "fuse_graph", "layernorm_fold", "ExecReport", "compare_paths",
    "exec_fakequant", "exec_float", "exec_int", "int_softmax", "lut_build",
    "SparsityConfig", "prune_graph", "prune_magnitude", "prune_nm",
    "schedule_sparsity", "verify_nm", "ExportConfig", "bundle_hash",
    "export_binstr", "export_hex", "export_model", "export_rawbin",
    "import_bundle", "parse_binstr", "parse_hex", "parse_rawbin",
    "__version__",
]
