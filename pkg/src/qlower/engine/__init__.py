from .kernels import avgpool, conv2d, conv2d_int, im2col, linear, linear_int, maxpool
from .luts import (ISQRT_FRAC, PROB_FRAC, LUTTable, int_gelu, int_inv_sqrt,
                   int_layernorm_instant, int_softmax, lut_build, rhaz_shift,
                   softmax_luts)
from .attention import (annotated_attention, float_attention,
                        fused_attention_float, fused_attention_int, merge_heads,
                        split_heads)
from .paths import (ExecReport, compare_paths, exec_collect, exec_fakequant,
                    exec_float, exec_int, input_qp, requantize)

__all__ = [
    "avgpool", "conv2d", "conv2d_int", "im2col", "linear", "linear_int",
    "maxpool", "ISQRT_FRAC", "PROB_FRAC", "LUTTable", "int_gelu",
    "int_inv_sqrt", "int_layernorm_instant", "int_softmax", "lut_build",
    "rhaz_shift", "softmax_luts", "annotated_attention", "float_attention",
    "fused_attention_float", "fused_attention_int", "merge_heads",
    "split_heads", "ExecReport", "compare_paths", "exec_collect",
    "exec_fakequant", "exec_float", "exec_int", "input_qp", "requantize",
]
