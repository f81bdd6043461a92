from .core import (
    FLOAT32,
    DType,
    FixedPointCode,
    Graph,
    Node,
    NODE_KINDS,
    QuantParams,
    Tensor,
    int_dtype,
    qrange,
)
from .serialize import graph_equal, load_model, manifest_dict, save_model
from .shapes import attention_internal_shapes, conv_out_extent, infer_shapes
from .validate import validate

__all__ = [
    "FLOAT32", "DType", "FixedPointCode", "Graph", "Node", "NODE_KINDS",
    "QuantParams", "Tensor", "int_dtype", "qrange", "graph_equal",
    "load_model", "manifest_dict", "save_model", "attention_internal_shapes",
    "conv_out_extent", "infer_shapes", "validate",
]
