"""Exception types shared across the toolkit.

Every error names the offending graph entity (node id, tensor name, edge)
in its message so pipeline failures are diagnosable from logs alone.
"""


class GraphError(Exception):
    """Base class for model/graph-level failures."""


class MissingBlobError(GraphError):
    """A manifest tensor entry points at a blob that does not exist."""


class ByteCountError(GraphError):
    """Blob size disagrees with shape x element width."""


class UnknownOpError(GraphError):
    """Node kind is not part of the supported op set."""


class CycleError(GraphError):
    """Graph is not acyclic."""


class ShapeError(GraphError):
    """Shape inference failed or shapes are inconsistent."""


class QuantError(Exception):
    """Invalid quantization parameters or inputs (e.g. scale <= 0, NaN)."""


class FixedPointOverflowError(Exception):
    """A real value does not fit the declared fixed-point format."""


class FusionError(Exception):
    """Graph pattern cannot be lowered (e.g. norm layer with no producer)."""


class AccumulatorOverflowError(Exception):
    """Integer accumulation exceeded the 64-bit budget."""


class IntegerPurityError(Exception):
    """A float-typed value appeared on the integer-only execution path."""


class ExportError(Exception):
    """Export target cannot represent the data (width, packing, path)."""
