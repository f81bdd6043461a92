from .convert import ConversionError, ConversionReport, convert
from .fixture import Fixture, FixtureError, fetch_fixture
from .onnx_min import parse_model
from .torchref import build_reference, reference_forward
from .writer import GraphSpec, write_bundle

__version__ = "0.1.0"

__all__ = [
    "ConversionError", "ConversionReport", "convert", "Fixture",
    "FixtureError", "fetch_fixture", "parse_model", "build_reference",
    "reference_forward", "GraphSpec", "write_bundle", "__version__",
]
