"""Core model types: tensors, quantization parameters, nodes, graphs.

Graphs are plain data: a topologically ordered node list, named edges,
and a tensor store. Everything is immutable by convention once built
(construction code mutates freely, published graphs are shared read-only).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import GraphError, UnknownOpError


# ---------------------------------------------------------------------------
# Element types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DType:
    """Logical element type: float32 or an integer of 2..32 bits.

    Integer tensors are stored in the smallest power-of-two byte width
    that holds ``bits`` (one value per storage unit, no bit packing).
    """

    kind: str  # "float32" | "int"
    bits: int = 32
    signed: bool = True

    def __post_init__(self):
        if self.kind not in ("float32", "int"):
            raise ValueError(f"unknown dtype kind {self.kind!r}")
        if self.kind == "int" and not 2 <= self.bits <= 32:
            raise ValueError(f"integer bits must be in 2..32, got {self.bits}")

    @property
    def is_float(self) -> bool:
        return self.kind == "float32"

    def storage(self) -> np.dtype:
        if self.is_float:
            return np.dtype("<f4")
        for width in (8, 16, 32):
            if self.bits <= width:
                return np.dtype(f"<{'i' if self.signed else 'u'}{width // 8}")
        raise ValueError(f"no storage for {self.bits} bits")

    def value_range(self) -> tuple[int, int]:
        if self.is_float:
            raise ValueError("float32 has no integer range")
        if self.signed:
            return -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        return 0, (1 << self.bits) - 1


FLOAT32 = DType("float32")


def int_dtype(bits: int, signed: bool = True) -> DType:
    return DType("int", bits, signed)


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

@dataclass
class Tensor:
    """Dense n-d array with an explicit logical element type."""

    shape: tuple[int, ...]
    dtype: DType
    data: np.ndarray

    @classmethod
    def from_array(cls, arr: np.ndarray, dtype: DType | None = None) -> "Tensor":
        if dtype is None:
            if np.issubdtype(arr.dtype, np.floating):
                dtype = FLOAT32
            else:
                raise ValueError("integer tensors need an explicit DType")
        arr = np.ascontiguousarray(arr.astype(dtype.storage(), copy=False))
        return cls(tuple(int(s) for s in arr.shape), dtype, arr)

    def validate(self, name: str = "<tensor>") -> list[str]:
        problems = []
        expect = 1
        for s in self.shape:
            if s <= 0:
                problems.append(f"tensor {name}: non-positive extent {s}")
            expect *= s
        if self.data.size != expect:
            problems.append(
                f"tensor {name}: element count {self.data.size} != shape product {expect}"
            )
        if tuple(self.data.shape) != tuple(self.shape):
            problems.append(f"tensor {name}: array shape {self.data.shape} != {self.shape}")
        if self.dtype.is_float:
            if not np.issubdtype(self.data.dtype, np.floating):
                problems.append(f"tensor {name}: float dtype with non-float storage")
        else:
            lo, hi = self.dtype.value_range()
            if self.data.size and (self.data.min() < lo or self.data.max() > hi):
                problems.append(
                    f"tensor {name}: values outside int{self.dtype.bits} range "
                    f"[{lo}, {hi}]"
                )
        return problems

    def tobytes(self) -> bytes:
        return np.ascontiguousarray(self.data.astype(self.dtype.storage(), copy=False)).tobytes()


# ---------------------------------------------------------------------------
# Quantization parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantParams:
    """Affine quantization parameters (scale, zero point, bit width).

    ``scale`` may be a scalar or a per-channel vector along ``channel_axis``.
    ``symmetric`` pins the zero point to 0 and, for signed types, reserves
    the most negative code so the range is +/-(2^(n-1) - 1).
    """

    scale: float | np.ndarray
    zero_point: int | np.ndarray
    bits: int
    signed: bool = True
    symmetric: bool = True
    channel_axis: int = 0

    @property
    def per_channel(self) -> bool:
        return isinstance(self.scale, np.ndarray) and self.scale.ndim > 0

    def qrange(self) -> tuple[int, int]:
        return qrange(self.bits, self.signed, self.symmetric)

    def scale_array(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.scale, dtype=np.float64))

    def zp_array(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.zero_point, dtype=np.int64))

    def validate(self, name: str = "<qp>", channels: int | None = None) -> list[str]:
        problems = []
        s = self.scale_array()
        z = self.zp_array()
        if not 2 <= self.bits <= 16:
            problems.append(f"{name}: bits {self.bits} outside 2..16")
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            problems.append(f"{name}: non-positive or non-finite scale")
        if self.per_channel and z.size not in (1, s.size):
            problems.append(f"{name}: zero_point length {z.size} != scale length {s.size}")
        lo, hi = qrange(self.bits, self.signed, symmetric=False)
        if np.any(z < lo) or np.any(z > hi):
            problems.append(f"{name}: zero_point outside [{lo}, {hi}]")
        if self.symmetric and np.any(z != 0):
            problems.append(f"{name}: symmetric with non-zero zero_point")
        if channels is not None and self.per_channel and s.size != channels:
            problems.append(
                f"{name}: per-channel scale length {s.size} != channel extent {channels}"
            )
        return problems

    def to_json(self) -> dict:
        s = self.scale_array()
        z = self.zp_array()
        return {
            "scale": [float(v) for v in s] if self.per_channel else float(s[0]),
            "zero_point": [int(v) for v in z] if self.per_channel else int(z[0]),
            "bits": self.bits,
            "signed": self.signed,
            "symmetric": self.symmetric,
            "channel_axis": self.channel_axis,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QuantParams":
        scale = obj["scale"]
        zp = obj["zero_point"]
        if isinstance(scale, list):
            scale = np.asarray(scale, dtype=np.float64)
            zp = np.asarray(zp if isinstance(zp, list) else [zp] * len(scale), dtype=np.int64)
        return cls(
            scale=scale,
            zero_point=zp,
            bits=int(obj["bits"]),
            signed=bool(obj["signed"]),
            symmetric=bool(obj["symmetric"]),
            channel_axis=int(obj.get("channel_axis", 0)),
        )


def qrange(bits: int, signed: bool, symmetric: bool = False) -> tuple[int, int]:
    """Representable integer range; symmetric signed reserves -2^(n-1)."""
    if signed:
        lo = -(1 << (bits - 1))
        hi = (1 << (bits - 1)) - 1
        if symmetric:
            lo = -hi
        return lo, hi
    return 0, (1 << bits) - 1


# ---------------------------------------------------------------------------
# Fixed-point codes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedPointCode:
    """A real number encoded as ``code / 2**frac_bits`` in two's complement."""

    code: int
    int_bits: int
    frac_bits: int

    def __post_init__(self):
        if not 1 <= self.int_bits <= 32:
            raise ValueError(f"int_bits {self.int_bits} outside 1..32")
        if not 0 <= self.frac_bits <= 24:
            raise ValueError(f"frac_bits {self.frac_bits} outside 0..24")
        bound = 1 << (self.int_bits + self.frac_bits - 1)
        if not -bound <= self.code < bound:
            raise ValueError(
                f"code {self.code} does not fit ({self.int_bits},{self.frac_bits}) "
                f"two's complement"
            )

    def decode(self) -> float:
        return self.code / (1 << self.frac_bits)

    @classmethod
    def encode(cls, value: float, int_bits: int, frac_bits: int) -> "FixedPointCode":
        from ..errors import FixedPointOverflowError

        code = int(np.floor(abs(value) * (1 << frac_bits) + 0.5))
        if value < 0:
            code = -code
        bound = 1 << (int_bits + frac_bits - 1)
        if not -bound <= code < bound:
            raise FixedPointOverflowError(
                f"value {value} needs code {code}, outside ({int_bits},{frac_bits}) range"
            )
        return cls(code, int_bits, frac_bits)


# ---------------------------------------------------------------------------
# Nodes and graphs
# ---------------------------------------------------------------------------

NODE_KINDS = frozenset({
    "conv2d", "linear", "batchnorm", "layernorm", "relu", "gelu", "softmax",
    "add", "avgpool", "maxpool", "flatten", "attention", "mulquant",
    "quantstub", "dequantstub",
})

# Required / optional attribute keys per kind. Validation rejects unknown
# keys so manifests stay canonical.
_ATTRS: dict[str, tuple[set, set]] = {
    "conv2d": ({"stride", "padding"}, {"groups", "in_zp"}),
    "linear": (set(), {"in_zp"}),
    "batchnorm": ({"eps"}, set()),
    "layernorm": (
        {"eps"},
        {"axis", "integer", "g_codes", "b_codes", "eps_q", "frac_r", "frac_g",
         "clamp_lo", "clamp_hi", "out_scale", "out_zp", "gamma_f", "beta_f", "in_zp"},
    ),
    "relu": (set(), set()),
    "gelu": (set(), {"lut", "in_qp", "out_qp", "ident_m_code", "ident_frac",
                     "out_mul_code", "in_zp", "out_zp", "clamp_lo", "clamp_hi"}),
    "softmax": ({"axis"}, {"exp_lut", "recip_lut", "prob_frac", "in_qp", "out_qp"}),
    "add": (set(), {"out_scale", "out_zp", "clamp_lo", "clamp_hi"}),
    "avgpool": ({"kernel", "stride"}, {"padding"}),
    "maxpool": ({"kernel", "stride"}, {"padding"}),
    "flatten": (set(), set()),
    "attention": ({"heads"}, {"stages"}),
    "mulquant": (
        {"m_code", "b_code", "int_bits", "frac_bits", "clamp_lo", "clamp_hi"},
        {"relu_folded", "in_zp", "acc_scale", "out_scale", "out_zp", "pool_kernel",
         "out_bits", "out_signed", "out_symmetric"},
    ),
    "quantstub": (set(), {"qp"}),
    "dequantstub": (set(), {"qp"}),
}


@dataclass
class Node:
    id: str
    kind: str
    inputs: list[str]
    outputs: list[str]
    attrs: dict = field(default_factory=dict)
    params: dict[str, str] = field(default_factory=dict)

    def validate(self) -> list[str]:
        problems = []
        if self.kind not in NODE_KINDS:
            problems.append(f"node {self.id}: unknown kind {self.kind!r}")
            return problems
        required, optional = _ATTRS[self.kind]
        missing = required - set(self.attrs)
        extra = set(self.attrs) - required - optional
        if missing:
            problems.append(f"node {self.id}: missing attrs {sorted(missing)}")
        if extra:
            problems.append(f"node {self.id}: unexpected attrs {sorted(extra)}")
        return problems


@dataclass
class Graph:
    """Topologically ordered compute graph over named edges."""

    nodes: list[Node]
    inputs: list[tuple[str, tuple[int, ...]]]
    outputs: list[str]
    tensors: dict[str, Tensor] = field(default_factory=dict)
    edge_qp: dict[str, QuantParams] = field(default_factory=dict)
    param_qp: dict[str, QuantParams] = field(default_factory=dict)
    edge_shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def producer(self, edge: str) -> Node | None:
        for n in self.nodes:
            if edge in n.outputs:
                return n
        return None

    def consumers(self, edge: str) -> list[Node]:
        return [n for n in self.nodes if edge in n.inputs]

    def copy(self) -> "Graph":
        return Graph(
            nodes=[replace(n, inputs=list(n.inputs), outputs=list(n.outputs),
                           attrs=dict(n.attrs), params=dict(n.params))
                   for n in self.nodes],
            inputs=list(self.inputs),
            outputs=list(self.outputs),
            tensors=dict(self.tensors),
            edge_qp=dict(self.edge_qp),
            param_qp=dict(self.param_qp),
            edge_shapes=dict(self.edge_shapes),
        )

    def check_kinds(self):
        for n in self.nodes:
            if n.kind not in NODE_KINDS:
                raise UnknownOpError(f"node {n.id}: unknown op kind {n.kind!r}")

    def check_topology(self):
        """Raise CycleError / GraphError on bad producer ordering."""
        from ..errors import CycleError

        produced = {e for e, _ in self.inputs}
        seen_producers: dict[str, str] = {}
        for n in self.nodes:
            for e in n.inputs:
                if e not in produced:
                    raise CycleError(
                        f"node {n.id}: input edge {e!r} not produced earlier "
                        f"(cycle or dangling edge)"
                    )
            for e in n.outputs:
                if e in seen_producers or e in {i for i, _ in self.inputs}:
                    raise GraphError(f"edge {e!r} has multiple producers")
                seen_producers[e] = n.id
                produced.add(e)
        for e in self.outputs:
            if e not in produced:
                raise GraphError(f"graph output {e!r} is never produced")
