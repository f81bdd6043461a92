"""scikit-learn style stage wrappers.

Each pipeline stage is a transformer over Graph objects, so the whole
lowering flow composes with ``sklearn.pipeline.Pipeline`` and exposes
``get_params``/``set_params`` for config sweeps::

    lowered = make_pipeline(
        Calibrator(batches=calib),
        Pruner(mode="nm", n=2, m=4),
        Fuser(mode="channelwise", int_bits=4, frac_bits=12),
    ).fit_transform(graph)
"""

from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator, TransformerMixin

from .export import ExportConfig, export_model
from .fuse import FuseMode, fuse_graph
from .ir import Graph
from .quant.calibrate import QConfig, calibrate_graph
from .sparsity import SparsityConfig, prune_graph


class Calibrator(BaseEstimator, TransformerMixin):
    """Annotates a float graph with quantization parameters."""

    def __init__(self, batches=None, w_bits=8, a_bits=8, symmetric_a=False,
                 per_channel_w=True, method="minmax", calib_batches=4,
                 adaround_iters=600):
        self.batches = batches
        self.w_bits = w_bits
        self.a_bits = a_bits
        self.symmetric_a = symmetric_a
        self.per_channel_w = per_channel_w
        self.method = method
        self.calib_batches = calib_batches
        self.adaround_iters = adaround_iters

    def _config(self) -> QConfig:
        return QConfig(w_bits=self.w_bits, a_bits=self.a_bits,
                       symmetric_a=self.symmetric_a,
                       per_channel_w=self.per_channel_w, method=self.method,
                       calib_batches=self.calib_batches,
                       adaround_iters=self.adaround_iters)

    def fit(self, X: Graph, y=None):
        self.graph_ = calibrate_graph(X, self.batches, self._config())
        return self

    def transform(self, X: Graph) -> Graph:
        if getattr(self, "graph_", None) is None:
            self.fit(X)
        return self.graph_


class Pruner(BaseEstimator, TransformerMixin):
    """Zeroes weights element-wise or in N:M groups."""

    def __init__(self, mode="nm", sparsity=0.5, n=2, m=4):
        self.mode = mode
        self.sparsity = sparsity
        self.n = n
        self.m = m

    def fit(self, X: Graph, y=None):
        return self

    def transform(self, X: Graph) -> Graph:
        cfg = SparsityConfig(mode=self.mode, target_sparsity=self.sparsity,
                             n=self.n, m=self.m)
        return prune_graph(X, cfg)


class Fuser(BaseEstimator, TransformerMixin):
    """Lowers a calibrated graph to integer ops + fixed-point rescalers."""

    def __init__(self, mode="channelwise", int_bits=4, frac_bits=12,
                 ln_mode="instant"):
        self.mode = mode
        self.int_bits = int_bits
        self.frac_bits = frac_bits
        self.ln_mode = ln_mode

    def fit(self, X: Graph, y=None):
        return self

    def transform(self, X: Graph) -> Graph:
        return fuse_graph(X, FuseMode(mode=self.mode, int_bits=self.int_bits,
                                      frac_bits=self.frac_bits,
                                      ln_mode=self.ln_mode))


class BundleExporter(BaseEstimator, TransformerMixin):
    """Writes the deployment bundle; transform returns the bundle path."""

    def __init__(self, out_dir="bundle", format="hex", word_bits=8,
                 words_per_line=1, pack=False):
        self.out_dir = out_dir
        self.format = format
        self.word_bits = word_bits
        self.words_per_line = words_per_line
        self.pack = pack

    def fit(self, X: Graph, y=None):
        return self

    def transform(self, X: Graph) -> Path:
        cfg = ExportConfig(format=self.format, word_bits=self.word_bits,
                           words_per_line=self.words_per_line, pack=self.pack)
        return export_model(X, self.out_dir, cfg)
