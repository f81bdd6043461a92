from .adaround import (AdaRoundState, adaround_fit, adaround_freeze,
                       adaround_init, loss_and_grad, rect_sigmoid, soft_weight)
from .calibrate import ANNOTATED_CONSUMERS, QConfig, calibrate_graph
from .observers import (Observer, compute_qparams, compute_qparams_mse, merge,
                        observe, qparams_from_range, weight_qparams)
from .qops import dequantize, fake_quant, quantize, round_half_away

__all__ = [
    "AdaRoundState", "adaround_fit", "adaround_freeze", "adaround_init",
    "loss_and_grad", "rect_sigmoid", "soft_weight", "ANNOTATED_CONSUMERS",
    "QConfig", "calibrate_graph", "Observer", "compute_qparams",
    "compute_qparams_mse", "merge", "observe", "qparams_from_range",
    "weight_qparams", "dequantize", "fake_quant", "quantize",
    "round_half_away",
]
