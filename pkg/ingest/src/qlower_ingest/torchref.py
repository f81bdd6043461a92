"""Source-runtime reference: build a torch module from an architecture
descriptor + state archive, for parity checks against the converted model.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn


class _Ref(nn.Module):
    def __init__(self, desc: dict, state: dict):
        super().__init__()
        self.steps = []
        t = lambda k: torch.from_numpy(np.asarray(state[k], dtype=np.float32))
        for layer in desc["layers"]:
            kind = layer["kind"]
            if kind == "conv2d":
                w = t(layer["weight"])
                m = nn.Conv2d(w.shape[1] * layer.get("groups", 1), w.shape[0],
                              w.shape[2], stride=layer.get("stride", 1),
                              padding=layer.get("padding", 0),
                              groups=layer.get("groups", 1),
                              bias=bool(layer.get("bias")))
                m.weight.data = w
                if layer.get("bias"):
                    m.bias.data = t(layer["bias"])
            elif kind == "linear":
                w = t(layer["weight"])
                m = nn.Linear(w.shape[1], w.shape[0], bias=bool(layer.get("bias")))
                m.weight.data = w
                if layer.get("bias"):
                    m.bias.data = t(layer["bias"])
            elif kind == "batchnorm":
                g = t(layer["weight"])
                m = nn.BatchNorm2d(g.shape[0], eps=layer.get("eps", 1e-5))
                m.weight.data = g
                m.bias.data = t(layer["bias"])
                m.running_mean.data = t(layer["mean"])
                m.running_var.data = t(layer["var"])
            elif kind == "layernorm":
                g = t(layer["weight"])
                m = nn.LayerNorm(g.shape[0], eps=layer.get("eps", 1e-5))
                m.weight.data = g
                m.bias.data = t(layer["bias"])
            elif kind == "relu":
                m = nn.ReLU()
            elif kind == "gelu":
                m = nn.GELU()
            elif kind == "softmax":
                m = nn.Softmax(dim=layer.get("axis", -1))
            elif kind == "maxpool":
                m = nn.MaxPool2d(layer["kernel"],
                                 stride=layer.get("stride", layer["kernel"]),
                                 padding=layer.get("padding", 0))
            elif kind == "avgpool":
                m = nn.AvgPool2d(layer["kernel"],
                                 stride=layer.get("stride", layer["kernel"]),
                                 padding=layer.get("padding", 0))
            elif kind == "flatten":
                m = nn.Flatten()
            else:
                raise ValueError(f"no torch reference for {kind!r}")
            self.steps.append(m)
        self.body = nn.Sequential(*self.steps)

    def forward(self, x):
        return self.body(x)


def build_reference(desc: dict, state: dict) -> nn.Module:
    m = _Ref(desc, state)
    m.eval()
    return m


def reference_forward(desc: dict, state: dict, x: np.ndarray) -> np.ndarray:
    m = build_reference(desc, state)
    with torch.no_grad():
        return m(torch.from_numpy(np.asarray(x, dtype=np.float32))).numpy()
