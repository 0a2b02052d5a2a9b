"""Parameter-holding building blocks: linear, convolution, batch norm.

Each layer exposes ``params()`` (name, Tensor) pairs for the optimizer and
checkpointing, plus ``buffers()`` for non-learned state (running stats).
"""

import numpy as np

from .autodiff import RunningStats, Tensor, batch_norm, conv2d, linear


def prefixed(prefix, pairs):
    return [(f"{prefix}.{name}", t) for name, t in pairs]


class Linear:
    """Affine map; ``bias=False`` drops the redundant bias of a layer feeding BN."""

    def __init__(self, d_in, d_out, rng, init="he", bias=True):
        if init == "he":
            std = np.sqrt(2.0 / d_in)
        else:
            std = np.sqrt(1.0 / d_in)
        self.w = Tensor(rng.normal(0.0, std, size=(d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=bias)

    def __call__(self, x):
        return linear(x, self.w, self.b)

    def params(self):
        out = [("w", self.w)]
        if self.b.requires_grad:
            out.append(("b", self.b))
        return out

    def buffers(self):
        return []


class Conv2d:
    """Same-padded stride-1 convolution with an odd square kernel."""

    def __init__(self, c_in, c_out, rng, kernel=3, bias=True):
        std = np.sqrt(2.0 / (c_in * kernel * kernel))
        self.w = Tensor(
            rng.normal(0.0, std, size=(c_out, c_in, kernel, kernel)),
            requires_grad=True,
        )
        self.b = Tensor(np.zeros(c_out), requires_grad=bias)

    def __call__(self, x):
        return conv2d(x, self.w, self.b)

    def params(self):
        out = [("w", self.w)]
        if self.b.requires_grad:
            out.append(("b", self.b))
        return out

    def buffers(self):
        return []


class BatchNorm:
    def __init__(self, width, eps=1e-5, momentum=0.1):
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.beta = Tensor(np.zeros(width), requires_grad=True)
        self.stats = RunningStats(
            mean=np.zeros(width), var=np.ones(width), momentum=momentum, eps=eps
        )

    def __call__(self, x, mode):
        return batch_norm(x, self.gamma, self.beta, self.stats, mode)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.stats.mean), ("running_var", self.stats.var)]
