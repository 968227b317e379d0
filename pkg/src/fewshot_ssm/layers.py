"""Affine layer shared by the block fusions and the projection head."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class Linear:
    weight: Tensor  # (in, out)
    bias: Tensor  # (out,)

    def __call__(self, x):
        x = ad.as_tensor(x)
        if x.ndim == 1:
            return ad.reshape(ad.matmul(ad.reshape(x, (1, -1)), self.weight) + self.bias, (-1,))
        return ad.matmul(x, self.weight) + self.bias

    def named(self, prefix):
        return {f"{prefix}weight": self.weight, f"{prefix}bias": self.bias}


def init_linear(rng, fan_in, fan_out):
    """Uniform in +-1/sqrt(fan_in) for weight and bias."""
    bound = 1.0 / np.sqrt(fan_in)
    return Linear(
        Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True),
        Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True),
    )
