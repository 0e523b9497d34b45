"""Fixed activations with their Lipschitz constants."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T


@lru_cache(maxsize=None)
def gelu_lipschitz() -> float:
    """sup |gelu'| estimated on a dense grid over [-10, 10]."""
    x = np.linspace(-10.0, 10.0, 2_000_001)
    return float(np.max(np.abs(T.gelu_grad_np(x))))


@dataclass(frozen=True)
class Activation:
    name: str

    def __post_init__(self):
        if self.name not in ("relu", "gelu"):
            raise ValueError(f"unknown activation {self.name!r}")

    @property
    def lipschitz(self) -> float:
        return 1.0 if self.name == "relu" else gelu_lipschitz()

    @property
    def zero_at_zero(self) -> bool:
        return True

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.relu(x) if self.name == "relu" else T.gelu(x)

    def numpy(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0) if self.name == "relu" else T.gelu_np(x)


RELU = Activation("relu")
GELU = Activation("gelu")
