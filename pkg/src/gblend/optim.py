"""Adam optimizer over autodiff tensors."""

from __future__ import annotations

import numpy as np

from .autodiff import NumericError, ShapeError, Tensor


class Adam:
    """Standard Adam with bias correction; updates parameters in place.

    Per-parameter first/second moment buffers are allocated lazily and always
    match the parameter's shape. The step counter increases by one per
    :meth:`step` call.
    """

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-7):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[Tensor, np.ndarray] = {}
        self._v: dict[Tensor, np.ndarray] = {}

    def step(self, params, grads) -> None:
        """Apply one update from ``grads`` (a tensor->array mapping).

        Parameters without a gradient entry and without accumulated momentum
        are left untouched; a missing entry is an all-zero gradient.
        """
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p in params:
            g = grads.get(p)
            if g is None:
                if p not in self._m:
                    continue
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            if not (np.isfinite(g.min()) and np.isfinite(g.max())):
                raise NumericError(f"non-finite gradient for parameter {p.name!r}")
            m = self._m.get(p)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            else:
                v = self._v[p]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self._m[p] = m
            self._v[p] = v
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
