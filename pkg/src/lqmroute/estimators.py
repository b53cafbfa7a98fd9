"""Per-provider online estimators.

``WindowedRidgeHead`` keeps ``A = ridge*I + sum x x^T`` and ``b = sum u x``
over the last ``window`` samples and maintains ``A^-1`` with rank-one
Sherman-Morrison updates (add) and downdates (evict).
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque

import numpy as np

log = logging.getLogger(__name__)

# a downdate whose denominator 1 - x^T A^-1 x falls below this is treated as PD loss
_DOWNDATE_EPS = 1e-10


class NumericalError(RuntimeError):
    pass


class WindowedRidgeHead:
    def __init__(self, dim: int, ridge: float = 1.0, window: int = 50, bounds=(0.0, 1.0)):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if ridge <= 0:
            raise ValueError("ridge must be > 0")
        if window < 1:
            raise ValueError("window must be >= 1")
        self.dim = dim
        self.ridge = float(ridge)
        self.capacity = int(window)
        self.bounds = bounds
        self.window: deque = deque()
        self.a_matrix = self.ridge * np.eye(dim)
        self.a_inverse = np.eye(dim) / self.ridge
        self.b_vector = np.zeros(dim)
        self.rebuilds = 0

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a feature vector of length {self.dim}, got shape {x.shape}")
        return x

    def predict(self, x) -> float:
        """Raw ridge estimate ``x^T A^-1 b`` (not clamped)."""
        x = self._check(x)
        return float(x @ (self.a_inverse @ self.b_vector))

    def uncertainty(self, x) -> float:
        x = self._check(x)
        q = float(x @ self.a_inverse @ x)
        if q < 0:
            if q > -1e-12:
                return 0.0
            raise NumericalError(f"negative quadratic form {q}: A^-1 lost positive definiteness")
        return math.sqrt(q)

    def update(self, x, u: float) -> None:
        x = self._check(x)
        lo, hi = self.bounds
        if not lo <= u <= hi:
            raise ValueError(f"target must lie in [{lo}, {hi}], got {u}")
        if len(self.window) >= self.capacity:
            self.evict()
        self.window.append((x.copy(), float(u)))
        self.a_matrix += np.outer(x, x)
        self.b_vector += u * x
        ax = self.a_inverse @ x
        self.a_inverse -= np.outer(ax, ax) / (1.0 + x @ ax)
        self._symmetrize()

    def evict(self) -> None:
        """Drop the oldest sample (no-op on an empty window)."""
        if not self.window:
            return
        x, u = self.window.popleft()
        self.a_matrix -= np.outer(x, x)
        self.b_vector -= u * x
        ax = self.a_inverse @ x
        denom = 1.0 - x @ ax
        if denom <= _DOWNDATE_EPS:
            self.rebuild()
            return
        self.a_inverse += np.outer(ax, ax) / denom
        self._symmetrize()
        if np.any(np.diag(self.a_inverse) <= 0):
            self.rebuild()

    def _symmetrize(self) -> None:
        self.a_inverse = 0.5 * (self.a_inverse + self.a_inverse.T)

    def rebuild(self) -> None:
        """Recompute ``A``, ``A^-1`` and ``b`` from the window contents."""
        self.rebuilds += 1
        log.debug("rebuilding ridge head from %d window samples", len(self.window))
        A = self.ridge * np.eye(self.dim)
        b = np.zeros(self.dim)
        for x, u in self.window:
            A += np.outer(x, x)
            b += u * x
        self.a_matrix = A
        self.b_vector = b
        self.a_inverse = np.linalg.inv(A)
        self._symmetrize()

    def __len__(self):
        return len(self.window)

    def snapshot(self) -> dict:
        return {
            "dim": self.dim,
            "ridge": self.ridge,
            "window": self.capacity,
            "samples": [[x.tolist(), u] for x, u in self.window],
            "a_inverse": self.a_inverse.tolist(),
            "b_vector": self.b_vector.tolist(),
        }

    @classmethod
    def from_window(cls, samples, dim, ridge=1.0, window=50, bounds=(0.0, 1.0)):
        head = cls(dim, ridge, window, bounds)
        for x, u in list(samples)[-window:]:
            head.window.append((np.asarray(x, dtype=float).copy(), float(u)))
        head.rebuild()
        head.rebuilds = 0
        return head


class EmaLatency:
    """Exponential moving average of observed latency.

    The first observation replaces ``tau_init_ms`` outright; ``value`` falls back
    to ``tau_init_ms`` until then.
    """

    def __init__(self, rho: float = 0.2, tau_init_ms: float = 0.0):
        if not 0 < rho <= 1:
            raise ValueError(f"rho must be in (0, 1], got {rho}")
        if tau_init_ms < 0:
            raise ValueError("tau_init_ms must be >= 0")
        self.rho = float(rho)
        self.tau_hat_ms = float(tau_init_ms)
        self.initialized = False

    def update(self, tau_ms: float) -> None:
        if not tau_ms >= 0:
            raise ValueError(f"tau_ms must be >= 0, got {tau_ms}")
        if not self.initialized:
            self.tau_hat_ms = float(tau_ms)
            self.initialized = True
        else:
            self.tau_hat_ms = (1.0 - self.rho) * self.tau_hat_ms + self.rho * tau_ms

    @property
    def value(self) -> float:
        return self.tau_hat_ms

    def snapshot(self) -> dict:
        return {"tau_hat_ms": self.tau_hat_ms, "rho": self.rho, "initialized": self.initialized}


class EmaValue:
    """EMA of a bounded scalar with first-sample seeding; the mean is 0 while empty."""

    def __init__(self, rho: float = 0.2):
        self.rho = float(rho)
        self.value = 0.0
        self.n = 0

    def push(self, v: float) -> None:
        self.value = float(v) if self.n == 0 else (1.0 - self.rho) * self.value + self.rho * v
        self.n += 1

    @property
    def mean(self) -> float:
        return self.value

    @property
    def count(self) -> int:
        return self.n


class WindowedScalarStats:
    def __init__(self, window: int = 50):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.capacity = int(window)
        self.window: deque = deque()
        self.total = 0.0

    def push(self, value: float) -> None:
        if len(self.window) >= self.capacity:
            self.total -= self.window.popleft()
        self.window.append(float(value))
        self.total += value
        if len(self.window) == 1:
            self.total = float(value)

    @property
    def count(self) -> int:
        return len(self.window)

    @property
    def mean(self) -> float:
        # empty windows report 0 so unexplored arms lean on their bonus
        return self.total / len(self.window) if self.window else 0.0

    def snapshot(self) -> dict:
        return {"window": self.capacity, "values": list(self.window)}


def dump_snapshot(obj) -> str:
    """Debug dump of an estimator's state (format not stable)."""
    return json.dumps(obj.snapshot(), sort_keys=True)
