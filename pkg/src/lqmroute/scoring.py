"""Scoring kernel: renewal-reward rate, additive composite, gap deflation and
the two-arm separation interval between them.

All functions accept scalars or numpy arrays; scalar inputs return floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import AdditiveParams


def renewal_score(u, tau_ms, l_ref_ms):
    """Expected quality per service cycle, ``u / (1 + tau/l_ref)``.

    A call occupies one accounting unit plus ``tau/l_ref`` units of service
    time, so a provider with ``u == 0`` scores 0 however fast it is.
    """
    if np.any(np.asarray(l_ref_ms) <= 0):
        raise ValueError(f"l_ref_ms must be > 0, got {l_ref_ms}")
    if np.any(np.asarray(tau_ms) < 0):
        raise ValueError("tau_ms must be >= 0")
    out = np.asarray(u, dtype=float) / (1.0 + np.asarray(tau_ms, dtype=float) / l_ref_ms)
    return float(out) if out.ndim == 0 else out


def normalized_latency(tau_ms, cap_ms):
    return np.minimum(np.asarray(tau_ms, dtype=float) / cap_ms, 1.0)


def additive_score(u, tau_ms, params: AdditiveParams, l_ref_ms: float = 1500.0):
    """Scalarized reward ``alpha*u - (1-alpha)*min(tau/cap, 1)``.

    ``l_ref_ms`` is only consulted when ``params.latency_cap_ms`` is None.
    """
    if np.any(np.asarray(u) < 0) or np.any(np.asarray(u) > 1):
        raise ValueError("u must lie in [0, 1]")
    if np.any(np.asarray(tau_ms) < 0):
        raise ValueError("tau_ms must be >= 0")
    a = params.alpha
    out = a * np.asarray(u, dtype=float) - (1.0 - a) * normalized_latency(tau_ms, params.cap(l_ref_ms))
    return float(out) if out.ndim == 0 else out


def gap_deflation(u_hats, lambda_defl: float) -> np.ndarray:
    u = np.asarray(u_hats, dtype=float)
    if u.size == 0:
        raise ValueError("need at least one provider")
    gaps = np.maximum(0.0, u.max() - u)
    return 1.0 + lambda_defl * gaps


@dataclass(frozen=True)
class SeparationInstance:
    """Two arms: arm 1 is slower (``tau1_norm > tau2_norm``), arm 2 has quality ``u2``."""

    alpha: float
    u2: float
    tau1_norm: float
    tau2_norm: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0 <= self.u2 <= 1:
            raise ValueError(f"u2 must be in [0, 1], got {self.u2}")
        for v in (self.tau1_norm, self.tau2_norm):
            if not 0 <= v <= 1:
                raise ValueError(f"normalized latencies must be in [0, 1], got {v}")
        if not self.tau1_norm > self.tau2_norm:
            raise ValueError("need tau1_norm > tau2_norm")

    @property
    def delta_tau(self) -> float:
        return self.tau1_norm - self.tau2_norm


def separation_interval(inst: SeparationInstance) -> Optional[tuple[float, float]]:
    """Open interval of quality gaps on which the two rules rank the arms differently.

    Below ``lo`` the renewal rule also prefers the fast arm; above ``hi`` the
    additive rule also prefers the slow one.  Returns None when empty.
    """
    lo = inst.u2 * inst.delta_tau / (1.0 + inst.tau2_norm)
    hi = (1.0 - inst.alpha) / inst.alpha * inst.delta_tau
    return (lo, hi) if lo < hi else None


def rankings_disagree(inst: SeparationInstance, delta_u: float) -> tuple[int, int]:
    """Return ``(additive_choice, renewal_choice)`` as arm numbers 1 or 2.

    Arm 1 has quality ``u2 + delta_u`` and the larger normalized latency.
    Equal scores go to arm 1 (lowest index).
    """
    u1 = inst.u2 + delta_u
    if not 0 <= u1 <= 1:
        raise ValueError(f"u2 + delta_u must lie in [0, 1], got {u1}")
    params = AdditiveParams(alpha=inst.alpha, latency_cap_ms=1.0)
    add = additive_score(np.array([u1, inst.u2]), np.array([inst.tau1_norm, inst.tau2_norm]), params)
    ren = renewal_score(np.array([u1, inst.u2]), np.array([inst.tau1_norm, inst.tau2_norm]), 1.0)
    return int(np.argmax(add)) + 1, int(np.argmax(ren)) + 1
