"""Constraining bijections between HMC space and the model's parameter space.

Each ``*_constrain`` returns the constrained value together with what the
gradient code needs to pull a derivative back to unconstrained coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy.special import expit, log_expit

__all__ = [
    "DomainError",
    "ConstrainedValue",
    "logistic",
    "log_logistic",
    "logistic_constrain",
    "logit",
    "exp_constrain",
    "stickbreak_constrain",
    "stickbreak_unconstrain",
    "stickbreak_log_jacobian",
    "StickBreak",
    "unconstrain",
    "constrain",
]

BOUNDARY_EPS = 1e-12


class DomainError(ValueError):
    """Value on (or outside) the boundary of its constrained domain."""


Kind = Literal["unit-interval", "positive", "simplex"]


@dataclass(frozen=True)
class ConstrainedValue:
    kind: Kind
    value: Union[float, np.ndarray]


def logistic(u):
    """Overflow-free logistic ``1 / (1 + exp(-u))`` for scalars or arrays."""
    out = expit(np.asarray(u, dtype=float))
    return out if out.ndim else float(out)


def log_logistic(u):
    """``log(logistic(u))`` without cancellation for large ``|u|``."""
    out = log_expit(np.asarray(u, dtype=float))
    return out if out.ndim else float(out)


def logit(x):
    x = np.asarray(x, dtype=float)
    out = np.log(x) - np.log1p(-x)
    return out if out.ndim else float(out)


def logistic_constrain(u: float) -> tuple[float, float]:
    """Return ``(x, dx/du)`` for the unit-interval map ``x = logistic(u)``."""
    x = logistic(float(u))
    # x * (1 - x) equals exp(-u) / (1 + exp(-u))**2 but never overflows
    return x, x * logistic(-float(u))


def exp_constrain(u: float) -> tuple[float, float]:
    """Return ``(sigma, dsigma/du)`` for ``sigma = exp(u)``."""
    s = math.exp(u)
    return s, s


class StickBreak:
    """Stick-breaking map from ``R^(K-1)`` onto the interior of the K-simplex.

    Works row-wise on a ``(..., K-1)`` array so every internal node's simplex
    can be handled in one call. The offsets ``log(1 / (K - k))`` centre the
    map so the zero vector lands on the uniform simplex.
    """

    def __init__(self, u: np.ndarray):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        self.u = u
        km1 = u.shape[-1]
        self.K = km1 + 1
        offsets = -np.log(self.K - np.arange(1, self.K, dtype=float))
        y = u + offsets
        self.z = z = logistic(y)
        self.one_minus_z = omz = logistic(-y)
        stick = np.empty(u.shape[:-1] + (self.K,))
        x = np.empty(u.shape[:-1] + (self.K,))
        rem = np.ones(u.shape[:-1])
        for k in range(km1):
            stick[..., k] = rem
            x[..., k] = rem * z[..., k]
            rem = rem * omz[..., k]
        stick[..., km1] = rem
        x[..., km1] = rem
        self.stick = stick  # stick[k]: length left before break k
        self.x = x

    def vjp(self, xbar: np.ndarray, stick_bar: np.ndarray | None = None) -> np.ndarray:
        """Pull a cotangent on ``x`` (and optionally on the stick lengths) back to ``u``."""
        xbar = np.asarray(xbar, dtype=float)
        km1 = self.K - 1
        ubar = np.empty(self.u.shape)
        # cotangent of the remaining stick after break k; starts with x_K = rem
        rem_bar = xbar[..., km1].copy()
        if stick_bar is not None:
            rem_bar = rem_bar + stick_bar[..., km1]
        for k in range(km1 - 1, -1, -1):
            s = self.stick[..., k]
            z = self.z[..., k]
            zbar = xbar[..., k] * s - rem_bar * s
            sbar = xbar[..., k] * z + rem_bar * self.one_minus_z[..., k]
            if stick_bar is not None:
                sbar = sbar + stick_bar[..., k]
            ubar[..., k] = zbar * z * self.one_minus_z[..., k]
            rem_bar = sbar
        return ubar

    def log_jacobian(self) -> tuple[np.ndarray, np.ndarray]:
        """Log absolute Jacobian determinant per row, and its gradient in ``u``."""
        km1 = self.K - 1
        z, omz, stick = self.z, self.one_minus_z, self.stick[..., :km1]
        value = np.sum(np.log(z) + np.log(omz) + np.log(stick), axis=-1)
        stick_bar = np.zeros(self.stick.shape)
        stick_bar[..., :km1] = 1.0 / stick
        grad = self.vjp(np.zeros(self.x.shape), stick_bar)
        grad += omz - z  # d/dy of log z + log(1 - z)
        return value, grad


def stickbreak_constrain(u) -> tuple[np.ndarray, "callable"]:
    """Map ``u`` (length K-1) to a K-simplex.

    Returns the simplex and a function applying the transposed Jacobian
    ``(dx/du)^T`` to a cotangent vector of length K.
    """
    sb = StickBreak(np.atleast_1d(np.asarray(u, dtype=float)))
    return sb.x, sb.vjp


def stickbreak_log_jacobian(u) -> tuple[float, np.ndarray]:
    sb = StickBreak(np.atleast_1d(np.asarray(u, dtype=float)))
    value, grad = sb.log_jacobian()
    return float(value), grad


def stickbreak_unconstrain(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    K = x.shape[-1]
    if np.any(x < BOUNDARY_EPS) or np.any(np.abs(x.sum(axis=-1) - 1.0) > 1e-9):
        raise DomainError("simplex components must be positive and sum to 1")
    u = np.empty(x.shape[:-1] + (K - 1,))
    rem = np.ones(x.shape[:-1])
    for k in range(K - 1):
        z = x[..., k] / rem
        if np.any(z >= 1.0):
            raise DomainError("simplex component exhausts the remaining stick")
        u[..., k] = np.log(z) - np.log1p(-z) + np.log(K - k - 1)
        rem = rem - x[..., k]
    return u


def unconstrain(value: ConstrainedValue):
    """Inverse of the constraining map for ``value.kind``."""
    if value.kind == "unit-interval":
        x = float(value.value)
        if not (BOUNDARY_EPS <= x <= 1.0 - BOUNDARY_EPS):
            raise DomainError(f"{x!r} is not strictly inside (0, 1)")
        return math.log(x) - math.log1p(-x)
    if value.kind == "positive":
        x = float(value.value)
        if x < BOUNDARY_EPS:
            raise DomainError(f"{x!r} is not strictly positive")
        return math.log(x)
    if value.kind == "simplex":
        return stickbreak_unconstrain(value.value)
    raise ValueError(f"unknown kind {value.kind!r}")


def constrain(kind: Kind, u):
    if kind == "unit-interval":
        return ConstrainedValue(kind, logistic_constrain(u)[0])
    if kind == "positive":
        return ConstrainedValue(kind, exp_constrain(u)[0])
    if kind == "simplex":
        return ConstrainedValue(kind, stickbreak_constrain(u)[0])
    raise ValueError(f"unknown kind {kind!r}")
