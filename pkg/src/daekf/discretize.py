"""One-step discretization rules for semi-explicit DAE models.

A continuous model

    dy/dt = fc(y, v)        (differential part)
    0     = g(y, v)         (algebraic part)

is advanced over a step h through the implicit relation

    y[k] = h * f(y[k-1], v[k-1], y[k], v[k]) + y[k-1]

where f is the scheme-dependent combination of the continuous
right-hand side at the two ends of the step:

    forward Euler   f = fc(y[k-1], v[k-1])
    backward Euler  f = fc(y[k], v[k])
    trapezoidal     f = (fc(y[k-1], v[k-1]) + fc(y[k], v[k])) / 2

The partial derivatives of f with respect to the old and new arguments
are what the estimator needs to build its transition matrices, so they
are exposed here alongside the map itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

FORWARD_EULER = "forward"
BACKWARD_EULER = "backward"
TRAPEZOIDAL = "trapezoidal"

_SCHEMES = (FORWARD_EULER, BACKWARD_EULER, TRAPEZOIDAL)


class DaeModel(Protocol):
    """Continuous semi-explicit DAE surface consumed by the schemes."""

    n_diff: int
    n_alg: int

    def differential_rhs(self, y: np.ndarray, v: np.ndarray) -> np.ndarray: ...

    def algebraic_residual(self, y: np.ndarray, v: np.ndarray) -> np.ndarray: ...

    def jacobians(
        self, y: np.ndarray, v: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns (d f/d y, d f/d v, d g/d y, d g/d v) at (y, v)."""
        ...


@dataclass(frozen=True)
class DiscretizationScheme:
    """Integration rule plus step length, in seconds."""

    kind: str
    h: float

    def __post_init__(self):
        if self.kind not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.kind!r}, expected one of {_SCHEMES}")
        if not self.h > 0.0:
            raise ValueError(f"step length must be positive, got {self.h}")

    @property
    def implicit(self) -> bool:
        return self.kind != FORWARD_EULER

    def weights(self) -> tuple[float, float]:
        """(previous-end, current-end) weights of the continuous rhs."""
        if self.kind == FORWARD_EULER:
            return 1.0, 0.0
        if self.kind == BACKWARD_EULER:
            return 0.0, 1.0
        return 0.5, 0.5


def step_residual(
    scheme: DiscretizationScheme,
    model: DaeModel,
    y_prev: np.ndarray,
    v_prev: np.ndarray,
    y_cur: np.ndarray,
    v_cur: np.ndarray,
) -> np.ndarray:
    """Scheme combination f of the continuous rhs over one step.

    The defining relation of the step is y_cur - h*f - y_prev = 0; this
    returns f so callers can form either the update or its residual.
    """
    wp, wc = scheme.weights()
    out = np.zeros(model.n_diff)
    if wp != 0.0:
        out += wp * model.differential_rhs(y_prev, v_prev)
    if wc != 0.0:
        out += wc * model.differential_rhs(y_cur, v_cur)
    return out


def step_jacobians(
    scheme: DiscretizationScheme,
    model: DaeModel,
    y_prev: np.ndarray,
    v_prev: np.ndarray,
    y_cur: np.ndarray,
    v_cur: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Partials of the discrete map f at the two ends of the step.

    Returns:
        (A1, A2, E1, E2) with A1 = df/dy_prev, A2 = df/dv_prev,
        E1 = df/dy_cur, E2 = df/dv_cur.  Forward Euler has zero E1/E2,
        backward Euler zero A1/A2, trapezoidal carries half of each.
    """
    wp, wc = scheme.weights()
    n_d, n_a = model.n_diff, model.n_alg
    if wp != 0.0:
        fy_p, fv_p, _, _ = model.jacobians(y_prev, v_prev)
        A1, A2 = wp * fy_p, wp * fv_p
    else:
        A1, A2 = np.zeros((n_d, n_d)), np.zeros((n_d, n_a))
    if wc != 0.0:
        fy_c, fv_c, _, _ = model.jacobians(y_cur, v_cur)
        E1, E2 = wc * fy_c, wc * fv_c
    else:
        E1, E2 = np.zeros((n_d, n_d)), np.zeros((n_d, n_a))
    return A1, A2, E1, E2


def amplification_factor(scheme: DiscretizationScheme, lam: complex) -> float:
    """|y1/y0| for one step of dy/dt = lam*y, by solving the step relation.

    Used to probe A-stability: implicit schemes keep the factor at or
    below one for any lam with negative real part, explicit Euler does
    not once |1 + h*lam| exceeds one.
    """
    z = scheme.h * lam
    wp, wc = scheme.weights()
    # y1 = (wp*z*y0 + wc*z*y1) + y0, solved for y1/y0.
    return abs((1.0 + wp * z) / (1.0 - wc * z))
