"""Iterated extended Kalman filtering for nonlinear descriptor models.

Each PMU scan is processed by relinearizing the discretized DAE around
the current iterate and applying the linear descriptor recursion from
`descriptor`, repeating until the iterate stops moving.  Because the
algebraic equations at buses with unmodeled injection are simply absent
from the model, the transition matrix pair is rectangular and the
update is naturally under-determined row-wise; full column rank of the
stacked [E; C] (see `estimability`) is what keeps the step well posed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .descriptor import EstimatorState, LinearDescriptorSystem, linear_step
from .discretize import DaeModel, DiscretizationScheme, step_jacobians, step_residual


class DescriptorModel(DaeModel, Protocol):
    """What the filter needs from a model: dynamics, measurements, noise.

    `n_eq` is the number of retained algebraic equations; it is smaller
    than `n_alg` (the number of algebraic variables) whenever buses with
    unknown injection have had their balance equations dropped.
    """

    n_eq: int
    n_meas: int

    def measurement_matrix(self) -> np.ndarray:
        """Linear map from algebraic variables to measurements, (n_meas, n_alg)."""
        ...

    def noise_covariances(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        """(Q, R) for step length h; Q covers n_diff + n_eq transition rows."""
        ...


@dataclass(frozen=True)
class FilterConfig:
    """Iteration controls for the per-scan update."""

    epsilon: float = 1e-4
    max_iterations: int = 10
    regularization: float = 1e-10

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class LinearizationWorkspace:
    """Linearized descriptor pair of one scan at a given iterate.

    A1/A2 are the discrete-map partials at the previous estimate, E1/E2
    at the iterate, E3/E4 the algebraic partials at the iterate.  E_mat,
    A_mat and delta are the assembled blocks of

        E_mat x[k] = A_mat x[k-1] + delta + noise
    """

    A1: np.ndarray
    A2: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    E3: np.ndarray
    E4: np.ndarray
    E_mat: np.ndarray
    A_mat: np.ndarray
    delta: np.ndarray


@dataclass
class IekfResult:
    """Outcome of one scan update, with iteration diagnostics."""

    state: EstimatorState
    iterations: int
    converged: bool
    final_delta: float


def assemble_linearization(
    model: DescriptorModel,
    scheme: DiscretizationScheme,
    x_prev: np.ndarray,
    x_iter: np.ndarray,
) -> LinearizationWorkspace:
    """Linearize the discretized model around (x_prev, x_iter).

    The first-order expansion of the implicit step relation and of the
    algebraic residual about the iterate yields a linear descriptor pair
    whose constant term `delta` collects the expansion remainders.  For
    a model whose rhs and residual are linear in the states the
    remainders cancel exactly and delta is identically zero.
    """
    n_d, n_a = model.n_diff, model.n_alg
    h = scheme.h
    y_prev, v_prev = x_prev[:n_d], x_prev[n_d:]
    y_it, v_it = x_iter[:n_d], x_iter[n_d:]

    A1, A2, E1, E2 = step_jacobians(scheme, model, y_prev, v_prev, y_it, v_it)
    _, _, E3, E4 = model.jacobians(y_it, v_it)
    f_val = step_residual(scheme, model, y_prev, v_prev, y_it, v_it)
    g_val = model.algebraic_residual(y_it, v_it)

    n_eq = g_val.size
    n_x = n_d + n_a

    E_mat = np.zeros((n_d + n_eq, n_x))
    E_mat[:n_d, :n_d] = h * E1 - np.eye(n_d)
    E_mat[:n_d, n_d:] = h * E2
    E_mat[n_d:, :n_d] = E3
    E_mat[n_d:, n_d:] = E4

    A_mat = np.zeros((n_d + n_eq, n_x))
    A_mat[:n_d, :n_d] = -h * A1 - np.eye(n_d)
    A_mat[:n_d, n_d:] = -h * A2

    delta = np.zeros(n_d + n_eq)
    delta[:n_d] = h * (E1 @ y_it + E2 @ v_it + A1 @ y_prev + A2 @ v_prev - f_val)
    delta[n_d:] = E3 @ y_it + E4 @ v_it - g_val

    return LinearizationWorkspace(
        A1=A1, A2=A2, E1=E1, E2=E2, E3=E3, E4=E4,
        E_mat=E_mat, A_mat=A_mat, delta=delta,
    )


def iekf_step(
    model: DescriptorModel,
    scheme: DiscretizationScheme,
    prev: EstimatorState,
    z: np.ndarray,
    config: FilterConfig = FilterConfig(),
) -> IekfResult:
    """Process one measurement scan.

    Starts from the previous estimate, alternates relinearization and
    linear descriptor updates, and stops when the infinity norm of the
    iterate change drops to `config.epsilon` or the iteration budget is
    exhausted (the latter is reported, not raised).
    """
    n_x = model.n_diff + model.n_alg
    if prev.x_hat.size != n_x:
        raise ValueError(f"previous estimate has size {prev.x_hat.size}, expected {n_x}")

    C = np.zeros((model.n_meas, n_x))
    C[:, model.n_diff:] = model.measurement_matrix()
    Q, R = model.noise_covariances(scheme.h)

    x_prev = prev.x_hat
    iterate = x_prev.copy()
    new_state = prev
    delta_norm = np.inf
    iterations = 0
    converged = False
    for _ in range(config.max_iterations):
        ws = assemble_linearization(model, scheme, x_prev, iterate)
        sys = LinearDescriptorSystem(E=ws.E_mat, A=ws.A_mat, C=C, Q=Q, R=R)
        new_state = linear_step(
            sys, prev, z, delta=ws.delta, regularization=config.regularization
        )
        iterations += 1
        delta_norm = float(np.max(np.abs(new_state.x_hat - iterate)))
        iterate = new_state.x_hat
        if delta_norm <= config.epsilon:
            converged = True
            break

    state = EstimatorState(x_hat=iterate, P=new_state.P, k=prev.k + 1)
    return IekfResult(
        state=state, iterations=iterations, converged=converged, final_delta=delta_norm
    )
