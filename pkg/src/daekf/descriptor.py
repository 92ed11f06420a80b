"""Kalman-type recursion for linear descriptor (singular-transition) systems.

The model class handled here is

    E x[k] = A x[k-1] + delta[k] + w[k],   w ~ N(0, Q)
    z[k]   = C x[k] + r[k],                r ~ N(0, R)

where E need not be square or invertible.  As long as the stacked matrix
[E; C] has full column rank the one-step estimation problem is a
well-posed weighted least-squares problem and the familiar
predict/update recursion generalizes to

    P[k]^-1 = E' S^-1 E + C' R^-1 C,      S = Q + A P[k-1] A'
    x[k]    = P[k] (E' S^-1 (A x[k-1] + delta) + C' R^-1 z[k])

which reduces to the classical Kalman filter for square invertible E
and to a pure least-squares state solve when P[k-1] carries no
information.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla


class FilterNumericalError(RuntimeError):
    """Raised when a covariance factorization fails beyond recovery.

    In practice this signals a rank-deficient [E; C] pair, i.e. a
    non-estimable configuration, or catastrophically scaled noise input.
    """


def _chol_factor(mat: np.ndarray, jitter: float, label: str):
    """Cholesky factorization with a single diagonal-jitter retry.

    `jitter` is dimensionless: the retry adds jitter times the largest
    diagonal magnitude, so matrices of any scale get a meaningful bump.
    """
    try:
        return sla.cho_factor(mat, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    scale = max(float(np.max(np.abs(np.diag(mat)))), 1.0)
    bumped = mat + (jitter * scale) * np.eye(mat.shape[0])
    try:
        return sla.cho_factor(bumped, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise FilterNumericalError(
            f"{label} is not positive definite (jitter {jitter:g} did not help); "
            "check estimability of the measurement/model configuration"
        ) from exc


@dataclass
class LinearDescriptorSystem:
    """One time-step of a linear descriptor model with measurements.

    Attributes:
        E: left-hand transition matrix, shape (n_rows, n_x).
        A: right-hand transition matrix, shape (n_rows, n_x).
        C: measurement matrix, shape (n_m, n_x).
        Q: process noise covariance, shape (n_rows, n_rows), SPD.
        R: measurement noise covariance, shape (n_m, n_m), SPD.
    """

    E: np.ndarray
    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n_rows, n_x = self.E.shape
        if self.A.shape != (n_rows, n_x):
            raise ValueError(f"A has shape {self.A.shape}, expected {(n_rows, n_x)}")
        if self.C.shape[1] != n_x:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {n_x}")
        if self.Q.shape != (n_rows, n_rows):
            raise ValueError(f"Q has shape {self.Q.shape}, expected {(n_rows, n_rows)}")
        n_m = self.C.shape[0]
        if self.R.shape != (n_m, n_m):
            raise ValueError(f"R has shape {self.R.shape}, expected {(n_m, n_m)}")

    @property
    def n_x(self) -> int:
        return self.E.shape[1]

    @property
    def n_rows(self) -> int:
        return self.E.shape[0]

    @property
    def n_m(self) -> int:
        return self.C.shape[0]


@dataclass
class EstimatorState:
    """Filtered state estimate with covariance at one scan index."""

    x_hat: np.ndarray
    P: np.ndarray
    k: int = 0

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=float).ravel()
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n = self.x_hat.size
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")


def linear_step(
    sys: LinearDescriptorSystem,
    prev: EstimatorState,
    z: np.ndarray,
    delta: np.ndarray | None = None,
    regularization: float = 1e-10,
) -> EstimatorState:
    """Advance the descriptor recursion by one step.

    Args:
        sys: system matrices for this step.
        prev: estimate and covariance at the previous step.
        z: measurement vector, shape (n_m,).
        delta: optional known additive term on the transition rows.
        regularization: diagonal jitter used once if a factorization fails.

    Returns:
        EstimatorState at index prev.k + 1.
    """
    E, A, C, Q, R = sys.E, sys.A, sys.C, sys.Q, sys.R
    z = np.asarray(z, dtype=float).ravel()
    if z.size != sys.n_m:
        raise ValueError(f"z has size {z.size}, expected {sys.n_m}")
    if delta is None:
        delta = np.zeros(sys.n_rows)
    else:
        delta = np.asarray(delta, dtype=float).ravel()
        if delta.size != sys.n_rows:
            raise ValueError(f"delta has size {delta.size}, expected {sys.n_rows}")

    # S = Q + A P A' is the covariance of the predicted transition rows.
    S = Q + A @ prev.P @ A.T
    S = 0.5 * (S + S.T)
    S_fac = _chol_factor(S, regularization, "transition covariance Q + A P A'")
    Sinv_E = sla.cho_solve(S_fac, E, check_finite=False)

    R_fac = _chol_factor(R, regularization, "measurement covariance R")
    Rinv_C = sla.cho_solve(R_fac, C, check_finite=False)

    info = E.T @ Sinv_E + C.T @ Rinv_C
    info = 0.5 * (info + info.T)
    info_fac = _chol_factor(info, regularization, "information matrix E'S^-1 E + C'R^-1 C")

    pred = A @ prev.x_hat + delta
    rhs = E.T @ sla.cho_solve(S_fac, pred, check_finite=False) + C.T @ sla.cho_solve(
        R_fac, z, check_finite=False
    )
    x_new = sla.cho_solve(info_fac, rhs, check_finite=False)
    P_new = sla.cho_solve(info_fac, np.eye(sys.n_x), check_finite=False)
    P_new = 0.5 * (P_new + P_new.T)
    return EstimatorState(x_hat=x_new, P=P_new, k=prev.k + 1)


def batch_solve(
    sys: LinearDescriptorSystem,
    prev: EstimatorState,
    z: np.ndarray,
    delta: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the same one-step problem as `linear_step` in stacked form.

    Minimizes over the pair (x[k], x[k-1]) the weighted residual of

        [E  A] [ x[k]  ]   [delta]
        [C  0] [-x[k-1]] ~ [  z  ]
        [0  I]             [-x_prev]

    with block weights Q^-1, R^-1 and P_prev^-1.  Slower than the
    recursion but free of algebraic simplifications, which makes it a
    useful cross-check; it also produces the one-lag smoothed estimate
    of x[k-1] as a by-product.

    Returns:
        (x_filtered, x_prev_smoothed)
    """
    E, A, C, Q, R = sys.E, sys.A, sys.C, sys.Q, sys.R
    n_x, n_rows, n_m = sys.n_x, sys.n_rows, sys.n_m
    z = np.asarray(z, dtype=float).ravel()
    if delta is None:
        delta = np.zeros(n_rows)
    else:
        delta = np.asarray(delta, dtype=float).ravel()

    stacked = np.zeros((n_rows + n_m + n_x, 2 * n_x))
    stacked[:n_rows, :n_x] = E
    stacked[:n_rows, n_x:] = A
    stacked[n_rows : n_rows + n_m, :n_x] = C
    stacked[n_rows + n_m :, n_x:] = np.eye(n_x)

    target = np.concatenate([delta, z, -prev.x_hat])

    weights = sla.block_diag(
        np.linalg.inv(Q), np.linalg.inv(R), np.linalg.inv(prev.P)
    )
    normal = stacked.T @ weights @ stacked
    rhs = stacked.T @ weights @ target
    solution = np.linalg.solve(normal, rhs)
    x_filtered = solution[:n_x]
    x_prev_smoothed = -solution[n_x:]
    return x_filtered, x_prev_smoothed
