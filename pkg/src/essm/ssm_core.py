"""Continuous/discrete state space systems, discretization and recurrent scans."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._validation import as_matrix, as_vector
from .exceptions import (
    InvalidShapeError,
    InvalidStepError,
    NotDiagonalizableError,
    NumericFailureError,
    SingularMatrixError,
)

SMALL_LAMBDA = 1e-12


@dataclass(frozen=True)
class ContinuousFull:
    """``x' = A x + B u``, ``y = C x + D u`` with dense real matrices."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        n = a.shape[0]
        if a.shape != (n, n):
            raise InvalidShapeError(f"a must be square, got {a.shape}")
        b = as_matrix(self.b, "b", shape=(n, None))
        c = as_matrix(self.c, "c", shape=(None, n))
        d = as_matrix(self.d, "d", shape=(c.shape[0], b.shape[1]))
        for name, val in zip("abcd", (a, b, c, d)):
            object.__setattr__(self, name, val)

    @property
    def sizes(self):
        """``(N, H, M)``."""
        return self.a.shape[0], self.b.shape[1], self.c.shape[0]


@dataclass(frozen=True)
class DiscreteFull:
    a_bar: np.ndarray
    b_bar: np.ndarray
    c: np.ndarray
    d: np.ndarray


@dataclass(frozen=True)
class DiagonalSystem:
    """One diagonal head: eigenvalues ``lam``, real ``b``/``c``, feedthrough ``d``, steps ``delta``.

    ``d`` is either a vector acting as a diagonal map on the leading
    ``min(M, H)`` channels or a dense ``M x H`` matrix.
    """

    lam: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        lam = as_vector(self.lam, "lam", dtype=complex)
        n = lam.shape[0]
        b = as_matrix(self.b, "b", shape=(n, None))
        c = as_matrix(self.c, "c", shape=(None, n))
        delta = np.broadcast_to(np.asarray(self.delta, dtype=float), (n,)).copy()
        if np.any(delta <= 0):
            raise InvalidStepError("delta must be strictly positive")
        m, h = c.shape[0], b.shape[1]
        d = np.asarray(self.d, dtype=float)
        if d.ndim == 1 and d.shape[0] != min(m, h):
            raise InvalidShapeError(f"diagonal d must have length {min(m, h)}, got {d.shape[0]}")
        if d.ndim == 2 and d.shape != (m, h):
            raise InvalidShapeError(f"dense d must have shape {(m, h)}, got {d.shape}")
        if d.ndim not in (1, 2):
            raise InvalidShapeError("d must be 1-D or 2-D")
        for name, val in (("lam", lam), ("b", b), ("c", c), ("d", d), ("delta", delta)):
            object.__setattr__(self, name, val)

    @property
    def sizes(self):
        return self.lam.shape[0], self.b.shape[1], self.c.shape[0]


@dataclass(frozen=True)
class DiscreteDiagonal:
    lambda_bar: np.ndarray
    b_bar: np.ndarray
    method: str = "zoh"


@dataclass(frozen=True)
class StateTrajectory:
    states: np.ndarray
    outputs: np.ndarray


@dataclass(frozen=True)
class DiagonalizationResult:
    lam: np.ndarray
    t: np.ndarray
    b_prime: np.ndarray
    c_prime: np.ndarray


def cexpm1(z):
    """``exp(z) - 1`` for complex ``z`` without cancellation near zero."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    em1 = np.expm1(x)
    re = em1 * np.cos(y) - 2.0 * np.sin(0.5 * y) ** 2
    im = np.exp(x) * np.sin(y)
    return re + 1j * im


def zoh_coefficients(lam, delta):
    """Per-mode ZOH input scale ``(exp(lam*delta) - 1) / lam``."""
    lam = np.asarray(lam, dtype=complex)
    delta = np.asarray(delta, dtype=float)
    small = np.abs(lam) < SMALL_LAMBDA
    safe = np.where(small, 1.0, lam)
    coef = cexpm1(lam * delta) / safe
    return np.where(small, delta + 0j, coef)


def discretize_zoh(lam, b, delta):
    """Zero-order-hold discretization of a diagonal system."""
    lam = as_vector(lam, "lam", dtype=complex)
    n = lam.shape[0]
    # b may be complex, e.g. the input map of a diagonalized dense system
    b = as_matrix(b, "b", dtype=complex, shape=(n, None))
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (n,))
    if np.any(~(delta > 0)):
        raise InvalidStepError("delta must be strictly positive")
    lambda_bar = np.exp(lam * delta)
    b_bar = zoh_coefficients(lam, delta)[:, None] * b
    return DiscreteDiagonal(lambda_bar=lambda_bar, b_bar=b_bar, method="zoh")


def discretize_gbt(a, b, delta, alpha):
    """Generalized bilinear transform: 0 forward Euler, 0.5 Tustin, 1 backward Euler."""
    a = as_matrix(a, "a")
    n = a.shape[0]
    b = as_matrix(b, "b", shape=(n, None))
    if not delta > 0:
        raise InvalidStepError("delta must be strictly positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    eye = np.eye(n)
    lhs = eye - alpha * delta * a
    if np.linalg.cond(lhs) > 1.0 / np.finfo(float).eps:
        raise SingularMatrixError("I - alpha*delta*A is singular")
    a_bar = np.linalg.solve(lhs, eye + (1.0 - alpha) * delta * a)
    b_bar = np.linalg.solve(lhs, delta * b)
    return a_bar, b_bar


def discretize_full(sys, delta, method="zoh", alpha=0.5):
    """Discretize a dense system.

    ZOH uses the block exponential ``expm([[A, B], [0, 0]] * delta)``, which
    also covers singular ``A``.
    """
    if not delta > 0:
        raise InvalidStepError("delta must be strictly positive")
    n, h, _ = sys.sizes
    if method == "zoh":
        block = np.zeros((n + h, n + h))
        block[:n, :n] = sys.a
        block[:n, n:] = sys.b
        e = linalg.expm(block * delta)
        a_bar, b_bar = e[:n, :n], e[:n, n:]
    elif method == "gbt":
        a_bar, b_bar = discretize_gbt(sys.a, sys.b, delta, alpha)
    else:
        raise ValueError(f"unknown method {method!r}")
    return DiscreteFull(a_bar=a_bar, b_bar=b_bar, c=sys.c, d=sys.d)


def apply_feedthrough(d, u, m, out=None):
    """``D u`` for a diagonal (leading channels) or dense feedthrough.

    With ``out`` the term is added in place and ``out`` is returned.
    """
    d = np.asarray(d)
    if out is None:
        out = np.zeros((u.shape[0], m))
    if d.ndim == 2:
        out += u @ d.T
        return out
    k = d.shape[0]
    out[:, :k] += u[:, :k] * d
    return out


def recurrent_scan_full(sys, u, x0=None):
    """Reference recurrence ``x_k = A x_{k-1} + B u_k``, ``y_k = C x_k + D u_k``."""
    a_bar, b_bar = np.asarray(sys.a_bar), np.asarray(sys.b_bar)
    n, h = b_bar.shape
    u = as_matrix(u, "u", shape=(None, h))
    x = np.zeros(n, dtype=a_bar.dtype) if x0 is None else np.array(x0, dtype=a_bar.dtype)
    if x.shape != (n,):
        raise InvalidShapeError(f"x0 must have shape ({n},)")
    c, d = np.asarray(sys.c), np.asarray(sys.d)
    length = u.shape[0]
    states = np.empty((length, n), dtype=np.result_type(x, b_bar))
    outputs = np.empty((length, c.shape[0]), dtype=np.result_type(c, states))
    for k in range(length):
        x = a_bar @ x + b_bar @ u[k]
        states[k] = x
        outputs[k] = c @ x + d @ u[k]
    return StateTrajectory(states=states, outputs=outputs)


def recurrent_scan_diagonal(disc, c, d, u, x0=None):
    """Elementwise recurrence of a discretized diagonal system; outputs are real."""
    lambda_bar = np.asarray(disc.lambda_bar, dtype=complex)
    n = lambda_bar.shape[0]
    b_bar = as_matrix(disc.b_bar, "b_bar", dtype=complex, shape=(n, None))
    c = as_matrix(c, "c", dtype=np.result_type(np.asarray(c), float), shape=(None, n))
    u = as_matrix(u, "u", shape=(None, b_bar.shape[1]))
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    if x.shape != (n,):
        raise InvalidShapeError(f"x0 must have shape ({n},)")
    bu = u @ b_bar.T
    states = np.empty((u.shape[0], n), dtype=complex)
    for k in range(u.shape[0]):
        x = lambda_bar * x + bu[k]
        states[k] = x
    outputs = apply_feedthrough(d, u, c.shape[0], out=np.real(states @ c.T))
    return StateTrajectory(states=states, outputs=outputs)


def diagonalize(sys):
    """Similarity transform to a diagonal system: ``A = T diag(lam) T^-1``."""
    a = sys.a
    lam, t = np.linalg.eig(a)
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    if lam.shape[0] > 1:
        gaps = np.abs(lam[:, None] - lam[None, :])
        gaps[np.diag_indices_from(gaps)] = np.inf
        if gaps.min() <= 1e-8 * scale:
            raise NotDiagonalizableError("A has repeated eigenvalues")
    lam = lam.astype(complex)
    t = t.astype(complex)
    if np.linalg.cond(t) > 1e12:
        raise NumericFailureError("eigenvector matrix is numerically singular")
    t_inv = np.linalg.inv(t)
    recon = t @ np.diag(lam) @ t_inv
    if np.linalg.norm(recon - a) > 1e-8 * scale:
        raise NumericFailureError("diagonalization does not reconstruct A")
    return DiagonalizationResult(lam=lam, t=t, b_prime=t_inv @ sys.b, c_prime=sys.c @ t)
