"""HiPPO-LegS normal-part initialization for diagonal state space heads."""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._validation import as_matrix, check_positive_int
from .exceptions import InvalidRangeError, InvalidShapeError, NumericFailureError

DELTA_RANGE = (0.001, 0.1)


@dataclass(frozen=True)
class InitBundle:
    lambda_init: np.ndarray
    eigvecs: np.ndarray
    b_init: np.ndarray
    c_init: np.ndarray
    d_init: np.ndarray
    delta_init: np.ndarray


def hippo_normal_matrix(n):
    """Normal part of the HiPPO-LegS matrix.

    Diagonal entries are -1/2; off-diagonal magnitudes are
    sqrt((i + 1/2)(j + 1/2)) with the lower triangle negative and the upper
    triangle positive, so the off-diagonal part is skew-symmetric.
    """
    n = check_positive_int(n, "n")
    p = np.sqrt(np.arange(n) + 0.5)
    mag = np.outer(p, p)
    a = np.triu(mag, 1) - np.tril(mag, -1)
    a[np.diag_indices(n)] = -0.5
    return a


def hippo_eigen_init(n):
    """Eigenvalues and unit eigenvectors of :func:`hippo_normal_matrix`.

    The skew part ``S`` is diagonalised through the Hermitian matrix ``-iS``,
    which yields an exactly unitary eigenbasis. Eigenpairs are ordered by
    ascending imaginary part, ties broken by real part.
    """
    a = hippo_normal_matrix(n)
    skew = a + 0.5 * np.eye(n)
    try:
        w, v = np.linalg.eigh(-1j * skew)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"eigensolver failed for n={n}") from exc
    lam = -0.5 + 1j * w
    order = np.lexsort((lam.real, lam.imag))
    return lam[order], v[:, order]


def init_delta(n, lo=DELTA_RANGE[0], hi=DELTA_RANGE[1], seed=0):
    """Uniform step sizes in ``[lo, hi]``."""
    n = check_positive_int(n, "n")
    if not (lo > 0 and lo <= hi):
        raise InvalidRangeError(f"need 0 < lo <= hi, got lo={lo}, hi={hi}")
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=n)


def init_projections(n, h, m, eigvecs, seed=0):
    """Random input/output projections.

    ``B`` is drawn in the original HiPPO coordinates, moved into the
    eigenbasis and truncated to its real part. ``C`` is truncated normal with
    std ``1/sqrt(n)`` cut at two standard deviations.
    """
    n = check_positive_int(n, "n")
    h = check_positive_int(h, "h")
    m = check_positive_int(m, "m")
    v = as_matrix(eigvecs, "eigvecs", dtype=complex, shape=(n, n))
    if not np.allclose(v.conj().T @ v, np.eye(n), atol=1e-8, rtol=0):
        raise InvalidShapeError("eigvecs must be unitary")
    rng = np.random.default_rng(seed)
    b_raw = rng.normal(0.0, 1.0 / np.sqrt(h), size=(n, h))
    b_init = np.real(v.conj().T @ b_raw)
    std = 1.0 / np.sqrt(n)
    c_init = stats.truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=(m, n), random_state=rng)
    return b_init, c_init


def init_bundle(n, h, m, seed=0, delta_range=DELTA_RANGE):
    """All initial parameters of one diagonal head."""
    lam, vecs = hippo_eigen_init(n)
    b_init, c_init = init_projections(n, h, m, vecs, seed=seed)
    delta = init_delta(n, *delta_range, seed=seed + 1)
    return InitBundle(
        lambda_init=lam,
        eigvecs=vecs,
        b_init=b_init,
        c_init=c_init,
        d_init=np.ones(min(m, h)),
        delta_init=delta,
    )
