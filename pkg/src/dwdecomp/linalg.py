"""SVD with a fixed sign convention and the constrained rank-1 fit.

The rank-1 fit solves

    min over unit u and free p of  || T - (Y u) p^T ||_F

which is what the compensated decomposition needs: the fitted response must be
a combination of the carrier's columns (so it can be produced by a depthwise
kernel ``W_i u``) while matching a different target ``T``. For fixed ``u`` the
optimal ``p`` is ``T^T Y u / ||Y u||^2`` and the residual drops by
``u^T Y^T T T^T Y u / u^T Y^T Y u``, so ``u`` is the leading eigenvector of the
symmetric-definite pencil ``(Y^T T T^T Y, Y^T Y + eps I)``.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateInputError, NumericError


@dataclass(frozen=True, eq=False)
class SvdResult:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


@dataclass(frozen=True, eq=False)
class Rank1Fit:
    u: np.ndarray
    p: np.ndarray
    objective: float


def _check_finite(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise NumericError(f"expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix contains non-finite entries")
    return M


def sign_flips(V):
    """+1/-1 per column so that each column's largest-magnitude entry is positive.

    ``argmax`` returns the first maximum, which breaks ties by lowest index.
    """
    if V.shape[0] == 0:
        return np.ones(V.shape[1])
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def svd(M) -> SvdResult:
    """Thin SVD, ``r = min(N, n)``, deterministic for a given input."""
    M = _check_finite(M)
    try:
        U, S, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    V = Vt.T
    signs = sign_flips(V)
    return SvdResult(U=U * signs, S=S, V=V * signs)


def leading_right_singular_vector(Y):
    """Return ``(v0, sigma1)``; raises DegenerateInputError for an all-zero ``Y``."""
    Y = _check_finite(Y)
    if not np.any(Y):
        raise DegenerateInputError("leading singular vector of an all-zero matrix")
    res = svd(Y)
    return res.V[:, 0], float(res.S[0])


def default_eps_reg(gram):
    n = gram.shape[0]
    return 1e-8 * float(np.trace(gram)) / n


def leading_pencil_vector(cross, gram, eps_reg=None):
    """Leading eigenvector of ``(cross cross^T, gram + eps I)``, unit norm, sign-normalized.

    ``cross`` is ``Y^T T`` and ``gram`` is ``Y^T Y``; callers that can form
    these cheaply use this directly instead of :func:`rank1_constrained_fit`.
    """
    n = gram.shape[0]
    if eps_reg is None:
        eps_reg = default_eps_reg(gram)
    if eps_reg < 0:
        raise ValueError("eps_reg must be non-negative")
    A = cross @ cross.T
    A = 0.5 * (A + A.T)
    B = 0.5 * (gram + gram.T) + eps_reg * np.eye(n)
    try:
        _, vecs = scipy.linalg.eigh(A, B, subset_by_index=[n - 1, n - 1])
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericError(f"generalized eigensolver failed: {exc}") from exc
    u = vecs[:, 0]
    u = u / np.linalg.norm(u)
    return u * sign_flips(u[:, None])[0]


def rank1_constrained_fit(T, Y, eps_reg=None) -> Rank1Fit:
    T = _check_finite(T)
    Y = _check_finite(Y)
    if T.shape != Y.shape:
        raise NumericError(f"target {T.shape} and carrier {Y.shape} differ in shape")
    if not np.any(Y):
        raise DegenerateInputError("rank-1 fit with an all-zero carrier")
    u = leading_pencil_vector(Y.T @ T, Y.T @ Y, eps_reg)
    z = Y @ u
    zz = float(z @ z)
    if zz == 0.0:
        raise DegenerateInputError("fitted direction lies in the carrier's null space")
    p = T.T @ z / zz
    objective = float(np.linalg.norm(T - np.outer(z, p)))
    return Rank1Fit(u=u, p=p, objective=objective)
