"""Dense linear algebra kernel: SVD, subspace angles, distances.

All routines work on 64-bit float numpy arrays and are pure functions of
their inputs. The SVD is a self-contained one-sided Jacobi implementation,
accurate to ~1e-12 orthonormality at desk scale, so nothing here depends on
LAPACK behavior that could differ between builds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBasisError, InputDomainError, NumericalError

_JACOBI_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 100


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise InputDomainError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise InputDomainError(f"{name} must be non-empty")
    require_finite(a, name)
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Validate and return a finite 1-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise InputDomainError(f"{name} must be 1-D, got shape {a.shape}")
    require_finite(a, name)
    return a


def require_finite(a: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(a)):
        raise InputDomainError(f"{name} contains NaN or Inf entries")


@dataclass
class SvdResult:
    """Thin SVD: x = u @ diag(sigma) @ v.T with orthonormal u (m,r), v (n,r)."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def svd(x) -> SvdResult:
    """Thin SVD via one-sided Jacobi rotations.

    Sweeps over column pairs, rotating until every normalized off-diagonal
    inner product falls below 1e-12. Singular values are returned descending;
    each right-singular vector is signed so its largest-magnitude entry is
    positive, which makes outputs comparable across runs. With repeated
    singular values only the spanned subspaces are well defined.

    Raises:
        InputDomainError: Non-finite input.
        NumericalError: No convergence within the sweep cap.
    """
    a = as_matrix(x, "svd input")
    m, n = a.shape
    if m < n:
        res = _svd_tall(a.T)
        return _signed(SvdResult(u=res.v, sigma=res.sigma, v=res.u))
    return _signed(_svd_tall(a))


def _signed(res: SvdResult) -> SvdResult:
    """Flip column pairs so each right-singular vector's largest entry is > 0."""
    for j in range(res.v.shape[1]):
        k = int(np.argmax(np.abs(res.v[:, j])))
        if res.v[k, j] < 0.0:
            res.v[:, j] = -res.v[:, j]
            res.u[:, j] = -res.u[:, j]
    return res


def _svd_tall(a: np.ndarray) -> SvdResult:
    m, n = a.shape
    a = a.copy()
    v = np.eye(n)
    converged = False
    worst = 0.0
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        worst = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(a[:, p] @ a[:, p])
                beta = float(a[:, q] @ a[:, q])
                gamma = float(a[:, p] @ a[:, q])
                denom = np.sqrt(alpha * beta)
                if denom == 0.0:
                    continue
                worst = max(worst, abs(gamma) / denom)
                if abs(gamma) <= _JACOBI_TOL * denom:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                t = sign / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            converged = True
            break
    if not converged:
        raise NumericalError(
            f"jacobi SVD did not converge in {_JACOBI_MAX_SWEEPS} sweeps; "
            f"max normalized off-diagonal residual {worst:.3e}"
        )

    sigma = np.sqrt(np.sum(a * a, axis=0))
    u = np.zeros((m, n))
    # Columns with negligible norm carry no direction; complete the basis below.
    tiny = max(m, n) * np.finfo(np.float64).eps * (sigma.max() if sigma.size else 0.0)
    nonzero = sigma > tiny
    u[:, nonzero] = a[:, nonzero] / sigma[nonzero]
    _complete_basis(u, np.flatnonzero(~nonzero))

    order = np.argsort(-sigma, kind="stable")
    return SvdResult(u=u[:, order], sigma=sigma[order], v=v[:, order])


def _complete_basis(u: np.ndarray, empty_cols: np.ndarray) -> None:
    """Fill zero columns of u with unit vectors orthogonal to the rest."""
    m = u.shape[0]
    for j in empty_cols:
        for cand in range(m):
            r = np.zeros(m)
            r[cand] = 1.0
            for _ in range(2):  # re-orthogonalize for stability
                r -= u @ (u.T @ r)
            norm = np.linalg.norm(r)
            if norm > 0.5:
                u[:, j] = r / norm
                break
        else:
            raise NumericalError("could not complete orthonormal basis")


def orthonormal_columns(x, name: str = "matrix") -> np.ndarray:
    """Orthonormal basis with the same column span, via modified Gram-Schmidt.

    Raises:
        DegenerateBasisError: Columns are linearly dependent.
    """
    a = as_matrix(x, name)
    q = a.copy()
    scale = np.sqrt(np.sum(a * a, axis=0))
    for k in range(q.shape[1]):
        for _ in range(2):
            for i in range(k):
                q[:, k] -= (q[:, i] @ q[:, k]) * q[:, i]
        norm = np.linalg.norm(q[:, k])
        if norm <= 1e-10 * max(scale[k], 1.0):
            raise DegenerateBasisError(
                f"{name} column {k} is linearly dependent on earlier columns"
            )
        q[:, k] /= norm
    return q


def principal_angles(a, b) -> np.ndarray:
    """Principal angles (radians, ascending) between two column spans.

    Orthonormalizes each input, then takes arccos of the singular values of
    Qa.T @ Qb. Angles lie in [0, pi/2]; all zeros means identical subspaces.
    """
    qa = orthonormal_columns(a, "first subspace")
    qb = orthonormal_columns(b, "second subspace")
    if qa.shape[0] != qb.shape[0]:
        raise InputDomainError(
            f"subspaces live in different spaces: {qa.shape[0]} vs {qb.shape[0]} rows"
        )
    cross = svd(qa.T @ qb)
    cos = np.clip(cross.sigma, -1.0, 1.0)
    return np.arccos(cos)  # sigma descending -> angles ascending


def pairwise_min_distance(x, a) -> float:
    """Euclidean distance from vector a to the nearest row of x."""
    xm = as_matrix(x, "data matrix")
    av = as_vector(a, "query vector")
    if av.shape[0] != xm.shape[1]:
        raise InputDomainError(
            f"query has length {av.shape[0]}, rows have length {xm.shape[1]}"
        )
    diff = xm - av
    return float(np.sqrt(np.min(np.sum(diff * diff, axis=1))))


def nearest_row(x, a) -> tuple[int, float]:
    """Index of the closest row of x to a, with the distance."""
    xm = as_matrix(x, "data matrix")
    av = as_vector(a, "query vector")
    if av.shape[0] != xm.shape[1]:
        raise InputDomainError(
            f"query has length {av.shape[0]}, rows have length {xm.shape[1]}"
        )
    d2 = np.sum((xm - av) ** 2, axis=1)
    i = int(np.argmin(d2))
    return i, float(np.sqrt(d2[i]))
