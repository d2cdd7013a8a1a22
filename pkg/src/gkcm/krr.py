"""RKHS-valued kernel ridge regression expressed through prediction weights.

The fitted map is ``F(z) = sum_i w_i(z) phi(x_i)`` with
``w(z) = (M + n lam I)^{-1} m(z)``, where ``M`` is the input Gram on the
training covariates and ``m(z)`` the vector of kernel evaluations at ``z``.
Because the weights do not depend on the outputs, a single fit serves any
output kernel.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import ConfigError, DegenerateDataError, DimensionError, NumericalError
from .kernels import KernelSpec, cross_gram, gram

logger = logging.getLogger(__name__)

EIG_FLOOR = 1e-12
LOO_MAX_N = 1000


def default_lambda(n: int) -> float:
    return 1e-3 / n


def default_grid(n: int) -> list[float]:
    """{10^g / n : g = -5, ..., 3}."""
    return [10.0 ** g / n for g in range(-5, 4)]


@dataclass(frozen=True)
class KrrModel:
    z_train: np.ndarray
    input_spec: KernelSpec
    lam: float
    gram: np.ndarray = field(repr=False)
    _factor: tuple = field(repr=False)

    @property
    def n(self) -> int:
        return self.z_train.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply ``(M + n lam I)^{-1}`` to ``rhs`` (vector or matrix)."""
        kind, payload = self._factor
        if kind == "cholesky":
            return linalg.cho_solve(payload, rhs, check_finite=False)
        vals, vecs = payload
        return vecs @ ((vecs.T @ rhs).T / vals).T


def _factorize(A: np.ndarray):
    try:
        return ("cholesky", linalg.cho_factor(A, lower=True, check_finite=False))
    except linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(A)
        if not np.all(np.isfinite(vals)):
            raise NumericalError("eigendecomposition of the regularised Gram failed")
        logger.warning("Cholesky failed; using eigendecomposition with floor %g", EIG_FLOOR)
        return ("eigh", (np.maximum(vals, EIG_FLOOR), vecs))


def krr_fit(z, input_spec: KernelSpec, lam: float) -> KrrModel:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if not lam > 0:
        raise ConfigError(f"ridge parameter must be positive, got {lam}")
    n = z.shape[0]
    M = gram(input_spec, z)
    A = M + n * lam * np.eye(n)
    return KrrModel(z_train=z, input_spec=input_spec, lam=float(lam), gram=M, _factor=_factorize(A))


def krr_weights(model: KrrModel, z_query) -> np.ndarray:
    """Weight vector ``w(z)`` over the training points for one query point."""
    zq = np.atleast_1d(np.asarray(z_query, dtype=np.float64))
    if zq.shape != (model.z_train.shape[1],):
        raise DimensionError(f"query has shape {zq.shape}, expected ({model.z_train.shape[1]},)")
    m = cross_gram(model.input_spec, model.z_train, zq[None, :])[:, 0]
    return model.solve(m)


def krr_weight_matrix(model: KrrModel) -> np.ndarray:
    """In-sample weights; row i is ``w(z_i)``, i.e. ``W = M (M + n lam I)^{-1}``."""
    W = model.solve(model.gram).T
    return 0.5 * (W + W.T)


def loo_scores(M: np.ndarray, K: np.ndarray, lambdas, n_ridge: int | None = None):
    """Leave-one-out squared RKHS residual norms for each ridge value.

    Uses the hat-matrix identity: with ``H = M (M + c I)^{-1}``, ``c = n lam``
    and ``A = I - H``, the leave-one-out residual Gram is ``D^-1 A K A^T D^-1``
    with ``D = diag(1 - H_ii)``; the score is its trace. The refit implied by
    the identity keeps the absolute ridge ``c`` fixed.

    Returns an array of scores with ``nan`` where ``1 - H_ii`` is numerically
    zero for some i.
    """
    n = M.shape[0]
    n_ridge = n if n_ridge is None else n_ridge
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    vals = np.maximum(vals, 0.0)
    Kt = vecs.T @ K @ vecs
    out = np.empty(len(lambdas))
    for g, lam in enumerate(lambdas):
        c = n_ridge * lam
        shrink = c / (vals + c)  # eigenvalues of I - H
        A = (vecs * shrink) @ vecs.T
        dvec = np.diag(A).copy()
        if np.any(dvec <= 1e-12):
            out[g] = np.nan
            continue
        AKA = (vecs * shrink) @ Kt @ (vecs * shrink).T
        out[g] = float(np.sum(np.diag(AKA) / dvec ** 2))
    return out


def loocv_lambda(z, output_gram, input_spec: KernelSpec, grid=None, *, max_n: int = LOO_MAX_N, seed=0):
    """Pick the ridge parameter minimising the leave-one-out score.

    ``output_gram`` is the Gram of the regression targets (the output
    embedding). For ``n > max_n`` the score is computed on a seeded random
    subsample of ``max_n`` rows, with the grid values unchanged.

    Returns ``(lambda_star, scores)``; ties go to the smallest lambda and grid
    points with a numerically singular LOO are skipped with a warning.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    K = np.asarray(output_gram, dtype=np.float64)
    n = z.shape[0]
    if K.shape != (n, n):
        raise DimensionError(f"output Gram has shape {K.shape}, expected ({n}, {n})")
    grid = default_grid(n) if grid is None else [float(g) for g in grid]
    if not grid:
        raise ConfigError("lambda grid is empty")
    if any(not g > 0 for g in grid):
        raise ConfigError("lambda grid values must be positive")
    if n > max_n:
        idx = np.random.default_rng(seed).permutation(n)[:max_n]
        z, K = z[idx], K[np.ix_(idx, idx)]
    M = gram(input_spec, z)
    scores = loo_scores(M, K, grid)
    bad = np.isnan(scores)
    if bad.all():
        raise DegenerateDataError("leave-one-out is numerically singular for every grid value")
    for lam in np.asarray(grid)[bad]:
        warnings.warn(f"leave-one-out singular at lambda={lam:g}; skipped", RuntimeWarning, stacklevel=2)
    order = sorted(range(len(grid)), key=lambda i: (np.inf if bad[i] else scores[i], grid[i]))
    best = order[0]
    return grid[best], scores
