"""Kernel families, Gram matrices, median-heuristic bandwidths and random Fourier features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .exceptions import ConfigError, DegenerateDataError, DimensionError

FAMILIES = ("gaussian", "gaussian_tensor", "linear", "dirac", "rff_gaussian", "constant")
BOUNDED = ("gaussian", "gaussian_tensor", "dirac", "rff_gaussian", "constant")

MEDIAN_MAX_ROWS = 2000
MEDIAN_SUBSAMPLE_SEED = 20240601


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus its parameters.

    ``lengthscales`` has length 1 for ``gaussian`` and ``rff_gaussian`` and
    one entry per input dimension for ``gaussian_tensor``. ``linear``,
    ``dirac`` and ``constant`` take no lengthscale.
    """

    family: str
    lengthscales: tuple = ()
    rff_features: Optional[int] = None
    rff_seed: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales)) if self.lengthscales is not None else ()
        object.__setattr__(self, "lengthscales", ls)
        if self.family in ("gaussian", "rff_gaussian") and len(ls) != 1:
            raise ConfigError(f"{self.family} kernel needs exactly one lengthscale, got {len(ls)}")
        if self.family == "gaussian_tensor" and len(ls) < 1:
            raise ConfigError("gaussian_tensor kernel needs one lengthscale per dimension")
        if not all(np.isfinite(v) and v > 0 for v in ls):
            raise ConfigError(f"lengthscales must be positive and finite, got {ls}")
        if self.family == "rff_gaussian":
            if self.rff_features is None or int(self.rff_features) < 1:
                raise ConfigError("rff_gaussian kernel needs rff_features >= 1")
            object.__setattr__(self, "rff_features", int(self.rff_features))
            object.__setattr__(self, "rff_seed", int(self.rff_seed or 0))

    @property
    def kappa(self) -> float:
        """sup_x k(x, x); infinite for the linear kernel."""
        if self.family == "linear":
            return float("inf")
        if self.family == "rff_gaussian":
            return 2.0
        return 1.0

    def to_dict(self) -> dict:
        out = {"family": self.family, "lengthscales": list(self.lengthscales)}
        if self.family == "rff_gaussian":
            out["rff"] = {"D": self.rff_features, "seed": self.rff_seed}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        if not isinstance(d, dict) or "family" not in d:
            raise ConfigError(f"kernel spec must be an object with a 'family' key, got {d!r}")
        rff = d.get("rff") or {}
        return cls(
            family=d["family"],
            lengthscales=tuple(d.get("lengthscales", ())),
            rff_features=rff.get("D"),
            rff_seed=rff.get("seed"),
        )


def gaussian(sigma: float) -> KernelSpec:
    return KernelSpec("gaussian", (sigma,))


def _as_rows(rows) -> np.ndarray:
    a = np.asarray(rows, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


def _check_dim(spec: KernelSpec, dim: int) -> None:
    if spec.family == "gaussian_tensor" and len(spec.lengthscales) != dim:
        raise DimensionError(
            f"gaussian_tensor kernel has {len(spec.lengthscales)} lengthscales for {dim}-dimensional input"
        )


def kernel_eval(spec: KernelSpec, a, b) -> float:
    """Evaluate k(a, b) for two single points."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"points have shapes {a.shape} and {b.shape}")
    return float(cross_gram(spec, a[None, :], b[None, :])[0, 0])


def cross_gram(spec: KernelSpec, a, b) -> np.ndarray:
    """Matrix of k(a_i, b_j) for row sets ``a`` (n x dim) and ``b`` (m x dim)."""
    a, b = _as_rows(a), _as_rows(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"row dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    _check_dim(spec, a.shape[1])
    fam = spec.family
    if fam == "gaussian":
        s = spec.lengthscales[0]
        return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * s * s))
    if fam == "gaussian_tensor":
        ls = np.asarray(spec.lengthscales)
        return np.exp(-0.5 * cdist(a / ls, b / ls, "sqeuclidean"))
    if fam == "linear":
        return a @ b.T
    if fam == "constant":
        return np.ones((a.shape[0], b.shape[0]))
    if fam == "dirac":
        av = np.ascontiguousarray(a).view(np.dtype((np.void, a.dtype.itemsize * a.shape[1]))).ravel()
        bv = np.ascontiguousarray(b).view(np.dtype((np.void, b.dtype.itemsize * b.shape[1]))).ravel()
        return (av[:, None] == bv[None, :]).astype(np.float64)
    if fam == "rff_gaussian":
        return rff_features(spec, a) @ rff_features(spec, b).T
    raise ConfigError(f"unhandled kernel family {fam!r}")


def gram(spec: KernelSpec, rows) -> np.ndarray:
    """Symmetric Gram matrix ``K[i, j] = k(row_i, row_j)``."""
    rows = _as_rows(rows)
    _check_dim(spec, rows.shape[1])
    fam = spec.family
    if fam == "gaussian":
        s = spec.lengthscales[0]
        K = np.exp(-squareform(pdist(rows, "sqeuclidean")) / (2.0 * s * s))
    elif fam == "gaussian_tensor":
        K = np.exp(-0.5 * squareform(pdist(rows / np.asarray(spec.lengthscales), "sqeuclidean")))
    elif fam == "rff_gaussian":
        F = rff_features(spec, rows)
        K = F @ F.T
    else:
        K = cross_gram(spec, rows, rows)
    if fam in ("gaussian", "gaussian_tensor"):
        np.fill_diagonal(K, 1.0)
    return 0.5 * (K + K.T)


def median_heuristic(rows, *, squared: bool = False, max_rows: int = MEDIAN_MAX_ROWS) -> float:
    """Median pairwise Euclidean distance over distinct index pairs.

    With ``squared=True`` the median of squared distances is taken and its
    square root returned, so the result is always on the lengthscale scale.
    More than ``max_rows`` rows are subsampled with a fixed seed.
    """
    rows = _as_rows(rows)
    n = rows.shape[0]
    if n < 2:
        raise DegenerateDataError("median heuristic needs at least two rows")
    if n > max_rows:
        idx = np.random.default_rng(MEDIAN_SUBSAMPLE_SEED).choice(n, size=max_rows, replace=False)
        rows = rows[np.sort(idx)]
    if squared:
        sigma = float(np.sqrt(np.median(pdist(rows, "sqeuclidean"))))
    else:
        sigma = float(np.median(pdist(rows, "euclidean")))
    if not sigma > 0:
        if np.all(rows == rows[0]):
            raise DegenerateDataError("all rows are identical; median heuristic is undefined")
        raise DegenerateDataError("median pairwise distance is zero (more than half the pairs coincide)")
    return sigma


def median_gaussian(rows, *, per_coordinate: bool = False, squared: bool = False) -> KernelSpec:
    """Gaussian kernel whose lengthscale(s) come from the median heuristic.

    ``per_coordinate`` yields a ``gaussian_tensor`` kernel with one median per
    column; otherwise one joint lengthscale is used.
    """
    rows = _as_rows(rows)
    if per_coordinate:
        ls = tuple(median_heuristic(rows[:, [j]], squared=squared) for j in range(rows.shape[1]))
        return KernelSpec("gaussian_tensor", ls)
    return KernelSpec("gaussian", (median_heuristic(rows, squared=squared),))


def rff_frequencies(spec: KernelSpec, dim: int):
    """Frequencies (dim x D) and phases (D,) drawn from the kernel's RFF seed."""
    if spec.family != "rff_gaussian":
        raise ConfigError(f"rff features need an rff_gaussian spec, got {spec.family!r}")
    rng = np.random.default_rng(spec.rff_seed)
    D = spec.rff_features
    omega = rng.standard_normal((dim, D)) / spec.lengthscales[0]
    phase = rng.uniform(0.0, 2.0 * np.pi, size=D)
    return omega, phase


def rff_features(spec: KernelSpec, rows) -> np.ndarray:
    """Random Fourier features; ``F @ F.T`` approximates the Gaussian Gram."""
    rows = _as_rows(rows)
    omega, phase = rff_frequencies(spec, rows.shape[1])
    return np.sqrt(2.0 / spec.rff_features) * np.cos(rows @ omega + phase)
