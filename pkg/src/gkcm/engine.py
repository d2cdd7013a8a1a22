"""The GKCM test: residual Grams, the statistic, its null eigenvalues and p-values.

With in-sample weight matrices ``W`` (for X on Z) and ``V`` (for Y on Z),
the centred residuals live in the RKHS and are handled through Grams only:

    Rx = H (I - W) K (I - W)^T H,    Ry = H (I - V) L (I - V)^T H,
    T_n = n^-1 sum_ij Rx_ij Ry_ij,

and the null law of ``T_n`` is approximated by ``sum_i lam_i V_i^2`` with
``lam`` the eigenvalues of ``H (Rx * Ry) H / (n - 1)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import stats

from . import nulldist
from .data import Dataset
from .exceptions import ConfigError, DegenerateDataError, DimensionError, NumericalError, TooFewSamplesError
from .kernels import KernelSpec, gram, median_gaussian
from .regressors import ForestRegressor, KrrRegressor, regressor_from_dict

MIN_SAMPLES = 10
EIG_TOLERANCE = 1e-12


def center(A: np.ndarray) -> np.ndarray:
    """``H A H`` with ``H = I - J/n``, without forming ``H``."""
    A = np.asarray(A, dtype=np.float64)
    out = A - A.mean(axis=0, keepdims=True) - A.mean(axis=1, keepdims=True) + A.mean()
    return 0.5 * (out + out.T)


def raw_residual_gram(output_gram, weights) -> np.ndarray:
    """Uncentred residual Gram ``(I - W) K (I - W)^T``."""
    K = np.asarray(output_gram, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    n = K.shape[0]
    if K.shape != (n, n) or W.shape != (n, n):
        raise DimensionError(f"output Gram {K.shape} and weights {W.shape} must both be n x n")
    A = np.eye(n) - W
    G = A @ K @ A.T
    return 0.5 * (G + G.T)


def residual_gram(output_gram, weights) -> np.ndarray:
    """Gram of the centred RKHS residuals, ``H (I - W) K (I - W)^T H``."""
    return center(raw_residual_gram(output_gram, weights))


def joint_embedding_adjust(raw_residual_gram_x, z_gram) -> np.ndarray:
    """Residual Gram of the residuals tensored with a Z-embedding.

    ``<r_i (x) psi(z_i), r_j (x) psi(z_j)> = m'(z_i, z_j) <r_i, r_j>``, so the
    uncentred residual Gram is multiplied entrywise by the Z-Gram and then
    centred.
    """
    G = np.asarray(raw_residual_gram_x, dtype=np.float64)
    M = np.asarray(z_gram, dtype=np.float64)
    if G.shape != M.shape or G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise DimensionError(f"residual Gram {G.shape} and Z-Gram {M.shape} must be equal square shapes")
    return center(G * M)


def _check_pair(rg_x, rg_y):
    rg_x = np.asarray(rg_x, dtype=np.float64)
    rg_y = np.asarray(rg_y, dtype=np.float64)
    if rg_x.shape != rg_y.shape or rg_x.ndim != 2 or rg_x.shape[0] != rg_x.shape[1]:
        raise DimensionError(f"residual Grams have shapes {rg_x.shape} and {rg_y.shape}")
    return rg_x, rg_y


def statistic(rg_x, rg_y) -> float:
    """``T_n = n^-1 sum_ij Rx_ij Ry_ij``, clamped at 0."""
    rg_x, rg_y = _check_pair(rg_x, rg_y)
    t = float(np.sum(rg_x * rg_y)) / rg_x.shape[0]
    return max(t, 0.0)


def eigenvalues_T(rg_x, rg_y, tolerance: float = EIG_TOLERANCE) -> np.ndarray:
    """Nonzero eigenvalues of ``H (Rx * Ry) H / (n - 1)``, descending.

    Eigenvalues are clamped at 0 and those at or below ``tolerance`` times the
    largest are dropped.
    """
    rg_x, rg_y = _check_pair(rg_x, rg_y)
    n = rg_x.shape[0]
    T = center(rg_x * rg_y) / (n - 1)
    try:
        vals = np.linalg.eigvalsh(T)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    vals = np.clip(vals[::-1], 0.0, None)
    if vals.size == 0 or vals[0] <= 0:
        return np.empty(0)
    return vals[vals > tolerance * vals[0]]


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

KernelChoice = Union[KernelSpec, str]


def _kernel_choice(v) -> KernelChoice:
    if isinstance(v, KernelSpec) or v in ("median_gaussian", "median_gaussian_per_coordinate"):
        return v
    if isinstance(v, dict):
        return KernelSpec.from_dict(v)
    raise ConfigError(f"kernel must be a kernel spec object or 'median_gaussian', got {v!r}")


@dataclass(frozen=True)
class TestConfig:
    """Everything that determines a test run besides the data."""

    __test__ = False  # not a pytest class

    x_kernel: KernelChoice = "median_gaussian"
    y_kernel: KernelChoice = "median_gaussian"
    regressor_x: object = field(default_factory=ForestRegressor)
    regressor_y: object = field(default_factory=ForestRegressor)
    pvalue_method: str = "imhof"
    mc_samples: int = 100_000
    alpha: float = 0.05
    joint_embedding: Optional[dict] = None
    seed: int = 0
    eig_tolerance: float = EIG_TOLERANCE
    median_on_squared_distances: bool = False
    test: str = "gkcm"

    def __post_init__(self):
        if self.pvalue_method not in nulldist.METHODS:
            raise ConfigError(f"pvalue_method must be one of {nulldist.METHODS}, got {self.pvalue_method!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.test not in ("gkcm", "gcm"):
            raise ConfigError(f"test must be 'gkcm' or 'gcm', got {self.test!r}")
        if self.mc_samples < 1000:
            raise ConfigError("mc_samples must be at least 1000")
        if self.joint_embedding is not None:
            if not isinstance(self.joint_embedding, dict) or "z_kernel" not in self.joint_embedding:
                raise ConfigError("joint_embedding must be null or an object with a 'z_kernel' key")
        object.__setattr__(self, "x_kernel", _kernel_choice(self.x_kernel))
        object.__setattr__(self, "y_kernel", _kernel_choice(self.y_kernel))
        object.__setattr__(self, "regressor_x", regressor_from_dict(self.regressor_x))
        object.__setattr__(self, "regressor_y", regressor_from_dict(self.regressor_y))

    @classmethod
    def from_dict(cls, d: dict) -> "TestConfig":
        if not isinstance(d, dict):
            raise ConfigError("test config must be a JSON object")
        known = {
            "x_kernel", "y_kernel", "regressor_x", "regressor_y", "pvalue_method", "mc_samples",
            "alpha", "joint_embedding", "seed", "eig_tolerance", "median_on_squared_distances", "test",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown test config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        k = lambda v: v.to_dict() if isinstance(v, KernelSpec) else v
        je = None
        if self.joint_embedding is not None:
            je = {"z_kernel": k(_kernel_choice(self.joint_embedding["z_kernel"]))}
        return {
            "test": self.test,
            "x_kernel": k(self.x_kernel),
            "y_kernel": k(self.y_kernel),
            "regressor_x": self.regressor_x.to_dict(),
            "regressor_y": self.regressor_y.to_dict(),
            "pvalue_method": self.pvalue_method,
            "mc_samples": self.mc_samples,
            "alpha": self.alpha,
            "joint_embedding": je,
            "seed": self.seed,
            "eig_tolerance": self.eig_tolerance,
            "median_on_squared_distances": self.median_on_squared_distances,
        }

    def with_(self, **kw) -> "TestConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return TestConfig(**d)


PRESETS = ("gkcm-rf", "gkcm-krr", "gkcm-krr-tuned", "gkcm-joint", "gcm")


def preset(name: str, **overrides) -> TestConfig:
    """Named configurations of the simulation study."""
    if name == "gkcm-rf":
        cfg = TestConfig()
    elif name == "gkcm-krr":
        cfg = TestConfig(regressor_x=KrrRegressor(), regressor_y=KrrRegressor())
    elif name == "gkcm-krr-tuned":
        cfg = TestConfig(regressor_x=KrrRegressor(lam="loocv"), regressor_y=KrrRegressor(lam="loocv"))
    elif name == "gkcm-joint":
        cfg = TestConfig(
            regressor_x=KrrRegressor(), regressor_y=KrrRegressor(),
            joint_embedding={"z_kernel": "median_gaussian"},
        )
    elif name == "gcm":
        cfg = TestConfig(test="gcm")
    else:
        raise ConfigError(f"unknown method preset {name!r}; expected one of {PRESETS}")
    return cfg.with_(**overrides) if overrides else cfg


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TestResult:
    __test__ = False

    statistic: float
    eigenvalues: np.ndarray
    p_value: float
    alpha: float
    metadata: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def reject(self) -> bool:
        return self.p_value < self.alpha

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "reject": self.reject,
            "num_eigenvalues": int(len(self.eigenvalues)),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "metadata": self.metadata,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


# --------------------------------------------------------------------------
# tests
# --------------------------------------------------------------------------

def _resolve_kernel(choice: KernelChoice, rows, squared: bool) -> KernelSpec:
    if isinstance(choice, KernelSpec):
        return choice
    return median_gaussian(rows, per_coordinate=choice == "median_gaussian_per_coordinate", squared=squared)


def _seeds(config: TestConfig):
    ss = np.random.SeedSequence(config.seed)
    derived = [int(c.generate_state(1)[0]) for c in ss.spawn(3)]
    sx = config.regressor_x.seed if getattr(config.regressor_x, "seed", None) is not None else derived[0]
    sy = config.regressor_y.seed if getattr(config.regressor_y, "seed", None) is not None else derived[1]
    return sx, sy, derived[2]


def _pvalue(lams: np.ndarray, t: float, config: TestConfig, seed: int, diag: dict) -> float:
    if lams.size == 0:
        return 1.0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", nulldist.ImhofFallbackWarning)
        p = nulldist.pvalue(lams, t, config.pvalue_method, mc_samples=config.mc_samples, seed=seed)
    if any(issubclass(w.category, nulldist.ImhofFallbackWarning) for w in caught):
        diag["imhof_fallback_to_mc"] = True
    return float(p)


def gkcm_test(data: Dataset, config: Optional[TestConfig] = None) -> TestResult:
    """Run the GKCM test of X independent of Y given Z."""
    config = config or TestConfig()
    if config.test != "gkcm":
        raise ConfigError("config.test is 'gcm'; use gcm_test or run_test")
    n = data.n
    if n < MIN_SAMPLES:
        raise TooFewSamplesError(f"GKCM needs at least {MIN_SAMPLES} samples, got {n}")
    sx, sy, sp = _seeds(config)
    sq = config.median_on_squared_distances

    kx = _resolve_kernel(config.x_kernel, data.x, sq)
    ky = _resolve_kernel(config.y_kernel, data.y, sq)
    K, L = gram(kx, data.x), gram(ky, data.y)
    z = np.ascontiguousarray(data.z)
    Wx, meta_x = config.regressor_x.weights(z, data.x, kx, K, sx, sq)
    Wy, meta_y = config.regressor_y.weights(z, data.y, ky, L, sy, sq)

    raw_x = raw_residual_gram(K, Wx)
    meta_joint = None
    if config.joint_embedding is not None:
        kz = _resolve_kernel(_kernel_choice(config.joint_embedding["z_kernel"]), z, sq)
        Mz = gram(kz, z)
        rg_x = joint_embedding_adjust(raw_x, Mz)
        meta_joint = {"z_kernel": kz.to_dict()}
    else:
        rg_x = center(raw_x)
    rg_y = residual_gram(L, Wy)

    t = statistic(rg_x, rg_y)
    lams = eigenvalues_T(rg_x, rg_y, config.eig_tolerance)
    diag = {
        "kappa_x": kx.kappa,
        "kappa_y": ky.kappa,
        "mean_sq_residual_x": float(np.trace(rg_x)) / n,
        "mean_sq_residual_y": float(np.trace(rg_y)) / n,
        "imhof_fallback_to_mc": False,
    }
    p = 1.0 if t == 0.0 else _pvalue(lams, t, config, sp, diag)
    meta = {
        "test": "gkcm",
        "n": n,
        "x_kernel": kx.to_dict(),
        "y_kernel": ky.to_dict(),
        "median_mode": _median_mode(config),
        "regressor_x": _jsonable({**meta_x, "seed": sx}),
        "regressor_y": _jsonable({**meta_y, "seed": sy}),
        "joint_embedding": meta_joint,
        "pvalue_method": config.pvalue_method,
        "pvalue_seed": sp,
        "eig_tolerance": config.eig_tolerance,
        "truncation_count": int(lams.size),
        "seed": config.seed,
    }
    return TestResult(statistic=t, eigenvalues=lams, p_value=p, alpha=config.alpha, metadata=meta, diagnostics=diag)


def _median_mode(config: TestConfig) -> dict:
    label = lambda c: c if isinstance(c, str) else "fixed"
    return {
        "statistic": "median_squared_distance" if config.median_on_squared_distances else "median_distance",
        "x_kernel": label(config.x_kernel),
        "y_kernel": label(config.y_kernel),
    }


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, np.generic):
            v = v.item()
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def gcm_scores(r, s):
    """Normalised covariance statistic and two-sided normal p-value for scalar residuals."""
    r = np.asarray(r, dtype=np.float64).ravel()
    s = np.asarray(s, dtype=np.float64).ravel()
    if r.shape != s.shape:
        raise DimensionError("residual vectors differ in length")
    prod = r * s
    sd = prod.std()
    if not sd > 0 or not np.isfinite(sd):
        raise DegenerateDataError("products of residuals have zero spread; GCM statistic undefined")
    t = np.sqrt(prod.size) * prod.mean() / sd
    return float(t), float(min(1.0, 2.0 * stats.norm.sf(abs(t))))


def gcm_test(data: Dataset, config: Optional[TestConfig] = None) -> TestResult:
    """Scalar generalised covariance measure with weight-matrix regressors.

    Forests split on the linear output kernel, so they regress the raw
    values; kernel ridge weights do not depend on the output kernel.
    """
    config = config or preset("gcm")
    if data.p != 1 or data.q != 1:
        raise DimensionError(f"GCM needs scalar X and Y, got p={data.p}, q={data.q}")
    n = data.n
    if n < MIN_SAMPLES:
        raise TooFewSamplesError(f"GCM needs at least {MIN_SAMPLES} samples, got {n}")
    sx, sy, _ = _seeds(config)
    lin = KernelSpec("linear")
    z = np.ascontiguousarray(data.z)
    x, y = data.x[:, 0], data.y[:, 0]
    Wx, meta_x = config.regressor_x.weights(z, data.x, lin, np.outer(x, x), sx)
    Wy, meta_y = config.regressor_y.weights(z, data.y, lin, np.outer(y, y), sy)
    r = x - Wx @ x
    s = y - Wy @ y
    t, p = gcm_scores(r, s)
    meta = {
        "test": "gcm",
        "n": n,
        "regressor_x": _jsonable({**meta_x, "seed": sx}),
        "regressor_y": _jsonable({**meta_y, "seed": sy}),
        "pvalue_method": "normal",
        "seed": config.seed,
    }
    return TestResult(statistic=t, eigenvalues=np.empty(0), p_value=p, alpha=config.alpha, metadata=meta)


def run_test(data: Dataset, config: TestConfig) -> TestResult:
    return gcm_test(data, config) if config.test == "gcm" else gkcm_test(data, config)
