"""Regressor configurations that produce in-sample weight matrices.

Every regressor here maps training covariates ``z`` (and, for forests, the
output embedding) to an n x n matrix ``W`` with
``F(z_i) = sum_j W[i, j] phi(x_j)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import krr, okforest
from .exceptions import ConfigError
from .kernels import KernelSpec, median_gaussian, rff_features


def _input_kernel(spec, z, median_squared=False) -> KernelSpec:
    if isinstance(spec, KernelSpec):
        return spec
    if spec in (None, "median_gaussian"):
        return median_gaussian(z, squared=median_squared)
    if spec == "median_gaussian_per_coordinate":
        return median_gaussian(z, per_coordinate=True, squared=median_squared)
    if isinstance(spec, dict):
        return KernelSpec.from_dict(spec)
    raise ConfigError(f"unknown input kernel {spec!r}")


def _kernel_field(value):
    return value.to_dict() if isinstance(value, KernelSpec) else value


@dataclass(frozen=True)
class KrrRegressor:
    """Kernel ridge regression; ``lam`` is a number, ``None`` (1e-3/n) or ``"loocv"``."""

    lam: Union[float, str, None] = None
    grid: Optional[tuple] = None
    input_kernel: Union[KernelSpec, str, None] = "median_gaussian"
    loocv_max_n: int = krr.LOO_MAX_N
    seed: Optional[int] = None

    method = "krr"

    def weights(self, z, out_rows, out_spec, out_gram, seed, median_squared=False):
        n = z.shape[0]
        kern = _input_kernel(self.input_kernel, z, median_squared)
        choice = self.input_kernel if isinstance(self.input_kernel, str) else "fixed"
        meta = {"method": "krr", "input_kernel": kern.to_dict(), "input_kernel_choice": choice}
        if self.lam == "loocv":
            lam, scores = krr.loocv_lambda(
                z, out_gram, kern, self.grid, max_n=self.loocv_max_n, seed=seed
            )
            meta["grid"] = list(self.grid) if self.grid is not None else krr.default_grid(n)
            meta["loo_scores"] = [None if np.isnan(s) else float(s) for s in scores]
        elif self.lam is None:
            lam = krr.default_lambda(n)
        else:
            lam = float(self.lam)
        meta["lambda"] = lam
        model = krr.krr_fit(z, kern, lam)
        return krr.krr_weight_matrix(model), meta

    def to_dict(self) -> dict:
        out = {"method": "krr", "lambda": self.lam, "input_kernel": _kernel_field(self.input_kernel)}
        if self.grid is not None:
            out["grid"] = list(self.grid)
        if self.lam == "loocv":
            out["loocv_max_n"] = self.loocv_max_n
        if self.seed is not None:
            out["seed"] = self.seed
        return out


@dataclass(frozen=True)
class ForestRegressor:
    spec: okforest.ForestSpec = field(default_factory=okforest.ForestSpec)
    seed: Optional[int] = None

    method = "forest"

    def weights(self, z, out_rows, out_spec, out_gram, seed, median_squared=False):
        spec = replace(self.spec, seed=int(seed)).resolve(z.shape[1])
        if spec.split_mode == "rff":
            if out_spec.family not in ("gaussian", "rff_gaussian"):
                raise ConfigError("rff split mode needs a Gaussian output kernel")
            rspec = KernelSpec("rff_gaussian", out_spec.lengthscales, spec.rff_features, int(seed))
            output = rff_features(rspec, out_rows)
        else:
            output = out_gram
        forest = okforest.fit_forest(z, output, spec)
        meta = {"method": "forest", **asdict(spec)}
        return okforest.forest_weight_matrix(forest), meta

    def to_dict(self) -> dict:
        out = {"method": "forest"}
        d = asdict(self.spec)
        d["rff_D"] = d.pop("rff_features")
        d.pop("seed")
        out.update(d)
        if self.seed is not None:
            out["seed"] = self.seed
        return out


@dataclass(frozen=True)
class FixedRegressor:
    """Degenerate regressors: ``identity`` (W = I, interpolation) or ``zero`` (W = 0)."""

    kind: str = "zero"
    seed: Optional[int] = None

    @property
    def method(self):
        return self.kind

    def weights(self, z, out_rows, out_spec, out_gram, seed, median_squared=False):
        n = z.shape[0]
        W = np.eye(n) if self.kind == "identity" else np.zeros((n, n))
        return W, {"method": self.kind}

    def to_dict(self) -> dict:
        return {"method": self.kind}


_FOREST_KEYS = {
    "num_trees", "mtry", "min_node_size", "subsample_fraction", "with_replacement",
    "split_mode", "rff_D", "route_all_points",
}


def regressor_from_dict(d) -> object:
    """Build a regressor from its JSON fragment."""
    if isinstance(d, (KrrRegressor, ForestRegressor, FixedRegressor)):
        return d
    if not isinstance(d, dict) or "method" not in d:
        raise ConfigError(f"regressor config must be an object with a 'method' key, got {d!r}")
    method = d["method"]
    seed = d.get("seed")
    if method == "krr":
        unknown = set(d) - {"method", "lambda", "grid", "input_kernel", "loocv_max_n", "seed"}
        if unknown:
            raise ConfigError(f"unknown krr options {sorted(unknown)}")
        lam = d.get("lambda")
        if isinstance(lam, str) and lam != "loocv":
            raise ConfigError(f"krr lambda must be a number, null or 'loocv', got {lam!r}")
        if isinstance(lam, (int, float)) and not lam > 0:
            raise ConfigError(f"krr lambda must be positive, got {lam}")
        grid = d.get("grid")
        kern = d.get("input_kernel", "median_gaussian")
        if isinstance(kern, dict):
            kern = KernelSpec.from_dict(kern)
        return KrrRegressor(
            lam=lam, grid=tuple(grid) if grid is not None else None, input_kernel=kern,
            loocv_max_n=int(d.get("loocv_max_n", krr.LOO_MAX_N)), seed=seed,
        )
    if method == "forest":
        unknown = set(d) - _FOREST_KEYS - {"method", "seed"}
        if unknown:
            raise ConfigError(f"unknown forest options {sorted(unknown)}")
        kw = {k: d[k] for k in _FOREST_KEYS if k in d and k != "rff_D"}
        if "rff_D" in d:
            kw["rff_features"] = int(d["rff_D"])
        # d-dependent bounds (mtry) are checked at fit time
        return ForestRegressor(spec=okforest.ForestSpec(**kw), seed=seed)
    if method in ("identity", "zero"):
        return FixedRegressor(kind=method, seed=seed)
    raise ConfigError(f"unknown regressor method {method!r}")
