"""Data-generating scenarios and rejection-rate campaigns."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .data import Dataset, standardize
from .engine import TestConfig, preset, run_test
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

MAIN_SCENARIOS = ("null1", "null2", "null3", "null4", "alt1", "alt2", "alt3")
SCENARIO_IDS = MAIN_SCENARIOS + ("zhang",)
NULL_SCENARIOS = ("null1", "null2", "null3", "null4")


@dataclass(frozen=True)
class Scenario:
    id: str
    case: Optional[str] = None
    hypothesis: Optional[str] = None
    d: Optional[int] = None
    incremental: bool = True

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise ConfigError(f"unknown scenario {self.id!r}; expected one of {SCENARIO_IDS}")
        zhang_fields = (self.case, self.hypothesis, self.d)
        if self.id == "zhang":
            if any(v is None for v in zhang_fields):
                raise ConfigError("zhang scenario needs case, hypothesis and d")
            if self.case not in ("I", "II"):
                raise ConfigError(f"zhang case must be 'I' or 'II', got {self.case!r}")
            if self.hypothesis not in ("null", "alt"):
                raise ConfigError(f"zhang hypothesis must be 'null' or 'alt', got {self.hypothesis!r}")
            if int(self.d) < 1:
                raise ConfigError(f"zhang d must be >= 1, got {self.d}")
            object.__setattr__(self, "d", int(self.d))
        elif any(v is not None for v in zhang_fields):
            raise ConfigError(f"scenario {self.id!r} takes no case/hypothesis/d parameters")

    @property
    def label(self) -> str:
        if self.id == "zhang":
            return f"zhang-{self.case}-{self.hypothesis}-d{self.d}"
        return self.id

    @property
    def is_null(self) -> bool:
        if self.id == "zhang":
            return self.hypothesis == "null"
        return self.id in NULL_SCENARIOS

    @classmethod
    def parse(cls, value) -> "Scenario":
        """Accept a Scenario, a name such as ``"null1"`` / ``"zhang-I-alt-d3"``, or a dict."""
        if isinstance(value, Scenario):
            return value
        if isinstance(value, dict):
            return cls(**value)
        if isinstance(value, str) and value.startswith("zhang-"):
            parts = value.split("-")
            if len(parts) != 4 or not parts[3].startswith("d"):
                raise ConfigError(f"zhang scenario names look like 'zhang-I-null-d3', got {value!r}")
            return cls("zhang", case=parts[1], hypothesis=parts[2], d=int(parts[3][1:]))
        return cls(value)


def _stable_key(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------

def _main_scenario(sid: str, n: int, rng: np.random.Generator):
    Z = rng.standard_normal((n, 7))
    ex = rng.standard_normal(n)
    ey = rng.standard_normal(n)
    z1, z2, z3, z4, z5, z6, z7 = Z.T
    if sid == "null1":
        x = 0.4 * z1 + 0.5 * z2 + 0.6 * z3 - 0.7 * z4 + z7 + ex
        y = 0.6 * z1 - 0.2 * z2 + 0.3 * z4 + 0.9 * z5 - 0.5 * z6 + ey
    elif sid == "null2":
        x = 0.5 * z1 - 0.9 * z2 + 0.4 * z3 ** 2 + z4 * z5 * ex
        y = -0.8 * z4 + z5 ** 2 + np.exp(z6) + np.sin(2 * np.pi * z7) * ey
    elif sid == "null3":
        x = np.tanh(0.5 * z1 - 0.9 * z2 + z3 + ex)
        y = np.exp(-0.8 * z4 * z5 + 0.6 * z6 * z7 + ey)
    elif sid == "null4":
        x = np.sin(2 * np.pi * z1) + 0.1 * ex
        y = np.sin(2 * np.pi * z1) + ey
    elif sid == "alt1":
        x = 0.7 * z1 + z2 + ex
        y = 0.4 * z3 - 0.2 * z4 - 0.1 * x + ey
    elif sid == "alt2":
        x = np.sin(z1) + ex
        y = np.tanh(z2) + 0.4 * x ** 2 * z3 + ey
    elif sid == "alt3":
        x = 0.2 * z2 ** 3 + np.tanh(z4) + ex
        y = np.sin(np.pi * z1) - 0.4 * z2 ** 2 + np.cos(0.2 * np.pi * x) * ey
    else:  # pragma: no cover - guarded by Scenario
        raise ConfigError(sid)
    return x, y, Z


def _phi(u):
    return u + u ** 3 / 3 + 0.5 * np.tanh(u / 3)


def _psi(v):
    return v + np.tanh(v / 3)


def _h(u):
    return u / 2 + 0.7 * np.tanh(u)


def _zhang_ab(j: int):
    return (0.5, 1.0) if j == 2 else (2.0 / 3.0, 5.0 / 6.0)


def _zhang(sc: Scenario, n: int, seed_seq: np.random.SeedSequence):
    """Post-nonlinear scenarios, cases I and II, with an optional latent common cause.

    Noise and the latent cause come from child stream 0 and column ``Z_j``
    from child stream ``j``, so with a shared per-iteration seed the data for
    dimension d + 1 extend those for dimension d.
    """
    d = sc.d
    children = seed_seq.spawn(d + 1)
    base = np.random.default_rng(children[0])
    ex = base.standard_normal(n)
    ey = base.standard_normal(n)
    c = base.normal(0.0, 0.5, size=n)  # variance 0.25
    Z = np.column_stack([np.random.default_rng(children[j]).standard_normal(n) for j in range(1, d + 1)])

    z1 = Z[:, 0]
    f = 0.7 * (z1 ** 3 / 5 + z1 / 2)
    g = (z1 ** 3 / 4 + z1) / 3
    if sc.case == "II":
        for j in range(2, d + 1):
            a, b = _zhang_ab(j)
            f = _h(a * f + b * Z[:, j - 1])
            g = _h(a * g + b * Z[:, j - 1])

    x = _phi(f + np.tanh(ex))
    y = _psi(g + ey)
    if sc.hypothesis == "alt":
        x = standardize(x) + c
        y = standardize(y) + c
        Z = standardize(Z)
    return x, y, Z


def _scenario_seed(sc: Scenario, seed) -> np.random.SeedSequence:
    if sc.id == "zhang" and not sc.incremental:
        return np.random.SeedSequence([int(seed), _stable_key(sc.label)])
    return np.random.SeedSequence(int(seed))


def generate(scenario, n: int, seed=0) -> Dataset:
    """Draw a dataset of size ``n`` from ``scenario``; deterministic given ``seed``."""
    sc = Scenario.parse(scenario)
    n = int(n)
    if n < 2:
        raise ConfigError(f"n must be at least 2, got {n}")
    ss = _scenario_seed(sc, seed)
    if sc.id == "zhang":
        x, y, Z = _zhang(sc, n, ss)
    else:
        x, y, Z = _main_scenario(sc.id, n, np.random.default_rng(ss))
    return Dataset(x=x, y=y, z=Z)


# --------------------------------------------------------------------------
# campaigns
# --------------------------------------------------------------------------

def wilson_ci(k: int, N: int, confidence: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if N < 1 or not 0 <= k <= N:
        raise ConfigError(f"need 0 <= k <= N and N >= 1, got k={k}, N={N}")
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = k / N
    denom = 1 + z * z / N
    mid = (p + z * z / (2 * N)) / denom
    half = z * np.sqrt(p * (1 - p) / N + z * z / (4 * N * N)) / denom
    lo, hi = max(0.0, mid - half), min(1.0, mid + half)
    if k == 0:
        lo = 0.0
    if k == N:
        hi = 1.0
    return float(lo), float(hi)


STUBS = ("stub-one", "stub-zero", "stub-uniform")


@dataclass(frozen=True)
class Method:
    """A named entry of a campaign: a preset, a stub, or an explicit test config."""

    name: str
    config: Optional[TestConfig] = None
    stub: Optional[str] = None

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, Method):
            return value
        if isinstance(value, str):
            if value in STUBS:
                return cls(value, stub=value)
            return cls(value, config=preset(value))
        if isinstance(value, dict):
            name = value.get("name")
            if not name:
                raise ConfigError("method objects need a 'name'")
            if value.get("stub"):
                if value["stub"] not in STUBS:
                    raise ConfigError(f"unknown stub {value['stub']!r}")
                return cls(name, stub=value["stub"])
            base = preset(value["preset"]) if value.get("preset") else TestConfig()
            cfg = value.get("config") or {}
            merged = {**base.to_dict(), **cfg}
            return cls(name, config=TestConfig.from_dict(merged))
        raise ConfigError(f"cannot interpret method {value!r}")

    def run(self, data: Dataset, seed: int) -> float:
        if self.stub == "stub-one":
            return 1.0
        if self.stub == "stub-zero":
            return 0.0
        if self.stub == "stub-uniform":
            return float(np.random.default_rng(seed).uniform())
        return run_test(data, self.config.with_(seed=seed)).p_value


def _rep_seeds(seed: int, sc: Scenario, n: int, rep: int):
    # zhang incremental cells share data across d, so d is left out of the key
    key = sc.label if not (sc.id == "zhang" and sc.incremental) else f"zhang-{sc.case}-{sc.hypothesis}"
    ss = np.random.SeedSequence([int(seed), _stable_key(key), int(n), int(rep)])
    data_ss, method_ss = ss.spawn(2)
    return int(data_ss.generate_state(1)[0]), int(method_ss.generate_state(1)[0])


def run_cell(methods, scenario, n: int, reps: int, alpha: float, seed: int, record_runtime: bool = False):
    """All reps of one (scenario, n) cell; every method sees the same dataset per rep.

    Returns one dict per method with per-rep p-values (``None`` marks a
    failed rep).
    """
    sc = Scenario.parse(scenario)
    methods = [Method.parse(m) for m in methods]
    pvals = {m.name: [] for m in methods}
    errors = {m.name: [] for m in methods}
    times = {m.name: [] for m in methods}
    for rep in range(reps):
        data_seed, method_seed = _rep_seeds(seed, sc, n, rep)
        data = generate(sc, n, data_seed)
        for m in methods:
            t0 = time.perf_counter()
            try:
                p = m.run(data, method_seed)
            except Exception as exc:  # a failing method must not abort the campaign
                logger.warning("%s failed on %s n=%d rep=%d: %s", m.name, sc.label, n, rep, exc)
                errors[m.name].append(f"rep {rep}: {type(exc).__name__}: {exc}")
                p = None
            times[m.name].append(time.perf_counter() - t0)
            pvals[m.name].append(p)
    out = []
    for m in methods:
        ps = pvals[m.name]
        done = [p for p in ps if p is not None]
        k = sum(p < alpha for p in done)
        N = len(done)
        lo, hi = wilson_ci(k, N) if N else (float("nan"), float("nan"))
        out.append({
            "scenario": sc.label,
            "n": int(n),
            "method": m.name,
            "k": int(k),
            "N": int(N),
            "rate": k / N if N else float("nan"),
            "wilson_lo": lo,
            "wilson_hi": hi,
            "mean_runtime_ms": 1000 * float(np.mean(times[m.name])) if record_runtime else None,
            "failures": len(ps) - N,
            "p_values": ps,
            "errors": errors[m.name],
        })
    return out


@dataclass(frozen=True)
class CampaignSpec:
    scenarios: tuple
    sample_sizes: tuple
    methods: tuple
    reps: int
    alpha: float = 0.05
    seed: int = 0
    record_runtime: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(Scenario.parse(s) for s in self.scenarios))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "methods", tuple(Method.parse(m) for m in self.methods))
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"method names must be unique, got {names}")
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")

    def cells(self):
        return [(sc, n) for sc in self.scenarios for n in self.sample_sizes]

    def cell_key(self, sc: Scenario, n: int) -> str:
        payload = json.dumps(
            {
                "scenario": sc.label, "incremental": sc.incremental, "n": n,
                "methods": [_method_fingerprint(m) for m in self.methods],
                "reps": self.reps, "alpha": self.alpha, "seed": self.seed,
            },
            sort_keys=True,
        )
        return f"{sc.label}_n{n}_{hashlib.sha256(payload.encode()).hexdigest()[:12]}"


def _method_fingerprint(m: Method):
    return {"name": m.name, "stub": m.stub, "config": m.config.to_dict() if m.config else None}


CSV_COLUMNS = ("scenario", "n", "method", "k", "N", "rate", "wilson_lo", "wilson_hi", "mean_runtime_ms", "failures")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _cell_worker(args):
    spec, sc, n = args
    return run_cell(spec.methods, sc, n, spec.reps, spec.alpha, spec.seed, spec.record_runtime)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def run_campaign(spec: CampaignSpec, out_dir=None, *, jobs: int = 1, resume: bool = False,
                 progress: Optional[Callable[[str], None]] = None):
    """Run every (scenario, n) cell and collect rows.

    With ``out_dir`` each finished cell is checkpointed to
    ``out_dir/cells/<key>.json``; with ``resume`` such checkpoints are reused
    instead of recomputed. ``jobs > 1`` runs cells in worker processes;
    results do not depend on it.
    """
    cells = spec.cells()
    cell_dir = None
    if out_dir is not None:
        cell_dir = Path(out_dir) / "cells"
        cell_dir.mkdir(parents=True, exist_ok=True)

    results: dict[int, list] = {}
    todo = []
    for i, (sc, n) in enumerate(cells):
        path = cell_dir / f"{spec.cell_key(sc, n)}.json" if cell_dir else None
        if resume and path is not None and path.exists():
            results[i] = json.loads(path.read_text())
            if progress:
                progress(f"{sc.label} n={n}: reused checkpoint")
        else:
            todo.append(i)

    def finish(i, rows):
        results[i] = rows
        sc, n = cells[i]
        if cell_dir is not None:
            _atomic_write(cell_dir / f"{spec.cell_key(sc, n)}.json", json.dumps(rows, sort_keys=True))
        if progress:
            progress(f"{sc.label} n={n}: done")

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {i: pool.submit(_cell_worker, (spec, *cells[i])) for i in todo}
            for i in todo:
                finish(i, futures[i].result())
    else:
        for i in todo:
            finish(i, _cell_worker((spec, *cells[i])))

    rows = [row for i in range(len(cells)) for row in results[i]]
    if out_dir is not None:
        write_outputs(rows, Path(out_dir))
    return rows


def results_csv(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(r[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def write_outputs(rows, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "results.csv", results_csv(rows))
    log = [
        {"scenario": r["scenario"], "n": r["n"], "method": r["method"], "p_values": r["p_values"],
         "errors": r["errors"]}
        for r in rows
    ]
    _atomic_write(out_dir / "pvalues.json", json.dumps(log, sort_keys=True, indent=1) + "\n")
