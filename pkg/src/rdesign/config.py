"""Declarative experiment configuration (YAML).

Schema (defaults in brackets)::

    # exactly one environment source
    scenario: 1..8
    multivariate: {d: [6], shift: [false], seed: [0]}
    csv: {path: covariates.csv, surface: {mu0_intercept, mu0_coef, tau_intercept,
          tau_coef, eta_gamma, eta_c, propensity_coef}}

    participation: {beta0: [0.0], beta1: [1.0]}   # scenario only
    noise_sd: [1.0]
    n_obs: [2000]
    n_pool: [1000]
    n_test: [1000]
    loop: {budget: [240], batch_size: [10], warm_start_size: [50],
           temperature: [1.0], eval_every: [null], base_learner: [gp],
           kernel: [RBF], restarts: [5], freeze_hypers: [false]}
    acquisition: {gh_nodes: [96], target_subsample_size: [500],
                  rho2_max: [1 - 1e-10]}
    methods: [[TSR, REPIGTau], [PureRCT, Random]]
    seeds: [0, 1, 2]
    metrics: [[sqrt_pehe_test]]
    outdir: [results]
    workers: [null]

``base_learner`` is ``gp``, ``knn`` or the path of an offsets CSV.
Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import datagen as dg
from .acquisition import NAMES as ACQUISITIONS
from .acquisition import RESIDUAL_CRITERIA, AcquisitionSpec
from .gp import FAMILIES
from .loop import LoopConfig
from .models import ARCHITECTURES

METRICS = ("sqrt_pehe_train", "sqrt_pehe_test", "ape", "regret")
ENV_KEYS = ("scenario", "multivariate", "csv")

DEFAULTS = {
    "participation": {"beta0": 0.0, "beta1": 1.0},
    "noise_sd": 1.0,
    "n_obs": 2000,
    "n_pool": 1000,
    "n_test": 1000,
    "loop": {
        "budget": 240,
        "batch_size": 10,
        "warm_start_size": 50,
        "temperature": 1.0,
        "eval_every": None,
        "base_learner": "gp",
        "kernel": "RBF",
        "restarts": 5,
        "freeze_hypers": False,
    },
    "acquisition": {"gh_nodes": 96, "target_subsample_size": 500, "rho2_max": 1.0 - 1e-10},
    "metrics": ["sqrt_pehe_test"],
    "outdir": "results",
    "workers": None,
}
_MV_DEFAULTS = {"d": 6, "shift": False, "seed": 0}
_SURFACE_KEYS = tuple(dg.SurfaceParams.__dataclass_fields__)
_TOP_KEYS = set(ENV_KEYS) | set(DEFAULTS) | {"methods", "seeds"}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""


def _unknown(section: dict, allowed, where: str):
    extra = sorted(set(section) - set(allowed), key=str)
    if extra:
        prefix = f"{where}: " if where else ""
        raise ConfigError(f"{prefix}unknown keys: {', '.join(map(str, extra))}")


def _mapping(value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping")
    return value


def _int(value, where, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {value}")
    return value


def _real(value, where, positive=True):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be positive, got {value}")
    return value


def _bool(value, where):
    if not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true or false, got {value!r}")
    return value


def _merge(defaults: dict, given: dict, where: str) -> dict:
    given = _mapping(given, where)
    _unknown(given, defaults, where)
    out = dict(defaults)
    out.update(given)
    return out


def normalize(raw: dict) -> dict:
    """Validate ``raw`` and return it with every default filled in."""
    raw = _mapping(copy.deepcopy(raw), "config")
    _unknown(raw, _TOP_KEYS, "")
    out = {}

    sources = [k for k in ENV_KEYS if k in raw]
    if len(sources) != 1:
        raise ConfigError(f"environment: give exactly one of {', '.join(ENV_KEYS)}")
    src = sources[0]
    if src == "scenario":
        sc = raw["scenario"]
        if isinstance(sc, bool) or sc not in dg.SCENARIOS:
            raise ConfigError(f"scenario: must be one of 1..8, got {sc!r}")
        out["scenario"] = sc
        part = _merge(DEFAULTS["participation"], raw.get("participation", {}), "participation")
        out["participation"] = {k: _real(part[k], f"participation.{k}", positive=False) for k in ("beta0", "beta1")}
    else:
        if "participation" in raw:
            raise ConfigError("participation: only applies to scenario environments")
        if src == "multivariate":
            mv = _merge(_MV_DEFAULTS, raw["multivariate"] or {}, "multivariate")
            d = _int(mv["d"], "multivariate.d", 6)
            if d % 3:
                raise ConfigError(f"multivariate.d: must be divisible by 3, got {d}")
            out["multivariate"] = {"d": d, "shift": _bool(mv["shift"], "multivariate.shift"), "seed": _int(mv["seed"], "multivariate.seed", 0)}
        else:
            cs = _mapping(raw["csv"], "csv")
            _unknown(cs, ("path", "surface"), "csv")
            if not isinstance(cs.get("path"), str):
                raise ConfigError("csv.path: expected a file path")
            surface = _mapping(cs.get("surface", {}) or {}, "csv.surface")
            _unknown(surface, _SURFACE_KEYS, "csv.surface")
            fixed = {}
            for k, v in surface.items():
                if isinstance(v, (list, tuple)):
                    fixed[k] = [_real(u, f"csv.surface.{k}", positive=False) for u in v]
                else:
                    fixed[k] = _real(v, f"csv.surface.{k}", positive=False)
            if "eta_c" in fixed and (not isinstance(fixed["eta_c"], list) or len(fixed["eta_c"]) != 3):
                raise ConfigError("csv.surface.eta_c: expected three numbers")
            out["csv"] = {"path": cs["path"], "surface": fixed}

    out["noise_sd"] = _real(raw.get("noise_sd", DEFAULTS["noise_sd"]), "noise_sd", positive=False)
    if out["noise_sd"] < 0:
        raise ConfigError("noise_sd: must be non-negative")
    for k in ("n_obs", "n_pool", "n_test"):
        out[k] = _int(raw.get(k, DEFAULTS[k]), k)

    lp = _merge(DEFAULTS["loop"], raw.get("loop", {}) or {}, "loop")
    lp["budget"] = _int(lp["budget"], "loop.budget")
    lp["batch_size"] = _int(lp["batch_size"], "loop.batch_size")
    lp["warm_start_size"] = _int(lp["warm_start_size"], "loop.warm_start_size", 0)
    lp["temperature"] = _real(lp["temperature"], "loop.temperature")
    if lp["eval_every"] is not None:
        lp["eval_every"] = _int(lp["eval_every"], "loop.eval_every")
    if not isinstance(lp["base_learner"], str) or not (lp["base_learner"] in ("gp", "knn") or lp["base_learner"].endswith(".csv")):
        raise ConfigError(f"loop.base_learner: expected gp, knn or an offsets .csv path, got {lp['base_learner']!r}")
    if lp["kernel"] not in FAMILIES:
        raise ConfigError(f"loop.kernel: must be one of {', '.join(FAMILIES)}")
    lp["restarts"] = _int(lp["restarts"], "loop.restarts")
    lp["freeze_hypers"] = _bool(lp["freeze_hypers"], "loop.freeze_hypers")
    if lp["warm_start_size"] > out["n_pool"]:
        raise ConfigError("loop.warm_start_size: exceeds n_pool")
    if lp["budget"] > lp["warm_start_size"] and lp["warm_start_size"] + lp["batch_size"] > out["n_pool"]:
        raise ConfigError("loop.batch_size: warm_start_size + batch_size exceeds n_pool")
    out["loop"] = lp

    aq = _merge(DEFAULTS["acquisition"], raw.get("acquisition", {}) or {}, "acquisition")
    aq["gh_nodes"] = _int(aq["gh_nodes"], "acquisition.gh_nodes", 2)
    aq["target_subsample_size"] = _int(aq["target_subsample_size"], "acquisition.target_subsample_size")
    aq["rho2_max"] = _real(aq["rho2_max"], "acquisition.rho2_max")
    if not aq["rho2_max"] < 1:
        raise ConfigError("acquisition.rho2_max: must lie in (0, 1)")
    out["acquisition"] = aq

    methods = raw.get("methods")
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods: expected a non-empty list of [architecture, acquisition] pairs")
    norm_methods = []
    for i, m in enumerate(methods):
        if not isinstance(m, (list, tuple)) or len(m) != 2:
            raise ConfigError(f"methods[{i}]: expected [architecture, acquisition]")
        arch, acq = m
        if arch not in ARCHITECTURES:
            raise ConfigError(f"methods[{i}]: unknown architecture {arch!r}")
        if acq not in ACQUISITIONS:
            raise ConfigError(f"methods[{i}]: unknown acquisition {acq!r}")
        if acq in RESIDUAL_CRITERIA and arch != "TSR":
            raise ConfigError(f"methods[{i}]: {acq} needs the TSR architecture")
        if [arch, acq] in norm_methods:
            raise ConfigError(f"methods[{i}]: duplicate method {arch}-{acq}")
        norm_methods.append([arch, acq])
    out["methods"] = norm_methods

    seeds = raw.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds: expected a non-empty list of integers")
    for i, s in enumerate(seeds):
        _int(s, f"seeds[{i}]", 0)
        if s >= 2**64:
            raise ConfigError(f"seeds[{i}]: must fit in 64 bits")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds: must be unique")
    out["seeds"] = list(seeds)

    metrics = raw.get("metrics", DEFAULTS["metrics"])
    if not isinstance(metrics, list) or not metrics or any(m not in METRICS for m in metrics):
        raise ConfigError(f"metrics: expected a non-empty list drawn from {', '.join(METRICS)}")
    out["metrics"] = list(dict.fromkeys(metrics))

    outdir = raw.get("outdir", DEFAULTS["outdir"])
    if not isinstance(outdir, str) or not outdir:
        raise ConfigError("outdir: expected a directory path")
    out["outdir"] = outdir
    workers = raw.get("workers", DEFAULTS["workers"])
    out["workers"] = None if workers is None else _int(workers, "workers")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> ExperimentConfig:
        return cls(normalize(raw), Path(base_dir))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")

    def _path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def outdir(self) -> Path:
        return self._path(self.data["outdir"])

    @property
    def methods(self) -> list:
        return [tuple(m) for m in self.data["methods"]]

    @property
    def seeds(self) -> list:
        return list(self.data["seeds"])

    @property
    def metrics(self) -> list:
        return list(self.data["metrics"])

    def environment(self) -> dg.GroundTruthEnv:
        c = self.data
        if "scenario" in c:
            p = c["participation"]
            return dg.univariate_env(c["scenario"], beta0=p["beta0"], beta1=p["beta1"], noise_sd=c["noise_sd"])
        if "multivariate" in c:
            mv = c["multivariate"]
            return dg.multivariate_env(mv["d"], shift=mv["shift"], seed=mv["seed"], noise_sd=c["noise_sd"])
        cs = c["csv"]
        X = dg.load_covariates_csv(self._path(cs["path"]))
        surface = {k: tuple(v) if isinstance(v, list) else v for k, v in cs["surface"].items()}
        return dg.csv_env(X, dg.SurfaceParams(**surface), noise_sd=c["noise_sd"], name=Path(cs["path"]).stem)

    def loop_config(self, method, seed: int) -> LoopConfig:
        arch, acq = method
        lp = dict(self.data["loop"])
        if lp["base_learner"].endswith(".csv"):
            lp["base_learner"] = str(self._path(lp["base_learner"]))
        return LoopConfig(acquisition=AcquisitionSpec(acq, **self.data["acquisition"]), architecture=arch, seed=seed, **lp)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config: not valid YAML: {e}") from None
    if raw is None:
        raise ConfigError("config: file is empty")
    return ExperimentConfig.from_dict(raw, path.parent)
