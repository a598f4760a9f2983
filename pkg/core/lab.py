#!/usr/bin/env python3
"""
Experiment Lab

Configures, runs and serializes every study of the lab:

    mutual-info         I(Y; Ỹ) curves over (mu, sigma) for each forward
    distortion-sim      trained-decoder distortion of each forward against rounding
    rate-surface        rate estimation error over Gaussian model parameters
    grad-stats          bias and variance of rate-term gradient estimators
    mi-2d               mutual information of correlated two-dimensional latents
    entropy-compare     smoothed entropy against the entropy of centred rounding
    laplace-rd          rate-distortion points on the Laplace source
    lower-bound-sweep   joint training over scale lower bounds, then post-training
    rate-2d             conditional-model rate of two-dimensional latents
    soft-curves         tabulated soft rounding functions and derivatives

A run resolves its configuration against the experiment schema, evaluates
grid points on a thread pool in index order, and writes a CSV with a
metadata sidecar (<out>.meta.json) and an optional JSON mirror.
"""

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from core.backward import rate_term_stats
from core.entropy_model import (
    DEFAULT_SIGMA_GRID,
    GaussianEntropyModel,
    expected_rate,
    rate_2d,
    rate_surface,
)
from core.errors import ConfigError, NumericalError, QuantLabError
from core.infotheory import entropy_compare, info_curve, log_sigma_grid, mi_2d_correlated
from core.numerics import Seed
from core.sources import Gaussian1D, Gaussian2D
from core.surrogates import SurrogateKind, SurrogateSpec, soft_curves
from core.tinynet import LOWER_BOUNDS, TrainConfig, lower_bound_sweep, train_laplace_rd, train_synthesis


TOOL_VERSION = "1.0.0"
FLOAT_FORMAT = "%.17g"
TOP_LEVEL_KEYS = ("experiment", "seed", "output_path", "threads", "parameters")
UNIT_SUFFIXES = {"_bits": "bits", "_mse": "mse"}


class _Required:
    def __repr__(self) -> str:
        return "<required>"


REQUIRED = _Required()


# -- coercion ----------------------------------------------------------------

def _as_int(key: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer)) or float(value) != int(value):
        raise ConfigError(f"Parameter {key!r} must be an integer, got {value!r}")
    return int(value)


def _as_float(key: str, value) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"Parameter {key!r} must be a number, got {value!r}")
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Parameter {key!r} must be a number, got {value!r}")
    if not math.isfinite(number):
        raise ConfigError(f"Parameter {key!r} must be finite, got {value!r}")
    return number


def _as_bool(key: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"Parameter {key!r} must be true or false, got {value!r}")
    return value


def _as_str(key: str, value) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"Parameter {key!r} must be a string, got {value!r}")
    return value


def _listed(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _as_floats(key: str, value) -> List[float]:
    values = [_as_float(key, v) for v in _listed(value)]
    if not values:
        raise ConfigError(f"Parameter {key!r} must not be empty")
    return values


def _as_ints(key: str, value) -> List[int]:
    return [_as_int(key, v) for v in _listed(value)]


def _as_strs(key: str, value) -> List[str]:
    values = [_as_str(key, v) for v in _listed(value)]
    if not values:
        raise ConfigError(f"Parameter {key!r} must not be empty")
    return values


def _as_optional_floats(key: str, value) -> Optional[List[float]]:
    return None if value is None else _as_floats(key, value)


def _as_calcs(key: str, value) -> List[str]:
    calcs = _as_strs(key, value)
    for calc in calcs:
        try:
            SurrogateSpec.parse(calc)
        except (ValueError, QuantLabError) as e:
            raise ConfigError(f"Parameter {key!r}: invalid forward {calc!r} ({e})")
    return calcs


def _as_sources(key: str, value) -> List[dict]:
    sources = []
    for item in _listed(value):
        if not isinstance(item, dict) or "sigma" not in item or set(item) - {"mu", "sigma", "rho"}:
            raise ConfigError(f"Parameter {key!r}: each source needs sigma plus mu or rho, got {item!r}")
        if "rho" in item and "mu" in item:
            raise ConfigError(f"Parameter {key!r}: a source takes mu (scalar) or rho (two-dimensional), not both")
        sources.append({k: _as_float(key, v) for k, v in item.items()})
    if not sources:
        raise ConfigError(f"Parameter {key!r} must not be empty")
    return sources


def _as_grad_rows(key: str, value) -> List[str]:
    rows = _as_strs(key, value)
    for row in rows:
        rule, _, calc = row.partition(":")
        if not calc or rule.strip().upper() not in ("PGE", "STE", "EP", "STANDARD"):
            raise ConfigError(f"Parameter {key!r}: rows look like 'PGE:SUA@5', got {row!r}")
        _as_calcs(key, calc)
    return rows


# -- schemas -----------------------------------------------------------------

Schema = Dict[str, Tuple[Any, Callable[[str, Any], Any]]]

_TRAINING: Schema = {
    "steps": (50000, _as_int),
    "batch": (256, _as_int),
    "learning_rate": (1e-3, _as_float),
    "n_eval": (10 ** 6, _as_int),
    "log_every": (0, _as_int),
}

SCHEMAS: Dict[str, Schema] = {
    "mutual-info": {
        "calcs": (["ROUND", "AUN", "SR", "SUA@5", "SUA@10", "SRA@5", "SRA@10"], _as_calcs),
        "mu": ([0.0, 0.125, 0.25, 0.375, 0.5], _as_floats),
        "sigma_min": (0.05, _as_float),
        "sigma_max": (2.0, _as_float),
        "sigma_points": (20, _as_int),
    },
    "distortion-sim": {
        "calcs": (REQUIRED, _as_calcs),
        "sources": (REQUIRED, _as_sources),
        "hidden": ([64, 64, 64], _as_ints),
        **_TRAINING,
    },
    "rate-surface": {
        "calcs": (["AUN", "SUA@12"], _as_calcs),
        "source_mu": (0.0, _as_float),
        "source_sigma": (0.3, _as_float),
        "mu_grid": (None, _as_optional_floats),
        "sigma_grid": ([float(s) for s in DEFAULT_SIGMA_GRID], _as_floats),
        "sigma_0": (0.0, _as_float),
        "method": ("auto", _as_str),
        "n_mc": (10 ** 5, _as_int),
        "zero_center": (False, _as_bool),
    },
    "grad-stats": {
        "rows": (["PGE:AUN", "PGE:SUA@5", "PGE:SUA@10", "STE:SUA@5", "STE:SUA@10",
                  "STE:SR", "STE:SRA@5", "STE:SRA@10"], _as_grad_rows),
        "sigma_q": ([0.3, 1.0], _as_floats),
        "n_y": (1000, _as_int),
        "n_trials": (100, _as_int),
    },
    "mi-2d": {
        "calcs": (["ROUND", "UQ_S", "AUN"], _as_calcs),
        "sigma": ([0.3, 1.0], _as_floats),
        "rho": (1.0, _as_float),
    },
    "entropy-compare": {
        "mu": ([0.0, 0.25, 0.5], _as_floats),
        "sigma_min": (0.05, _as_float),
        "sigma_max": (2.0, _as_float),
        "sigma_points": (20, _as_int),
    },
    "laplace-rd": {
        "analysis": (["linear", "nonlinear"], _as_strs),
        "rules": (["STE", "EP"], _as_strs),
        "lambdas": ([0.25, 0.5, 1.0, 2.0, 4.0, 8.0], _as_floats),
        "n_seeds": (1, _as_int),
        **_TRAINING,
        "steps": (20000, _as_int),
        "n_eval": (10 ** 5, _as_int),
    },
    "lower-bound-sweep": {
        "sigma_0": (list(LOWER_BOUNDS), _as_floats),
        "lambda": (0.5, _as_float),
        "forward": ("AUN", _as_str),
        "rule": ("PGE", _as_str),
        "post_steps": (5000, _as_int),
        **_TRAINING,
        "steps": (20000, _as_int),
        "n_eval": (10 ** 5, _as_int),
    },
    "rate-2d": {
        "calcs": (["AUN", "UQ_I", "SUA@5", "UQ_S"], _as_calcs),
        "rho_p": ([0.0, 0.25, 0.5, 0.75, 0.9, 0.95], _as_floats),
        "rho_q": (None, _as_optional_floats),
        "n_mc": (10 ** 5, _as_int),
    },
    "soft-curves": {
        "alphas": ([1.0, 5.0, 10.0], _as_floats),
        "y_min": (-2.0, _as_float),
        "y_max": (2.0, _as_float),
        "points": (401, _as_int),
    },
}

EXPERIMENTS = tuple(SCHEMAS)


def resolve_parameters(experiment: str, parameters: Optional[dict]) -> dict:
    """
    Validate a parameter block against the experiment schema and fill defaults.

    Raises:
        ConfigError: unknown experiment, unknown keys, missing required keys or bad values
    """
    if experiment not in SCHEMAS:
        raise ConfigError(f"Unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    parameters = parameters or {}
    if not isinstance(parameters, dict):
        raise ConfigError(f"parameters must be a mapping, got {type(parameters).__name__}")
    schema = SCHEMAS[experiment]
    unknown = sorted(set(parameters) - set(schema))
    if unknown:
        raise ConfigError(f"Unknown parameters for {experiment}: {', '.join(unknown)}")
    missing = [key for key, (default, _) in schema.items() if default is REQUIRED and key not in parameters]
    if missing:
        raise ConfigError(f"Missing required parameters for {experiment}: {', '.join(missing)}")

    resolved = {}
    for key, (default, coerce) in schema.items():
        value = parameters.get(key, default)
        resolved[key] = None if value is None else coerce(key, value)
    return resolved


# -- configuration -----------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One experiment run: which study, its parameters, seed and output path."""
    experiment: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    output_path: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        self.parameters = resolve_parameters(self.experiment, self.parameters)
        self.seed = _as_int("seed", self.seed)
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        self.threads = _as_int("threads", self.threads)
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    def resolved(self) -> dict:
        """Fully resolved configuration (what the run embeds in its outputs)."""
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "output_path": self.output_path,
            "parameters": dict(self.parameters)
        }

    @property
    def config_hash(self) -> str:
        """SHA-256 over canonical JSON of the resolved config; threads and output path excluded."""
        payload = {"experiment": self.experiment, "seed": self.seed, "parameters": self.parameters}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.resolved(), sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"Config must be a mapping, got {type(data).__name__}")
        unknown = sorted(set(data) - set(TOP_LEVEL_KEYS))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        if "experiment" not in data:
            raise ConfigError("Missing required config key: experiment")
        return cls(
            experiment=data["experiment"],
            parameters=data.get("parameters") or {},
            seed=data.get("seed", 0),
            output_path=data.get("output_path"),
            threads=data.get("threads", 1)
        )


def load_config(path: Union[str, Path]) -> dict:
    """Read a YAML config file into a raw mapping (validated by ExperimentConfig)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file {path} is not valid YAML: {e}")
    return data or {}


def apply_overrides(data: dict, assignments: Sequence[str]) -> dict:
    """Apply `key=value` parameter overrides; values are parsed as YAML scalars or lists."""
    data = dict(data)
    parameters = dict(data.get("parameters") or {})
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        try:
            parameters[key.strip()] = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"--set {key}: cannot parse value {raw!r}: {e}")
    data["parameters"] = parameters
    return data


# -- result tables -----------------------------------------------------------

def column_units(columns: Sequence[str]) -> Dict[str, str]:
    units = {}
    for column in columns:
        for suffix, unit in UNIT_SUFFIXES.items():
            if column.endswith(suffix):
                units[column] = unit
    return units


@dataclass
class ResultTable:
    """Rows of one experiment with an ordered column schema and run metadata."""
    experiment: str
    columns: List[str]
    rows: List[dict]
    metadata: Dict[str, Any] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for index, row in enumerate(self.rows):
            if list(row) != list(self.columns):
                raise NumericalError(f"Row {index} of {self.experiment} has columns {list(row)}, expected {self.columns}")
            for column, value in row.items():
                if isinstance(value, float) and not math.isfinite(value):
                    raise NumericalError(f"Non-finite value in {self.experiment} row {index}, column {column}: {value}")

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def csv_text(self) -> str:
        return self.frame().to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "columns": list(self.columns),
            "rows": self.rows,
            "metadata": self.metadata,
            "summary": self.summary
        }

    def write(self, path: Union[str, Path], json_mirror: bool = False) -> Path:
        """Write the CSV, its metadata sidecar and optionally a JSON mirror."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.csv_text())
        with open(sidecar_path(path), "w") as f:
            json.dump({**self.metadata, "summary": self.summary}, f, indent=2)
        if json_mirror:
            with open(path.with_suffix(".json"), "w") as f:
                json.dump(self.to_dict(), f, indent=2)
        return path


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def read_table(path: Union[str, Path]) -> ResultTable:
    """Load a CSV written by ResultTable.write, with its sidecar metadata when present."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Result file not found: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    metadata = {}
    if sidecar_path(path).exists():
        with open(sidecar_path(path)) as f:
            metadata = json.load(f)
    summary = metadata.pop("summary", {})
    rows = [{column: _plain(value) for column, value in row.items()} for row in frame.to_dict("records")]
    return ResultTable(metadata.get("experiment", path.stem), list(frame.columns), rows, metadata, summary)


def _plain(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


# -- experiments -------------------------------------------------------------

RunnerResult = Tuple[List[str], List[dict], Dict[str, Any]]


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    """Map over items on a worker pool; results come back in item order."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _parameter_of(spec: SurrogateSpec) -> float:
    """Temperature alpha (or SGA tau) of a forward; 0 when it has none."""
    if spec.alpha is not None:
        return float(spec.alpha)
    if spec.kind == SurrogateKind.SGA:
        return float(spec.tau)
    return 0.0


def _train_config(params: dict, seed: Seed, **overrides) -> TrainConfig:
    values = {
        "steps": params["steps"],
        "batch": params["batch"],
        "learning_rate": params["learning_rate"],
        "n_eval": params["n_eval"],
        "log_every": params["log_every"],
        "seed": seed,
    }
    if "hidden" in params:
        values["hidden"] = tuple(params["hidden"])
    values.update(overrides)
    return TrainConfig(**values)


def run_mutual_info(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["calc", "alpha", "mu", "sigma", "I_bits", "I_minus_round_bits"]
    sigmas = log_sigma_grid(params["sigma_min"], params["sigma_max"], params["sigma_points"])
    rows = []
    for calc in params["calcs"]:
        spec = SurrogateSpec.parse(calc)
        curve = info_curve(spec, params["mu"], sigmas, threads=threads)
        for row in curve.rows():
            rows.append({"calc": spec.kind.value, "alpha": _parameter_of(spec), **row})
    return columns, rows, {}


def _source_from(description: dict) -> Union[Gaussian1D, Gaussian2D]:
    if "rho" in description:
        return Gaussian2D(description["sigma"], description["rho"])
    return Gaussian1D(description.get("mu", 0.0), description["sigma"])


def run_distortion_sim(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["calc", "alpha", "dims", "mu", "sigma", "rho",
               "D_tilde_mse", "D_tilde_se_mse", "D_round_mse", "D_round_se_mse", "delta_D_rel"]
    rounding = SurrogateSpec(SurrogateKind.ROUND)
    specs = [SurrogateSpec.parse(calc) for calc in params["calcs"]]
    sources = [_source_from(s) for s in params["sources"]]
    configs = [_train_config(params, seed.derive(index)) for index in range(len(sources))]

    def baseline(index: int) -> Tuple[float, float]:
        result = train_synthesis(rounding, sources[index], configs[index], logger, run_id)
        return result.D_tilde, result.D_tilde_se

    baselines = _map(baseline, list(range(len(sources))), threads)
    cells = [(i, spec) for i in range(len(sources)) for spec in specs]

    def evaluate(cell):
        index, spec = cell
        return train_synthesis(spec, sources[index], configs[index], logger, run_id, baseline=baselines[index])

    rows = []
    for (index, spec), result in zip(cells, _map(evaluate, cells, threads)):
        source = sources[index]
        is_2d = isinstance(source, Gaussian2D)
        rows.append({
            "calc": spec.kind.value,
            "alpha": _parameter_of(spec),
            "dims": 2 if is_2d else 1,
            "mu": 0.0 if is_2d else source.mu,
            "sigma": source.sigma,
            "rho": source.rho if is_2d else 0.0,
            "D_tilde_mse": result.D_tilde,
            "D_tilde_se_mse": result.D_tilde_se,
            "D_round_mse": result.D_round,
            "D_round_se_mse": result.D_round_se,
            "delta_D_rel": result.delta_D_rel
        })
    return columns, rows, {}


def run_rate_surface(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["calc", "alpha", "mu_q", "sigma_q", "rate_bits", "rate_round_bits", "delta_R_bits", "rate_se_bits"]
    source = Gaussian1D(params["source_mu"], params["source_sigma"])
    rows, summary = [], {}
    for index, calc in enumerate(params["calcs"]):
        spec = SurrogateSpec.parse(calc)
        surface = rate_surface(
            spec, source, params["mu_grid"], params["sigma_grid"], params["sigma_0"],
            method=params["method"], n_mc=params["n_mc"], seed=seed.derive(index),
            threads=threads, zero_center=params["zero_center"]
        )
        for row in surface.rows():
            rows.append({"calc": spec.kind.value, "alpha": _parameter_of(spec), **row})
        summary[calc] = {
            "method": surface.method,
            "q_star_mu": surface.q_star[0],
            "q_star_sigma": surface.q_star[1],
            "q_star_rate_bits": surface.q_star_rate,
            "q_star_distance": surface.distance,
            "max_abs_delta_R_bits": surface.max_abs_delta
        }
    return columns, rows, summary


def run_grad_stats(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["rule", "calc", "alpha", "sigma_q", "bias", "bias_se", "var", "var_se",
               "mean_error", "mean_error_se", "abs_error", "abs_error_se"]
    cells = []
    for row in params["rows"]:
        rule, _, calc = row.partition(":")
        for sigma_q in params["sigma_q"]:
            cells.append((rule.strip().upper(), SurrogateSpec.parse(calc), sigma_q))

    def evaluate(indexed):
        index, (rule, spec, sigma_q) = indexed
        return rate_term_stats(rule, spec.kind, spec.alpha, sigma_q, params["n_y"], params["n_trials"],
                               seed.derive(index), tau=spec.tau)

    rows = []
    for (rule, spec, sigma_q), stats in zip(cells, _map(evaluate, list(enumerate(cells)), threads)):
        rows.append({
            "rule": rule,
            "calc": spec.kind.value,
            "alpha": _parameter_of(spec),
            "sigma_q": sigma_q,
            "bias": stats.bias,
            "bias_se": stats.bias_se,
            "var": stats.variance,
            "var_se": stats.variance_se,
            "mean_error": stats.mean_error,
            "mean_error_se": stats.mean_error_se,
            "abs_error": stats.abs_error,
            "abs_error_se": stats.abs_error_se
        })
    return columns, rows, {}


def run_mi_2d(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["calc", "sigma", "rho", "I_bits"]
    cells = [(SurrogateSpec.parse(calc), sigma) for calc in params["calcs"] for sigma in params["sigma"]]
    values = _map(lambda cell: mi_2d_correlated(cell[0], cell[1], params["rho"]), cells, threads)
    rows = [{"calc": spec.kind.value, "sigma": sigma, "rho": params["rho"], "I_bits": value}
            for (spec, sigma), value in zip(cells, values)]
    return columns, rows, {}


def run_entropy_compare(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["mu", "sigma", "H_cont_bits", "H_disc_bits", "R_bits"]
    sigmas = log_sigma_grid(params["sigma_min"], params["sigma_max"], params["sigma_points"])
    cells = [(mu, float(sigma)) for mu in params["mu"] for sigma in sigmas]
    aun = SurrogateSpec(SurrogateKind.AUN)

    def evaluate(cell):
        mu, sigma = cell
        h_cont, h_disc = entropy_compare(mu, sigma)
        rate = expected_rate(aun, Gaussian1D(mu, sigma), GaussianEntropyModel(mu, sigma, 0.0), zero_center=True)
        return h_cont, h_disc, rate

    rows = [{"mu": mu, "sigma": sigma, "H_cont_bits": h, "H_disc_bits": d, "R_bits": r}
            for (mu, sigma), (h, d, r) in zip(cells, _map(evaluate, cells, threads))]
    return columns, rows, {}


def run_laplace_rd(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["analysis", "rule", "seed_index", "lambda", "rate_bits", "rate_se_bits",
               "distortion_mse", "distortion_se_mse", "loss", "loss_se"]
    cells = [(analysis, rule.upper(), k) for analysis in params["analysis"]
             for rule in params["rules"] for k in range(params["n_seeds"])]

    def evaluate(cell):
        analysis, rule, k = cell
        return train_laplace_rd(analysis, rule, params["lambdas"], _train_config(params, seed.derive(k)), logger, run_id)

    rows = []
    for (analysis, rule, k), points in zip(cells, _map(evaluate, cells, threads)):
        for point in points:
            data = point.to_dict()
            rows.append({
                "analysis": analysis,
                "rule": rule,
                "seed_index": k,
                "lambda": data["lambda"],
                "rate_bits": data["rate_bits"],
                "rate_se_bits": data["rate_se_bits"],
                "distortion_mse": data["distortion_mse"],
                "distortion_se_mse": data["distortion_se_mse"],
                "loss": data["loss"],
                "loss_se": data["loss_se"]
            })
    return columns, rows, {}


def run_lower_bound_sweep(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["sigma_0", "joint_rate_bits", "joint_mse", "joint_loss", "joint_loss_se",
               "post_rate_bits", "post_mse", "post_loss", "post_loss_se"]
    cfg = _train_config(params, seed)
    post_cfg = _train_config(params, seed.derive(1), steps=params["post_steps"])

    def evaluate(sigma_0: float):
        return lower_bound_sweep([sigma_0], params["lambda"], cfg, post_cfg,
                                 forward_label=params["forward"], rule=params["rule"].upper(),
                                 logger=logger, run_id=run_id)[0]

    points = _map(evaluate, params["sigma_0"], threads)
    rows = [point.to_dict() for point in points]
    best = min(points, key=lambda point: point.post.loss)
    return columns, rows, {"best_sigma_0": best.sigma_0, "best_post_loss": best.post.loss}


def run_rate_2d(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["calc", "alpha", "rho_p", "rho_q", "rate_bits", "rate_se_bits"]
    rho_q = params["rho_q"] or params["rho_p"]
    if len(rho_q) != len(params["rho_p"]):
        raise ConfigError(f"rho_q must match rho_p in length ({len(params['rho_p'])}), got {len(rho_q)}")
    cells = [(SurrogateSpec.parse(calc), p, q) for calc in params["calcs"] for p, q in zip(params["rho_p"], rho_q)]

    def evaluate(indexed):
        index, (spec, p, q) = indexed
        return rate_2d(spec.kind, p, q, params["n_mc"], seed.derive(index), alpha=spec.alpha)

    rows = [{"calc": spec.kind.value, "alpha": _parameter_of(spec), "rho_p": p, "rho_q": q,
             "rate_bits": bits, "rate_se_bits": se}
            for (spec, p, q), (bits, se) in zip(cells, _map(evaluate, list(enumerate(cells)), threads))]
    return columns, rows, {}


def run_soft_curves(params: dict, seed: Seed, threads: int, logger=None, run_id=None) -> RunnerResult:
    columns = ["alpha", "y", "s", "s_grad", "r", "r_grad"]
    grid = np.linspace(params["y_min"], params["y_max"], params["points"])
    rows = []
    for alpha in params["alphas"]:
        curves = soft_curves(alpha, grid)
        for i in range(grid.size):
            rows.append({"alpha": alpha, **{key: float(curves[key][i]) for key in columns[1:]}})
    return columns, rows, {}


RUNNERS: Dict[str, Callable[..., RunnerResult]] = {
    "mutual-info": run_mutual_info,
    "distortion-sim": run_distortion_sim,
    "rate-surface": run_rate_surface,
    "grad-stats": run_grad_stats,
    "mi-2d": run_mi_2d,
    "entropy-compare": run_entropy_compare,
    "laplace-rd": run_laplace_rd,
    "lower-bound-sweep": run_lower_bound_sweep,
    "rate-2d": run_rate_2d,
    "soft-curves": run_soft_curves,
}


def run(config: ExperimentConfig, logger=None, json_mirror: bool = False) -> ResultTable:
    """
    Run one experiment and write its outputs when config.output_path is set.

    Output rows depend only on (config, seed): grid points use seeds derived
    from their index and are gathered in index order.
    """
    seed = Seed(root=config.seed)
    run_id = logger.log_run_start(config.experiment, config.config_hash, config.seed, config.parameters) if logger else None
    started = time.time()
    try:
        columns, rows, summary = RUNNERS[config.experiment](config.parameters, seed, config.threads, logger, run_id)
        metadata = {
            "experiment": config.experiment,
            "config_hash": config.config_hash,
            "seed": config.seed,
            "tool_version": TOOL_VERSION,
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "wall_time_seconds": time.time() - started,
            "config": config.resolved(),
            "column_units": column_units(columns)
        }
        table = ResultTable(config.experiment, columns, rows, metadata, summary)
        if config.output_path:
            table.write(config.output_path, json_mirror)
    except QuantLabError as e:
        if logger:
            logger.log_run_end(run_id, "failure", time.time() - started, 0, config.output_path, error=e.to_dict())
        raise
    if logger:
        logger.log_run_end(run_id, "success", time.time() - started, len(rows), config.output_path)
    return table


# -- comparison --------------------------------------------------------------

@dataclass
class ColumnDeviation:
    """Deviation of one column between two tables and the verdict against its tolerance."""
    column: str
    max_abs: float
    max_rel: float
    tolerance: Dict[str, Any]
    passed: bool
    mismatches: int = 0

    def to_dict(self) -> dict:
        return {
            "column": self.column,
            "max_abs": self.max_abs,
            "max_rel": self.max_rel,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "mismatches": self.mismatches
        }


@dataclass
class CompareReport:
    deviations: List[ColumnDeviation]

    @property
    def passed(self) -> bool:
        return all(d.passed for d in self.deviations)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "columns": [d.to_dict() for d in self.deviations]}


def _tolerance_for(column: str, tolerances: Optional[dict]) -> Dict[str, Any]:
    tolerances = tolerances or {}
    spec = (tolerances.get("columns") or {}).get(column, tolerances.get("default", {"abs": 0.0}))
    if not isinstance(spec, dict) or not set(spec) <= {"abs", "rel", "se", "k"}:
        raise ConfigError(f"Tolerance for {column!r} must use keys abs, rel, se, k; got {spec!r}")
    if "k" in spec and "se" not in spec:
        raise ConfigError(f"Tolerance for {column!r} sets k without an se column")
    return spec


def compare(table_a: ResultTable, table_b: ResultTable, tolerances: Optional[dict] = None) -> CompareReport:
    """
    Per-column deviations between two tables with identical schemas.

    A tolerance is {"abs": a}, {"rel": r} or {"se": <se column>, "k": k}; the
    last passes when |a - b| <= k * sqrt(se_a^2 + se_b^2) row by row. Columns
    without a tolerance must agree exactly. Text columns must match.

    Raises:
        ConfigError: schemas or row counts differ, or a tolerance is malformed
    """
    if list(table_a.columns) != list(table_b.columns):
        raise ConfigError(f"Schema mismatch: {table_a.columns} vs {table_b.columns}")
    if len(table_a.rows) != len(table_b.rows):
        raise ConfigError(f"Row count mismatch: {len(table_a.rows)} vs {len(table_b.rows)}")
    frame_a, frame_b = table_a.frame(), table_b.frame()

    deviations = []
    for column in table_a.columns:
        tolerance = _tolerance_for(column, tolerances)
        a, b = frame_a[column], frame_b[column]
        if not (pd.api.types.is_numeric_dtype(a) and pd.api.types.is_numeric_dtype(b)):
            mismatches = int((a.astype(str) != b.astype(str)).sum())
            deviations.append(ColumnDeviation(column, 0.0, 0.0, tolerance, mismatches == 0, mismatches))
            continue
        a, b = a.to_numpy(dtype=float), b.to_numpy(dtype=float)
        diff = np.abs(a - b)
        scale = np.maximum(np.abs(a), np.abs(b))
        rel = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
        if "se" in tolerance:
            se_column = tolerance["se"]
            if se_column not in table_a.columns:
                raise ConfigError(f"Tolerance for {column!r} names unknown se column {se_column!r}")
            se = np.hypot(frame_a[se_column].to_numpy(dtype=float), frame_b[se_column].to_numpy(dtype=float))
            ok = diff <= float(tolerance.get("k", 4.0)) * se
        elif "rel" in tolerance:
            ok = rel <= float(tolerance["rel"])
        else:
            ok = diff <= float(tolerance.get("abs", 0.0))
        deviations.append(ColumnDeviation(
            column,
            float(diff.max()) if diff.size else 0.0,
            float(rel.max()) if rel.size else 0.0,
            tolerance,
            bool(ok.all()),
            int((~ok).sum())
        ))
    return CompareReport(deviations)


def main():
    """Example usage of the lab."""
    print("=" * 60)
    print("Lab demo: mutual information at three scales")
    print("=" * 60)
    config = ExperimentConfig("mutual-info", {"calcs": ["AUN"], "mu": [0.0], "sigma_points": 3})
    table = run(config)
    print(table.csv_text())
    print(f"config hash: {config.config_hash}")


if __name__ == "__main__":
    main()
