"""Config loading, run orchestration and report serialization."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from .experiments import ExperimentConfig, ExperimentReport, run_experiment
from .market import Matching
from .model import MarketRealization, ModelConfig

ENV_PREFIX = "STABLEMARKET_"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VIOLATION = 3
EXIT_IO = 4

CSV_COLUMNS: dict[str, tuple[str, ...]] = {
    "simulate": ("college", "quota", "mean_share", "se_share"),
    "audit-bdc": (
        "n", "m", "sigma", "trials", "max_k",
        "max_sosm_max_per_college", "max_slack_sosm_max_per_college",
        "max_sosm_total_changed", "max_slack_sosm_total_changed",
        "max_sosm_cosm_gap", "max_slack_sosm_cosm_gap",
        "max_cross_max_per_college", "max_slack_cross_max_per_college",
        "violations",
    ),
    "audit-equilibration": (
        "n", "m", "sigma", "trials", "max_k", "max_N1", "max_slack_N1", "max_N0", "max_slack_N0",
        "max_changed", "max_slack_changed", "equal_share", "max_iterations", "violations",
    ),
    "concentration": (
        "n", "t", "empirical_tail", "bound", "C", "a", "b", "n_Z", "sigma", "rms", "target",
        "target_se", "bound_holds",
    ),
    "estimators": (
        "n", "replications", "median_cdf_error", "median_rho_error", "median_kernel_error", "median_rho_hat",
    ),
    "rankdiff": (
        "n", "m", "sigma", "mean_h", "se_h", "max_h", "c", "bound", "premise_ok", "nontrivial", "holds",
        "nondecreasing_in_n",
    ),
    "exchangeability": ("college", "ks_statistic", "p_value", "passes"),
    "example-fixtures": (
        "case", "quotas", "sosm_base", "sosm_perturbed", "changed_students", "max_changes_per_college", "k",
        "audit_violations", "matches_reference",
    ),
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# ---------------------------------------------------------------------------
# schema


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _optional(conv):
    return lambda v: None if v is None else conv(v)


def _seq(conv):
    def inner(v):
        if not isinstance(v, (list, tuple)):
            raise TypeError("expected a list")
        return tuple(conv(x) for x in v)

    return inner


MODEL_SCHEMA: dict[str, Callable] = {
    "n": _int, "m": _int, "quotas": _optional(_seq(_int)), "capacity_ratio": _float,
    "sigma": _optional(_float), "sigma_kappa": _float, "sigma_a": _float, "sigma_b": _float,
    "lambda_spec": _str, "utility": _str, "outside_utility": _float, "eta_dist": _str, "eta_scale": _float,
    "eps_dist": _str, "eps_scale": _float, "threshold": _str, "threshold_p": _float, "x_dim": _int,
    "z_dim": _int, "seed": _int,
}

EXPERIMENT_SCHEMA: dict[str, Callable] = {
    "kind": _str, "replications": _int, "target_replications": _optional(_int),
    "n_grid": _seq(_int), "m_grid": _seq(_int), "sigma_grid": _seq(_optional(_float)), "t_grid": _seq(_float),
    "statistic": _str, "college": _int, "window_share": _float, "college_proposing": _bool,
    "probes": _seq(_float), "min_college_prob": _float, "oracle_multiplier": _int, "kernel": _str,
    "ks_alpha": _float, "threads": _int,
}

OUTPUT_SCHEMA: dict[str, tuple[str, Callable]] = {"dir": ("output_dir", _str), "format": ("output_format", _str)}


def _convert(section: dict, schema: dict, where: str, errors: list[str]) -> dict:
    out = {}
    for key, value in section.items():
        if key not in schema:
            errors.append(f"{where}{key}: unknown key")
            continue
        try:
            out[key] = schema[key](value)
        except (TypeError, ValueError) as exc:
            errors.append(f"{where}{key}: {exc}")
    return out


def config_from_dict(data: Any) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a mapping"])
    errors: list[str] = []
    data = dict(data)
    model_section = data.pop("model", None)
    output_section = data.pop("output", {}) or {}
    if not isinstance(model_section, dict):
        raise ConfigError(["model: required section with at least n and m"])
    model_kw = _convert(model_section, MODEL_SCHEMA, "model.", errors)
    exp_kw = _convert(data, EXPERIMENT_SCHEMA, "", errors)
    if not isinstance(output_section, dict):
        errors.append("output: expected a mapping")
    else:
        for key, value in output_section.items():
            if key not in OUTPUT_SCHEMA:
                errors.append(f"output.{key}: unknown key")
                continue
            name, conv = OUTPUT_SCHEMA[key]
            try:
                exp_kw[name] = conv(value)
            except TypeError as exc:
                errors.append(f"output.{key}: {exc}")
    for required in ("n", "m"):
        if required not in model_section:
            errors.append(f"model.{required}: required")
    if errors:
        raise ConfigError(errors)
    try:
        model = ModelConfig(**model_kw)
    except ValueError as exc:
        raise ConfigError([f"model: {exc}"]) from None
    try:
        return ExperimentConfig(model=model, **exp_kw)
    except ValueError as exc:
        raise ConfigError(str(exc).split("; ")) from None


def config_to_dict(config: ExperimentConfig) -> dict:
    model = {}
    for f in dataclasses.fields(ModelConfig):
        v = getattr(config.model, f.name)
        model[f.name] = list(v) if isinstance(v, tuple) else v
    out: dict[str, Any] = {"model": model, "output": {"dir": config.output_dir, "format": config.output_format}}
    for name in EXPERIMENT_SCHEMA:
        v = getattr(config, name)
        out[name] = list(v) if isinstance(v, tuple) else v
    return out


def canonical_text(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=True, default_flow_style=False, allow_unicode=True)


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(config).encode("utf-8")).hexdigest()


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark is not None else ""
        raise ConfigError([f"{where}{getattr(exc, 'problem', None) or exc}"]) from None
    return config_from_dict(data)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read, validate and default-fill a YAML experiment config."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text)


def apply_overrides(config: ExperimentConfig, env: dict[str, str] | None = None, **flags) -> ExperimentConfig:
    """Layer ``STABLEMARKET_*`` environment values, then explicit flags, over ``config``.

    Recognised names: SEED, REPLICATIONS, THREADS, OUT, FORMAT.
    """
    env = os.environ if env is None else env
    values: dict[str, Any] = {}
    errors = []
    for name, conv in (("SEED", int), ("REPLICATIONS", int), ("THREADS", int), ("OUT", str), ("FORMAT", str)):
        raw = env.get(ENV_PREFIX + name)
        if raw is not None:
            try:
                values[name.lower()] = conv(raw)
            except ValueError:
                errors.append(f"{ENV_PREFIX}{name}: cannot parse {raw!r}")
    if errors:
        raise ConfigError(errors)
    values.update({k: v for k, v in flags.items() if v is not None})
    changes: dict[str, Any] = {}
    if "seed" in values:
        try:
            changes["model"] = config.model.with_(seed=values["seed"])
        except ValueError as exc:
            raise ConfigError([f"seed: {exc}"]) from None
    for key, field_name in (("replications", "replications"), ("threads", "threads"), ("out", "output_dir"),
                            ("format", "output_format")):
        if key in values:
            changes[field_name] = values[key]
    if not changes:
        return config
    try:
        return config.with_(**changes)
    except ValueError as exc:
        raise ConfigError(str(exc).split("; ")) from None


# ---------------------------------------------------------------------------
# serialization


def _plain(v: Any) -> Any:
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    return v


def _csv_cell(v: Any) -> str:
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return " ".join(_csv_cell(x) for x in v)
    return str(v)


def summary_csv(report: ExperimentReport) -> str:
    columns = CSV_COLUMNS[report.kind]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in report.summary:
        writer.writerow([_csv_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def records_jsonl(report: ExperimentReport) -> str:
    return "".join(json.dumps(_plain(rec), allow_nan=False) + "\n" for rec in report.records)


def info_json(report: ExperimentReport) -> str:
    body = {"kind": report.kind, "violations": report.violations, "info": report.info}
    return json.dumps(_plain(body), indent=2, sort_keys=True, allow_nan=False) + "\n"


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    artifact_version: str
    kind: str
    started_at: str
    finished_at: str
    runtime_s: float
    violations: int
    files: list[dict[str, Any]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"


def _write_new(path: Path, text: str) -> dict[str, Any]:
    data = text.encode("utf-8")
    with open(path, "xb") as fh:  # never overwrite an earlier run's output
        fh.write(data)
    return {"name": path.name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}


def write_report(report: ExperimentReport, out_dir: str | os.PathLike, fmt: str = "both") -> list[dict[str, Any]]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.kind.replace("-", "_")
    files = []
    if fmt in ("csv", "both"):
        files.append(_write_new(out / f"{stem}_summary.csv", summary_csv(report)))
    if fmt in ("jsonl", "both"):
        files.append(_write_new(out / f"{stem}_records.jsonl", records_jsonl(report)))
    files.append(_write_new(out / f"{stem}_info.json", info_json(report)))
    return files


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run(config: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> tuple[RunManifest, ExperimentReport]:
    """Run the configured experiment and write its outputs plus ``manifest.json``."""
    out = Path(config.output_dir if out_dir is None else out_dir)
    started = _now()
    t0 = time.perf_counter()
    report = run_experiment(config)
    out.mkdir(parents=True, exist_ok=True)
    files = [_write_new(out / "config.yaml", canonical_text(config))]
    files += write_report(report, out, config.output_format)
    manifest = RunManifest(
        config_hash=config_hash(config),
        seed=config.model.seed,
        artifact_version=__version__,
        kind=config.kind,
        started_at=started,
        finished_at=_now(),
        runtime_s=round(time.perf_counter() - t0, 3),
        violations=report.violations,
        files=files,
    )
    _write_new(out / "manifest.json", manifest.to_json())
    return manifest, report


# ---------------------------------------------------------------------------
# realizations and matchings


def save_realization(path: str | os.PathLike, real: MarketRealization) -> None:
    arrays = {f.name: np.asarray(getattr(real, f.name)) for f in dataclasses.fields(real)}
    np.savez(path, **arrays)


def load_realization(path: str | os.PathLike) -> MarketRealization:
    with np.load(path) as data:
        kw = {k: data[k] for k in data.files}
    kw["sigma"] = float(kw["sigma"])
    return MarketRealization(**kw)


def matching_to_json(matching: Matching) -> str:
    return json.dumps({"m": matching.m, "assignment": matching.assignment.tolist()})


def matching_from_json(text: str) -> Matching:
    data = json.loads(text)
    return Matching(np.asarray(data["assignment"], dtype=np.int64), int(data["m"]))
