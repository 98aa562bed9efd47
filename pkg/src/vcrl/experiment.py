"""Experiment plans: flat-file configs, seeded multi-variant execution,
and aggregate reporting (IQM / optimality gap / Q-error comparisons).

Config files are flat `key = value` text; `#` starts a comment.  Keys are
either plan-level (env, variant, seeds, out, workers) or overrides for
AgentConfig fields.  Unknown keys are hard errors.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from . import evaluation
from .agent import AgentConfig, AugmentSpec, run_training
from .losses import VARIANTS


class ConfigError(ValueError):
    pass


PLAN_KEYS = ("env", "variant", "seeds", "out", "workers")

# config key -> (AgentConfig field, python type); augment fields are flattened
_AGENT_FIELDS = {f.name: f.type for f in dataclasses.fields(AgentConfig)
                 if f.name not in ("env", "variant", "seed", "augment")}
KEY_TO_FIELD = {name.lower(): name for name in _AGENT_FIELDS}
AUGMENT_KEYS = {"augment_enabled": "enabled", "shift_pixels": "shift_pixels",
                "intensity_scale": "intensity_scale"}


@dataclass
class ExperimentPlan:
    envs: list[str]
    variants: list[str]
    seeds: list[int]
    output_root: str
    workers: int = 1
    overrides: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.envs:
            raise ConfigError("plan needs at least one env")
        if not self.variants:
            raise ConfigError("plan needs at least one variant")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANTS}")
        if not self.seeds:
            raise ConfigError("plan needs at least one seed")
        if any(s < 1 for s in self.seeds):
            raise ConfigError("seeds must be >= 1")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds in plan")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def cells(self) -> list[tuple[str, str, int]]:
        return [(env, variant, seed)
                for env in self.envs for variant in self.variants for seed in self.seeds]


def _parse_value(key: str, raw: str):
    target = KEY_TO_FIELD.get(key)
    if target is not None:
        typ = _AGENT_FIELDS[target]
    elif key in AUGMENT_KEYS:
        typ = {f.name: f.type for f in dataclasses.fields(AugmentSpec)}[AUGMENT_KEYS[key]]
    else:
        raise ConfigError(f"unknown config key {key!r}")
    typ = str(typ)
    try:
        if "bool" in typ:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentPlan:
    """Parse flat `key = value` config text into a fully-resolved plan."""
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                pairs[key.lower()] = str(value)

    if "env" not in pairs:
        raise ConfigError("config must set 'env'")
    envs_list = [e.strip() for e in pairs.pop("env").split(",") if e.strip()]
    variants = [v.strip() for v in pairs.pop("variant", "VCR").split(",") if v.strip()]
    seeds = _parse_seeds(pairs.pop("seeds", "1"))
    output_root = pairs.pop("out", "runs")
    workers_raw = pairs.pop("workers", "1")
    try:
        workers = int(workers_raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for 'workers': {workers_raw!r}") from exc

    agent_overrides: dict[str, str] = {}
    for key, value in sorted(pairs.items()):
        _parse_value(key, value)  # validate key + type now
        agent_overrides[key] = value
    return ExperimentPlan(envs_list, variants, seeds, output_root, workers, agent_overrides)


def _parse_seeds(raw: str) -> list[int]:
    try:
        if "," in raw:
            return [int(s.strip()) for s in raw.split(",") if s.strip()]
        count = int(raw)
        return list(range(1, count + 1))
    except ValueError as exc:
        raise ConfigError(f"bad value for 'seeds': {raw!r}") from exc


def serialize_plan(plan: ExperimentPlan) -> str:
    """Inverse of parse_config: parse_config(serialize_plan(p)) == p."""
    lines = [
        f"env = {','.join(plan.envs)}",
        f"variant = {','.join(plan.variants)}",
        f"seeds = {','.join(str(s) for s in plan.seeds)}",
        f"out = {plan.output_root}",
        f"workers = {plan.workers}",
    ]
    lines.extend(f"{key} = {value}" for key, value in sorted(plan.overrides.items()))
    return "\n".join(lines) + "\n"


# Per-environment reinterpretation of the full-scale defaults.
ENV_DEFAULTS: dict[str, dict] = {
    "chain": {},
    "pixelgrid": {},
    "pointmass": {
        "K": 3,
        "n": 1,
        "lambda_vcr": 1.0,
        "tau_encoder": 0.05,
        "tau_value": 0.01,
        "updates_per_step": 1,
        "total_env_steps": 50_000,
    },
}


def resolve_agent_config(env: str, variant: str, seed: int,
                         overrides: dict[str, str]) -> AgentConfig:
    if env not in ENV_DEFAULTS:
        raise ConfigError(f"unknown env {env!r}")
    kwargs = dict(ENV_DEFAULTS[env])
    augment_kwargs: dict[str, object] = {}
    for key, raw in overrides.items():
        value = _parse_value(key, raw)
        if key in AUGMENT_KEYS:
            augment_kwargs[AUGMENT_KEYS[key]] = value
        else:
            kwargs[KEY_TO_FIELD[key]] = value
    if augment_kwargs:
        kwargs["augment"] = AugmentSpec(**augment_kwargs)
    try:
        return AgentConfig(env=env, variant=variant, seed=seed, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cell_dir_name(env: str, variant: str, seed: int) -> str:
    return f"{env}__{variant}__seed{seed}"


def run_cell(env: str, variant: str, seed: int, overrides: dict[str, str],
             output_root: str) -> dict:
    """Execute one (env, variant, seed) cell; failures are captured, not raised."""
    run_dir = os.path.join(output_root, cell_dir_name(env, variant, seed))
    result = {"env": env, "variant": variant, "seed": seed, "run_dir": run_dir,
              "status": "ok", "final_return": None, "hns": None, "error": None}
    try:
        cfg = resolve_agent_config(env, variant, seed, overrides)
        artifacts = run_training(cfg, run_dir)
        result["final_return"] = artifacts.final_return
        result["hns"] = artifacts.final_hns
    except Exception as exc:
        result["status"] = "failed"
        result["error"] = f"{type(exc).__name__}: {exc}"
        os.makedirs(run_dir, exist_ok=True)
        with open(os.path.join(run_dir, "error.txt"), "w") as fh:
            fh.write(traceback.format_exc())
    return result


def _run_cell_star(args):
    return run_cell(*args)


@dataclass
class PlanResult:
    output_root: str
    cells: list[dict]
    aggregate_rows: list[dict]
    failed: int


def run_plan(plan: ExperimentPlan, progress=None) -> PlanResult:
    """Execute every cell (optionally in parallel worker processes), then
    write the aggregate report and per-env Q-error comparisons."""
    os.makedirs(plan.output_root, exist_ok=True)
    with open(os.path.join(plan.output_root, "plan.txt"), "w") as fh:
        fh.write(serialize_plan(plan))

    tasks = [(env, variant, seed, plan.overrides, plan.output_root)
             for env, variant, seed in plan.cells]
    results: list[dict] = []
    if plan.workers == 1:
        for task in tasks:
            results.append(_run_cell_star(task))
            if progress:
                progress(results[-1])
    else:
        ctx = get_context("spawn")
        with ProcessPoolExecutor(max_workers=plan.workers, mp_context=ctx) as pool:
            for res in pool.map(_run_cell_star, tasks):
                results.append(res)
                if progress:
                    progress(res)

    ok_dirs = [r["run_dir"] for r in results if r["status"] == "ok"]
    rows, agg_errors = aggregate_runs(ok_dirs)
    write_aggregate(plan.output_root, rows, agg_errors)

    for env in plan.envs:
        env_dirs = [r["run_dir"] for r in results
                    if r["status"] == "ok" and r["env"] == env]
        if env_dirs:
            qrows, qerrors = emit_qerror_comparison(env_dirs)
            write_qerror_comparison(
                os.path.join(plan.output_root, f"qerror_comparison__{env}.csv"),
                qrows, qerrors)

    failed = sum(1 for r in results if r["status"] != "ok")
    return PlanResult(plan.output_root, results, rows, failed)


# --- aggregation ------------------------------------------------------------


def read_run_config(run_dir: str) -> AgentConfig:
    with open(os.path.join(run_dir, "config.json")) as fh:
        raw = json.load(fh)
    return AgentConfig(**raw)


def read_final_return(run_dir: str) -> float:
    path = os.path.join(run_dir, "metrics.csv")
    final = None
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["kind"] == "eval":
                final = float(row["eval_return"])
    if final is None:
        raise ValueError(f"{run_dir}: no evaluation rows in metrics.csv")
    return final


def aggregate_runs(run_dirs) -> tuple[list[dict], list[str]]:
    """Group runs by (env, variant) and compute IQM / optimality gap over
    the per-seed normalized final scores."""
    groups: dict[tuple[str, str], list[tuple[int, float, object]]] = {}
    errors: list[str] = []
    for run_dir in run_dirs:
        if not os.path.isdir(run_dir):
            errors.append(f"{run_dir}: missing run directory")
            continue
        try:
            cfg = read_run_config(run_dir)
            score = read_final_return(run_dir)
        except Exception as exc:
            errors.append(f"{run_dir}: {type(exc).__name__}: {exc}")
            continue
        spec = cfg.make_env(0).spec
        groups.setdefault((cfg.env, cfg.variant), []).append((cfg.seed, score, spec))

    rows = []
    for (env, variant), entries in sorted(groups.items()):
        entries.sort(key=lambda e: e[0])
        scores = [score for _, score, _ in entries]
        spec = entries[0][2]
        normalized = [evaluation.hns(s, spec.random_score, spec.optimal_score)
                      for s in scores]
        rows.append({
            "env": env,
            "variant": variant,
            "num_seeds": len(scores),
            "iqm_hns": evaluation.iqm(normalized),
            "optimality_gap": evaluation.optimality_gap(normalized),
            "median_return": float(np.median(scores)),
            "mean_return": float(np.mean(scores)),
        })
    return rows, errors


AGGREGATE_HEADER = ["env", "variant", "num_seeds", "iqm_hns", "optimality_gap",
                    "median_return", "mean_return"]


def write_aggregate(out_dir: str, rows: list[dict], errors: list[str]):
    csv_path = os.path.join(out_dir, "aggregate.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_HEADER)
        for row in rows:
            writer.writerow([row["env"], row["variant"], row["num_seeds"],
                             repr(row["iqm_hns"]), repr(row["optimality_gap"]),
                             repr(row["median_return"]), repr(row["mean_return"])])
    txt_path = os.path.join(out_dir, "aggregate.txt")
    with open(txt_path, "w") as fh:
        fh.write(f"{'env':<12} {'variant':<9} {'seeds':>5} {'IQM-HNS':>10} "
                 f"{'opt.gap':>10} {'median':>10} {'mean':>10}\n")
        for row in rows:
            fh.write(f"{row['env']:<12} {row['variant']:<9} {row['num_seeds']:>5} "
                     f"{row['iqm_hns']:>10.4f} {row['optimality_gap']:>10.4f} "
                     f"{row['median_return']:>10.4f} {row['mean_return']:>10.4f}\n")
        if errors:
            fh.write("\nerrors:\n")
            for err in errors:
                fh.write(f"  {err}\n")
    return csv_path, txt_path


def read_aggregate_csv(path: str) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "env": row["env"], "variant": row["variant"],
                "num_seeds": int(row["num_seeds"]),
                "iqm_hns": float(row["iqm_hns"]),
                "optimality_gap": float(row["optimality_gap"]),
                "median_return": float(row["median_return"]),
                "mean_return": float(row["mean_return"]),
            })
    return rows


# --- Q-error comparison ------------------------------------------------------


def emit_qerror_comparison(run_dirs) -> tuple[list[dict], list[str]]:
    """Per-step mean/std of the probe Q-error per variant across seeds.

    Runs must share the probe schedule; missing directories are reported in
    the errors list rather than silently dropped.
    """
    by_variant: dict[str, list[np.ndarray]] = {}
    steps_ref: list[int] | None = None
    errors: list[str] = []
    for run_dir in run_dirs:
        qpath = os.path.join(run_dir, "qerror.csv")
        if not os.path.isfile(qpath):
            errors.append(f"{run_dir}: missing qerror.csv")
            continue
        cfg = read_run_config(run_dir)
        steps, values = [], []
        with open(qpath, newline="") as fh:
            for row in csv.DictReader(fh):
                steps.append(int(row["step"]))
                values.append(float(row["q_error"]))
        if steps_ref is None:
            steps_ref = steps
        elif steps != steps_ref:
            raise ValueError(f"{run_dir}: probe schedule differs from the first run")
        by_variant.setdefault(cfg.variant, []).append(np.array(values))

    rows = []
    for variant in sorted(by_variant):
        stackv = np.stack(by_variant[variant])  # (seeds, probes)
        mean = stackv.mean(axis=0)
        std = stackv.std(axis=0)  # population convention
        for i, step in enumerate(steps_ref):
            rows.append({"step": step, "variant": variant,
                         "mean": float(mean[i]), "std": float(std[i])})
    return rows, errors


def write_qerror_comparison(path: str, rows: list[dict], errors: list[str]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "variant", "mean", "std"])
        for row in rows:
            writer.writerow([row["step"], row["variant"], repr(row["mean"]), repr(row["std"])])
        for err in errors:
            fh.write(f"# ERROR: {err}\n")
    return path
