"""Pipeline CLI: generate -> train -> evaluate -> scenarios -> optimize ->
report -> export-map.

Configuration is a single YAML file; command-line flags override file
values and the effective configuration is echoed into a manifest written
next to every artifact. Outputs land in a temporary sibling first and are
promoted atomically.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import sys
import time
from pathlib import Path

import click
import numpy as np
import yaml

from zonechoice import __version__
from zonechoice.choice import (
    FollowModel,
    FrequencyModel,
    LogitChoiceModel,
    make_model,
)
from zonechoice.dataio import (
    load_district,
    load_zoning,
    save_district,
    save_zoning,
)
from zonechoice.district import DomainError, FeasibilityParams
from zonechoice.evaluation import evaluate
from zonechoice.optimizer import SolverConfig, local_search_optimize
from zonechoice.report import (
    attendance_matrix,
    export_geojson,
    rezone_report,
    save_geojson,
    save_matrix_csv,
)
from zonechoice.scenario import load_table, realize, sample_scenarios, save_table
from zonechoice.synth import ConfigError, GenParams, generate_district

METHOD_MODELS = {"R": "follow", "FR": "frequency", "RWC": "logit"}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file must be a mapping: {path}")
    return data


def _effective(config: dict, section: str, overrides: dict) -> dict:
    merged = dict(config.get(section, {}) or {})
    for k, v in overrides.items():
        if v is not None:
            merged[k] = v
    return merged


def _config_hash(effective: dict) -> str:
    blob = json.dumps(effective, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_manifest(target: Path, command: str, effective: dict,
                    inputs: dict, t_start: float) -> None:
    manifest = {
        "command": command,
        "config": effective,
        "config_hash": _config_hash(effective),
        "inputs": inputs,
        "version": __version__,
        "wall_time_s": round(time.time() - t_start, 3),
    }
    path = target.with_name(target.name + ".manifest.json")
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1))


class _Promote:
    """Write into <target>.partial, then rename into place on success."""

    def __init__(self, target: str | Path):
        self.target = Path(target)
        self.tmp = self.target.with_name(self.target.name + ".partial")

    def __enter__(self) -> Path:
        if self.tmp.exists():
            shutil.rmtree(self.tmp) if self.tmp.is_dir() else self.tmp.unlink()
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None and self.tmp.exists():
            if self.target.exists():
                if self.target.is_dir():
                    shutil.rmtree(self.target)
                else:
                    self.target.unlink()
            os.replace(self.tmp, self.target)
        elif self.tmp.exists():
            shutil.rmtree(self.tmp) if self.tmp.is_dir() else self.tmp.unlink()
        return False


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise ConfigError(f"missing required input: {what}")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {path}")
    return p


def _load_model(kind: str, district, model_file: str | None):
    if kind == "logit":
        p = _require(model_file, "trained model file (--model-file)")
        return LogitChoiceModel.load(p, district)
    return make_model(kind, district)


@click.group()
@click.option("--config", "-c", type=str, default=None, help="YAML config file.")
@click.option("--workers", type=int, default=None,
              help="Global parallelism cap (also ZONECHOICE_WORKERS).")
@click.pass_context
def main(ctx, config, workers):
    """School rezoning pipeline under student school choice."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = _load_config(config)
    ctx.obj["workers"] = workers or int(os.environ.get("ZONECHOICE_WORKERS", "1"))


@main.command()
@click.option("--out", type=str, required=True, help="District directory to write.")
@click.option("--blocks", type=int, default=None)
@click.option("--schools", type=int, default=None)
@click.option("--magnets", type=int, default=None)
@click.option("--students", type=int, default=None)
@click.option("--choice-zones", type=int, default=None)
@click.option("--follow-rate", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def generate(ctx, out, blocks, schools, magnets, students, choice_zones,
             follow_rate, seed):
    """Generate a synthetic district."""
    t0 = time.time()
    eff = _effective(ctx.obj["config"], "gen", {
        "n_blocks": blocks, "n_schools": schools, "n_magnets": magnets,
        "n_students": students, "n_choice_zones": choice_zones,
        "follow_rate_target": follow_rate, "seed": seed,
    })
    if "seed" not in eff:
        raise ConfigError("a seed is required for generate")
    params = GenParams(**eff)
    district = generate_district(params)
    with _Promote(out) as tmp:
        save_district(district, tmp)
    _write_manifest(Path(out), "generate", eff,
                    {"district_fingerprint": district.fingerprint()}, t0)
    click.echo(f"wrote district ({district.num_blocks} blocks, "
               f"{district.num_schools} schools, {district.num_students} "
               f"students) to {out}")


@main.command()
@click.option("--district", "district_dir", type=str, required=True)
@click.option("--out", type=str, required=True, help="Model file to write (.json).")
@click.option("--max-iter", type=int, default=None)
@click.option("--l2", type=float, default=None)
@click.pass_context
def train(ctx, district_dir, out, max_iter, l2):
    """Train the multinomial-logit choice model."""
    t0 = time.time()
    eff = _effective(ctx.obj["config"], "train",
                     {"max_iter": max_iter, "l2": l2})
    district = load_district(_require(district_dir, "district directory"))
    model = LogitChoiceModel(district)
    if "max_iter" in eff:
        model.estimator.max_iter = int(eff["max_iter"])
    if "l2" in eff:
        model.estimator.l2 = float(eff["l2"])
    model.fit()
    with _Promote(out) as tmp:
        model.save(tmp)
    _write_manifest(Path(out), "train", eff,
                    {"district": district_dir,
                     "district_fingerprint": district.fingerprint(),
                     "model_fingerprint": model.fingerprint()}, t0)
    click.echo(f"wrote model to {out}")


@main.command("evaluate")
@click.option("--district", "district_dir", type=str, required=True)
@click.option("--model", "model_kind",
              type=click.Choice(["follow", "frequency", "logit"]), default="logit")
@click.option("--folds", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, required=True, help="Metrics CSV to write.")
@click.pass_context
def evaluate_cmd(ctx, district_dir, model_kind, folds, seed, out):
    """Cross-validated choice-model metrics."""
    t0 = time.time()
    eff = _effective(ctx.obj["config"], "eval", {"folds": folds, "seed": seed})
    folds = int(eff.get("folds", 10))
    seed = eff.get("seed")
    if seed is None:
        raise ConfigError("a seed is required for evaluate")
    district = load_district(_require(district_dir, "district directory"))
    model = make_model(model_kind, district)
    report = evaluate(model, district, folds=folds, seed=int(seed))
    with _Promote(out) as tmp:
        report.to_csv(tmp)
    _write_manifest(Path(out), "evaluate", eff,
                    {"district": district_dir, "model": model_kind}, t0)
    if report.missing_classes:
        click.echo(f"classes absent from training folds: {report.missing_classes}")
    click.echo(f"{model_kind}: accuracy={report.accuracy:.4f} "
               f"macro_f1={report.macro_f1:.4f} -> {out}")


@main.command()
@click.option("--district", "district_dir", type=str, required=True)
@click.option("--model", "model_kind",
              type=click.Choice(["follow", "frequency", "logit"]), required=True)
@click.option("--model-file", type=str, default=None,
              help="Trained model file (required for logit).")
@click.option("--scenarios", "-I", "n_scenarios", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, required=True, help="Table file to write (.npz).")
@click.pass_context
def scenarios(ctx, district_dir, model_kind, model_file, n_scenarios, seed, out):
    """Sample an SAA scenario table from a choice model."""
    t0 = time.time()
    eff = _effective(ctx.obj["config"], "scenarios",
                     {"scenarios": n_scenarios, "seed": seed})
    I = int(eff.get("scenarios", 30))
    seed = eff.get("seed")
    if seed is None:
        raise ConfigError("a seed is required for scenarios")
    district = load_district(_require(district_dir, "district directory"))
    model = _load_model(model_kind, district, model_file)
    table = sample_scenarios(model, district, I, int(seed))
    with _Promote(out) as tmp:
        save_table(table, tmp)
        staged = Path(str(tmp) + ".npz")
        if staged.exists():  # numpy appends .npz when missing
            staged.rename(tmp)
    _write_manifest(Path(out), "scenarios", eff,
                    {"district": district_dir, "model": model_kind,
                     "model_fingerprint": table.model_fingerprint}, t0)
    click.echo(f"wrote {I} scenarios to {out}")


@main.command()
@click.option("--district", "district_dir", type=str, required=True)
@click.option("--method", type=click.Choice(["R", "FR", "RWC"]), required=True)
@click.option("--table", "table_file", type=str, default=None,
              help="Reuse a sampled scenario table.")
@click.option("--model-file", type=str, default=None,
              help="Trained model file (required for RWC without --table).")
@click.option("--scenarios", "-I", "n_scenarios", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--time-limit", type=float, default=None)
@click.option("--restarts", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=str, required=True, help="Output directory.")
@click.pass_context
def optimize(ctx, district_dir, method, table_file, model_file, n_scenarios,
             alpha, tau, time_limit, restarts, max_steps, seed, out):
    """Search for a feasible zoning minimizing expected dissimilarity."""
    t0 = time.time()
    eff = _effective(ctx.obj["config"], "solver", {
        "alpha": alpha, "tau": tau, "time_limit": time_limit,
        "restarts": restarts, "max_steps": max_steps, "seed": seed,
        "scenarios": n_scenarios, "method": method,
    })
    seed = eff.get("seed")
    if seed is None:
        raise ConfigError("a seed is required for optimize")
    district = load_district(_require(district_dir, "district directory"))

    if table_file:
        table = load_table(_require(table_file, "scenario table"))
        if table.district_fingerprint != district.fingerprint():
            raise ConfigError("scenario table does not match this district")
    else:
        model = _load_model(METHOD_MODELS[method], district, model_file)
        I = int(eff.get("scenarios", 30)) if method != "R" else 1
        table = sample_scenarios(model, district, I, int(seed))

    config = SolverConfig(
        params=FeasibilityParams(
            alpha=float(eff.get("alpha", 0.15)), tau=float(eff.get("tau", 0.5))
        ),
        time_limit=float(eff.get("time_limit", 600.0)),
        restarts=int(eff.get("restarts", 3)),
        initial_temperature=float(eff.get("initial_temperature", 0.02)),
        cooling=float(eff.get("cooling", 0.95)),
        moves_per_temperature=int(eff.get("moves_per_temperature", 1500)),
        min_temperature=float(eff.get("min_temperature", 1e-4)),
        max_steps=eff.get("max_steps"),
        seed=int(seed),
        method=method,
    )
    result = local_search_optimize(district, table, config)

    out_dir = Path(out)
    with _Promote(out_dir) as tmp:
        tmp.mkdir(parents=True)
        save_zoning(result.zoning, tmp / "zoning.csv")
        metrics = {
            "method": method,
            "objective": result.objective,
            "per_scenario": [float(d) for d in result.per_scenario],
            "standard_error": result.std_error,
            "alpha_used": result.alpha_used,
            "feasible": bool(result.certificate.ok),
            "stats": result.stats,
            "district_fingerprint": district.fingerprint(),
        }
        (tmp / "metrics.json").write_text(
            json.dumps(metrics, sort_keys=True, indent=1)
        )
        log = [
            f"method={method} seed={seed} alpha_used={result.alpha_used}",
            f"steps={result.stats['steps']} attempts={result.stats['move_attempts']} "
            f"accepted={result.stats['accepted']}",
            f"status_quo={result.stats['status_quo_objective']:.6f} "
            f"best={result.objective:.6f}",
        ]
        (tmp / "run.log").write_text("\n".join(log) + "\n")
    _write_manifest(out_dir, "optimize", eff,
                    {"district": district_dir,
                     "district_fingerprint": district.fingerprint()}, t0)
    click.echo(f"{method}: objective {result.objective:.6f} "
               f"(status quo {result.stats['status_quo_objective']:.6f}) -> {out}")


@main.command()
@click.option("--district", "district_dir", type=str, required=True)
@click.option("--table", "table_file", type=str, required=True)
@click.option("--zoning", "zoning_file", type=str, required=True)
@click.option("--baseline", "baseline_file", type=str, default=None,
              help="Reference zoning (default: status quo).")
@click.option("--method", type=str, default="")
@click.option("--out", type=str, required=True, help="Output directory.")
@click.pass_context
def report(ctx, district_dir, table_file, zoning_file, baseline_file, method, out):
    """Rezoning statistics and the zoned-vs-attended matrix."""
    t0 = time.time()
    eff = _effective(ctx.obj["config"], "report", {"method": method or None})
    district = load_district(_require(district_dir, "district directory"))
    table = load_table(_require(table_file, "scenario table"))
    if table.district_fingerprint != district.fingerprint():
        raise ConfigError("scenario table does not match this district")
    new = load_zoning(_require(zoning_file, "zoning file"))
    if set(new.assignment) != set(district.block_ids):
        raise ConfigError("zoning file does not cover this district's blocks")
    old = (
        load_zoning(_require(baseline_file, "baseline zoning"))
        if baseline_file
        else district.status_quo_zoning()
    )

    rep = rezone_report(old, new, table, district)
    out_dir = Path(out)
    with _Promote(out_dir) as tmp:
        tmp.mkdir(parents=True)
        rep.to_csv(tmp / "report.csv", method=method, scenarios=table.num_scenarios)
        matrix = attendance_matrix(
            district, new, realize(new, table, 0, district)
        )
        save_matrix_csv(matrix, district, tmp / "attendance_matrix.csv")
        changes = {
            sid: round(delta, 4) for sid, delta in rep.enrollment_change.items()
        }
        (tmp / "enrollment_change.json").write_text(
            json.dumps(changes, sort_keys=True, indent=1)
        )
    _write_manifest(out_dir, "report", eff,
                    {"district": district_dir, "zoning": zoning_file}, t0)
    click.echo(f"dissimilarity {rep.dissimilarity_mean:.4f}, "
               f"{rep.rezoned_students} students rezoned -> {out}")


@main.command("export-map")
@click.option("--district", "district_dir", type=str, required=True)
@click.option("--zoning", "zoning_file", type=str, required=True)
@click.option("--overlay", type=click.Choice(["none", "ses", "opt-out-rate"]),
              default="none")
@click.option("--table", "table_file", type=str, default=None,
              help="Needed for the opt-out-rate overlay.")
@click.option("--out", type=str, required=True, help="GeoJSON file to write.")
@click.pass_context
def export_map(ctx, district_dir, zoning_file, overlay, table_file, out):
    """Export the zoning as a GeoJSON map."""
    t0 = time.time()
    district = load_district(_require(district_dir, "district directory"))
    zoning = load_zoning(_require(zoning_file, "zoning file"))
    table = None
    if overlay == "opt-out-rate":
        table = load_table(_require(table_file, "scenario table (--table)"))
        if table.district_fingerprint != district.fingerprint():
            raise ConfigError("scenario table does not match this district")
    collection = export_geojson(district, zoning, overlay=overlay, table=table)
    with _Promote(out) as tmp:
        save_geojson(collection, tmp)
    _write_manifest(Path(out), "export-map", {"overlay": overlay},
                    {"district": district_dir, "zoning": zoning_file}, t0)
    click.echo(f"wrote {len(collection['features'])} features to {out}")


def entrypoint(argv=None) -> int:
    try:
        main(args=argv, standalone_mode=False, obj={})
        return 0
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except click.ClickException as exc:
        print(f"error: {exc.format_message()}", file=sys.stderr)
        return exc.exit_code or 2
    except click.exceptions.Abort:
        return 130


if __name__ == "__main__":
    sys.exit(entrypoint())
