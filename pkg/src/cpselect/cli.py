"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 infeasible experiment, 3 I/O error.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import harness
from .allocator import AllocPolicy, PowerSplit, allocate_policy, sweep_error, sweep_to_csv
from .errors import ConfigurationError, ContractError, DomainError, InfeasibleError
from .fusion import load_detections
from .scenario import dumps_scenario, generate_scenario, load_scenario, scenario_to_dict, validate_scenario
from .selector import Method, select

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3


def _emit(text: str, out: str | None) -> None:
    if out is None:
        click.echo(text, nl=False)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from exc


def _table(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def _load_scenario(path: str):
    try:
        s = load_scenario(path)
    except OSError as exc:
        raise OSError(f"cannot read scenario {path}: {exc.strerror or exc}") from exc
    problems = validate_scenario(s)
    if problems:
        raise ConfigurationError(f"{path}: " + "; ".join(f"{v.code}: {v.message}" for v in problems))
    return s


def _load_cfg(config: str | None, seed: int | None, workers: int | None = None) -> harness.ExperimentConfig:
    cfg = harness.load_config(config)
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if workers is not None:
        changes["workers"] = workers
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _parse_floats(text: str | None) -> tuple[float, ...] | None:
    if text is None:
        return None
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigurationError(f"bad number list {text!r}") from exc


def _alpha(s, text: str | None, method: str, cfg, seed: int) -> np.ndarray:
    alpha = np.zeros(s.n_candidates, dtype=bool)
    if text is not None:
        try:
            idx = [int(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise ConfigurationError(f"bad helper list {text!r}") from exc
        if any(not 0 <= i < s.n_candidates for i in idx):
            raise ConfigurationError(f"helper index out of range in {text!r}")
        alpha[idx] = True
    else:
        r = select(s, method, cfg.weights, dataclasses.replace(cfg.ga, seed=seed), seed)
        alpha[list(r.selected)] = True
    return alpha


seed_opt = click.option("--seed", type=int, default=None, help="Base seed (overrides config).")
config_opt = click.option("--config", "config", type=str, default=None,
                          help=f"Experiment config (YAML); relative names also searched in ${harness.CONFIG_DIR_ENV}.")
out_opt = click.option("--out", type=str, default=None, help="Output file (default stdout).")
fmt_opt = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)


@click.group()
def cli():
    """Helper selection, RB allocation and late-fusion experiments for cooperative perception."""


@cli.command()
@seed_opt
@config_opt
@out_opt
@click.option("--n-candidates", type=int, default=None)
@click.option("--format", "fmt", type=click.Choice(["yaml", "json"]), default="yaml", show_default=True)
def gen(seed, config, out, n_candidates, fmt):
    """Generate a random scenario file."""
    cfg = _load_cfg(config, seed)
    s = generate_scenario(cfg.seed, n_candidates, cfg.scenario)
    text = dumps_scenario(s) if fmt == "yaml" else json.dumps(scenario_to_dict(s), indent=2) + "\n"
    _emit(text, out)


@cli.command("select")
@click.argument("scenario_file")
@seed_opt
@config_opt
@out_opt
@fmt_opt
@click.option("--policy", type=click.Choice([m.value for m in Method]), default="ga", show_default=True)
def select_cmd(scenario_file, seed, config, out, fmt, policy):
    """Run step 1 (helper selection) on a scenario file."""
    cfg = _load_cfg(config, seed)
    s = _load_scenario(scenario_file)
    r = select(s, policy, cfg.weights, dataclasses.replace(cfg.ga, seed=cfg.seed), cfg.seed)
    row = {"method": r.method.value, "selected": " ".join(str(i) for i in r.selected),
           "objective": r.objective_value, "f1": r.f1, "f2": r.f2, "evaluations": r.evaluations}
    _emit(_table([row], fmt), out)


@cli.command("allocate")
@click.argument("scenario_file")
@seed_opt
@config_opt
@out_opt
@fmt_opt
@click.option("--policy", type=click.Choice([p.value for p in AllocPolicy]), default="proportional",
              show_default=True)
@click.option("--helpers", type=str, default=None, help="Comma-separated candidate indices; default runs selection.")
@click.option("--selection", type=click.Choice([m.value for m in Method]), default="ga", show_default=True)
@click.option("--power-split", type=click.Choice([p.value for p in PowerSplit]), default="equal", show_default=True)
def allocate_cmd(scenario_file, seed, config, out, fmt, policy, helpers, selection, power_split):
    """Run step 2 (RB and power allocation) on a scenario file."""
    cfg = _load_cfg(config, seed)
    s = _load_scenario(scenario_file)
    alpha = _alpha(s, helpers, selection, cfg, cfg.seed)
    plan = allocate_policy(s, alpha, policy, cfg.weights, cfg.seed, PowerSplit(power_split))
    if not plan.feasible:
        raise InfeasibleError("no selected helper meets the delay threshold")
    rows = [{"candidate": int(i), "vehicle_id": s.candidates[i].id, "rb_count": plan.rb_counts[i],
             "power_w": plan.powers[i]} for i in np.flatnonzero(alpha)]
    summary = {"throughput_bps": plan.achieved_throughput, "energy_w": plan.achieved_energy,
               "objective": plan.objective}
    if fmt == "json":
        _emit(json.dumps({"policy": plan.policy.value, "allocation": rows, **summary}, indent=2) + "\n", out)
    else:
        _emit(_table(rows, fmt) + _table([summary], fmt), out)


@cli.command()
@seed_opt
@config_opt
@out_opt
@fmt_opt
@click.option("--scenario", "scenario_file", type=str, default=None, help="Sweep a single scenario file.")
@click.option("--grid", type=str, default=None, help="Comma-separated beta parameters in [0, 1).")
@click.option("--workers", type=int, default=None)
def sweep(seed, config, out, fmt, scenario_file, grid, workers):
    """Throughput/energy versus rising packet error rate, per allocation policy."""
    cfg = _load_cfg(config, seed, workers)
    beta_grid = _parse_floats(grid)
    if beta_grid is None:
        beta_grid = cfg.beta_grid
    if scenario_file is not None:
        s = _load_scenario(scenario_file)
        alpha = _alpha(s, None, cfg.selection_method, cfg, cfg.seed)
        rows = sweep_error(s, alpha, beta_grid, cfg.weights, cfg.seed, cfg.allocation_policies)
    else:
        rows = harness.run_allocation_experiment(cfg, beta_grid).curves
    if fmt == "json":
        _emit(json.dumps([dataclasses.asdict(r) for r in rows], indent=2) + "\n", out)
    else:
        _emit(sweep_to_csv(rows), out)


@cli.command()
@seed_opt
@config_opt
@out_opt
@fmt_opt
@click.option("--scenario", "scenario_file", type=str, default=None)
@click.option("--detections", "detections_file", type=str, default=None,
              help="Line-delimited detections for --scenario; default synthesizes them.")
@click.option("--perfect", is_flag=True, help="Disable packet loss.")
@click.option("--workers", type=int, default=None)
def fuse(seed, config, out, fmt, scenario_file, detections_file, perfect, workers):
    """Late-fusion experiment: selection, packet loss, IoU-max fusion, metrics."""
    cfg = _load_cfg(config, seed, workers)
    if detections_file is not None:
        if scenario_file is None:
            raise ConfigurationError("--detections requires --scenario")
        if not Path(detections_file).is_file():
            raise FileNotFoundError(f"detection fixture not found: {detections_file}")
        s = _load_scenario(scenario_file)
        dets = load_detections(detections_file)
        missing = {s.ego.id, *(v.id for v in s.candidates)} - set(dets)
        if missing:
            raise ConfigurationError(f"{detections_file}: no detections for vehicles {sorted(missing)}")
        rows = []
        for policy in cfg.fusion_policies:
            helpers = () if policy == "ego" else harness.helpers_for(cfg, s, 0, policy)
            m = harness.fusion_metrics(s, dets, helpers, cfg.seed, cfg.iou_threshold, not perfect)
            rows.append({"policy": policy, "mean_iou": m.mean_iou, "recall": m.recall, "f1": m.f1})
        _emit(_table(rows, fmt), out)
        return
    table = harness.run_fusion_experiment(cfg, lossy=not perfect)
    _emit(harness.summaries_to_csv(table.summary) if fmt == "csv"
          else harness.summaries_to_json(table.summary), out)


@cli.command()
@seed_opt
@config_opt
@out_opt
@fmt_opt
@click.option("--workers", type=int, default=None)
@click.option("--repetitions", type=int, default=None)
def bench(seed, config, out, fmt, workers, repetitions):
    """Full batch: selection table, allocation curves and fusion metrics."""
    cfg = _load_cfg(config, seed, workers)
    if repetitions is not None:
        cfg = dataclasses.replace(cfg, repetitions=repetitions)
    rows = harness.run_bench(cfg)
    _emit(harness.summaries_to_csv(rows) if fmt == "csv" else harness.summaries_to_json(rows), out)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="cpselect", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_CONFIG
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except (ConfigurationError, DomainError, ContractError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        click.echo(f"infeasible: {exc}", err=True)
        return EXIT_INFEASIBLE
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
