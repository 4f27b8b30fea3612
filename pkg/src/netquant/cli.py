"""Command-line interface: ``netquant <subcommand>``.

Exit codes: 0 success, 1 estimation failure or failed ``--check``,
2 usage or input-data error.  Each subcommand prints a one-line JSON summary
on stdout; files are written atomically under ``--out``.
"""

from __future__ import annotations

import functools
import json
import logging
import math
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, dnqr_sim, inference, ivqr, mc_harness, panel_io
from . import network as nw
from .distributions import InnovationDist, make_rng
from .errors import DataError, DomainError, NetquantError

log = logging.getLogger("netquant")

EXIT_OK, EXIT_ESTIMATION, EXIT_USAGE = 0, 1, 2


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise click.BadParameter(f"cannot read {p}: {exc.strerror}", param_hint="--config") from None
    try:
        if p.suffix.lower() == ".toml":
            data = _toml_loads(raw.decode())
        else:
            data = json.loads(raw)
    except Exception as exc:  # parse errors of either format
        raise click.BadParameter(f"cannot parse {p}: {exc}", param_hint="--config") from None
    if not isinstance(data, dict):
        raise click.BadParameter("config must be a mapping of subcommand -> options", param_hint="--config")
    return data


def _toml_loads(text: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib
    return tomllib.loads(text)


def _default_threads() -> int:
    env = os.environ.get("NETQUANT_THREADS")
    if env:
        try:
            v = int(env)
        except ValueError:
            raise click.BadParameter(f"NETQUANT_THREADS={env!r} is not an integer") from None
        if v < 1:
            raise click.BadParameter("NETQUANT_THREADS must be >= 1")
        return v
    return os.cpu_count() or 1


def _emit(summary: dict) -> None:
    click.echo(json.dumps(summary, sort_keys=True, allow_nan=False, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def handle_errors(fn):
    """Map library errors to exit codes with a message on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DataError, DomainError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_USAGE)
        except NetquantError as exc:
            click.echo(f"estimation failed: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_ESTIMATION)

    return wrapper


class Ctx:
    def __init__(self, seed, threads, out, log_level):
        self.seed = seed
        self.threads = threads
        self.out = Path(out)
        self.log_level = log_level

    def seed_or(self, default: int = 0) -> int:
        return default if self.seed is None else self.seed


@click.group()
@click.version_option(__version__, prog_name="netquant")
@click.option("--seed", type=int, default=None, help="Master seed (default 0, or the scenario's own).")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker processes for Monte Carlo runs [env NETQUANT_THREADS; default: CPU count].")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True, help="Output directory.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON or TOML file of per-subcommand option defaults.")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              default="WARNING", show_default=True)
@click.pass_context
def cli(ctx, seed, threads, out, config_path, log_level):
    """Dynamic network quantile regression: simulate, estimate, evaluate."""
    logging.basicConfig(level=log_level.upper(), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ctx.default_map = _load_config(config_path)
    ctx.obj = Ctx(seed, threads if threads is not None else _default_threads(), out, log_level)


@cli.command("generate-network")
@click.option("--type", "kind", type=click.Choice([k.value for k in mc_harness.NetworkKind]), required=True)
@click.option("--n", type=click.IntRange(min=2), required=True, help="Number of nodes.")
@click.option("--blocks", type=click.IntRange(min=1), default=5, show_default=True, help="SBM block count.")
@click.option("--exponent", type=float, default=2.5, show_default=True, help="Power-law exponent.")
@click.option("--name", default="network", show_default=True, help="Output file stem.")
@click.pass_obj
@handle_errors
def generate_network(obj: Ctx, kind, n, blocks, exponent, name):
    """Draw a random directed network and write it as an edge list."""
    spec = mc_harness.NetworkSpec(kind, blocks=blocks, exponent=exponent)
    adj = mc_harness.draw_network(spec, n, make_rng(obj.seed_or(), 0))
    obj.out.mkdir(parents=True, exist_ok=True)
    edges = obj.out / f"{name}.csv"
    tmp = obj.out / f".{name}.csv.tmp"
    nw.write_edgelist(adj, tmp)
    os.replace(tmp, edges)
    info = {"type": spec.label, "n": n, "edges": adj.n_edges, "density": nw.density(adj),
            "seed": obj.seed_or(), "file": edges.name}
    panel_io.atomic_write_text(obj.out / f"{name}.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
    _emit({"command": "generate-network", **info, "file": str(edges)})


@cli.command()
@click.option("--n", type=click.IntRange(min=2), default=100, show_default=True)
@click.option("--t", type=click.IntRange(min=3), default=100, show_default=True)
@click.option("--network", "network_spec", default="dyad", show_default=True,
              help="dyad, sbm[:L] or powerlaw[:beta].")
@click.option("--network-file", type=click.Path(dir_okay=False), default=None,
              help="Use a src,dst edge list instead of drawing a network.")
@click.option("--dist", "dist_name", default="normal", show_default=True, help="normal or t5-style label.")
@click.option("--burn-in", type=click.IntRange(min=0), default=100, show_default=True)
@click.option("--name", default="panel", show_default=True, help="Dataset directory under --out.")
@click.pass_obj
@handle_errors
def simulate(obj: Ctx, n, t, network_spec, network_file, dist_name, burn_in, name):
    """Simulate a panel from the DNQR design and save it as a dataset."""
    seed = obj.seed_or()
    if network_file:
        adj = nw.read_edgelist(network_file, n)
    else:
        adj = mc_harness.draw_network(mc_harness.NetworkSpec.parse(network_spec), n, make_rng(seed, 0, 0))
    cfg = dnqr_sim.SimConfig(n=n, t=t, network=nw.row_normalize(adj), dist=InnovationDist.parse(dist_name),
                             burn_in=burn_in, seed=seed)
    panel = dnqr_sim.simulate_panel(cfg, make_rng(seed, 0, 1))
    manifest = panel_io.save_panel(panel, obj.out / name, p=cfg.p)
    _emit({"command": "simulate", "manifest": str(manifest), "n": n, "t": t, "seed": seed,
           "dist": cfg.dist.label, "density": nw.density(adj)})


def _parse_taus(values) -> list[float]:
    taus = []
    for v in values:
        for part in str(v).split(","):
            part = part.strip()
            if not part:
                continue
            if ":" in part:
                lo, hi, step = (float(x) for x in part.split(":"))
                count = int(math.floor((hi - lo) / step + 1e-9)) + 1
                taus += [round(lo + i * step, 10) for i in range(count)]
            else:
                taus.append(float(part))
    if not taus or any(not 0 < x < 1 for x in taus):
        raise click.BadParameter("quantile levels must lie strictly inside (0, 1)", param_hint="--tau")
    return taus


def _grid_options(fn):
    fn = click.option("--grid-step", type=float, default=0.02, show_default=True)(fn)
    fn = click.option("--grid-lower", type=float, default=-0.98, show_default=True)(fn)
    fn = click.option("--grid-upper", type=float, default=0.98, show_default=True)(fn)
    fn = click.option("--refine-rounds", type=click.IntRange(min=0), default=3, show_default=True)(fn)
    return fn


def _estimate_json(est, s, restricted: dict) -> dict:
    names = est.theta_names
    se = ci = None
    if est.std_errors is not None:
        se = dict(zip(names, (float(v) for v in est.std_errors)))
        ci = {nm: [float(lo), float(hi)] for nm, lo, hi in zip(names, est.ci_low, est.ci_high)}
    return {
        "tau": est.tau,
        "gamma1": est.gamma1_hat,
        "phi": dict(zip(s.x_names, (float(v) for v in est.phi_hat))),
        "lambda": dict(zip(s.r_names, (float(v) for v in est.lambda_hat))),
        "se": se,
        "ci": ci,
        "ci_kind": "pointwise",
        "inference_error": est.inference_error,
        "objective": est.objective,
        "profile": [[float(g), float(v)] for g, v in est.profile_trace],
        "profile_tie": est.tie,
        "r2_vs_nqar": restricted.get("NQAR"),
        "r2_vs_nqarf": restricted.get("NQARF"),
    }


@cli.command()
@click.option("--manifest", type=click.Path(), required=True, help="Dataset manifest (file or directory).")
@click.option("--tau", "tau_values", multiple=True, default=("0.5",), show_default=True,
              help="Quantile level(s); accepts lists '0.1,0.5' and ranges '0.1:0.9:0.1'.")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--one-sided-jacobian", is_flag=True, help="Use the one-sided kernel indicator (comparison only).")
@_grid_options
@click.option("--name", default="estimate", show_default=True, help="Output file stem.")
@click.pass_obj
@handle_errors
def estimate(obj: Ctx, manifest, tau_values, alpha, one_sided_jacobian, grid_step, grid_lower, grid_upper,
             refine_rounds, name):
    """IVQR estimates, standard errors and goodness of fit for a dataset."""
    taus = _parse_taus(tau_values)
    grid = ivqr.GridSpec(grid_lower, grid_upper, grid_step, refine_rounds)
    mf = panel_io.DatasetManifest.read(manifest)
    panel = panel_io.load_dataset(mf)
    s = ivqr.build_stacked(panel, p=mf.p)
    results = []
    for tau in taus:
        est = ivqr.ivqr_estimate(s, tau, grid)
        inference.attach_inference(est, s, alpha, one_sided=one_sided_jacobian)
        r2 = {}
        for model in (ivqr.RestrictedModel.NQAR, ivqr.RestrictedModel.NQARF):
            try:
                fit = ivqr.fit_restricted(s, tau, model)
                r2[model.value] = ivqr.goodness_of_fit(est.objective, fit.objective)
            except NetquantError as exc:
                log.warning("restricted %s fit failed at tau=%g: %s", model.value, tau, exc)
        results.append(_estimate_json(est, s, r2))
    payload = results[0] if len(results) == 1 else results
    path = panel_io.atomic_write_text(obj.out / f"{name}.json", json.dumps(payload, indent=2) + "\n")
    _emit({"command": "estimate", "file": str(path), "taus": taus,
           "gamma1": [r["gamma1"] for r in results]})


@cli.command()
@click.option("--scenario", "scenario_path", type=click.Path(dir_okay=False), default=None,
              help="Scenario file (JSON or TOML); defaults to the desk-scale scenario.")
@click.option("--replications", type=click.IntRange(min=1), default=None, help="Override the replication count.")
@click.option("--fixed-network", is_flag=True, default=None, help="Reuse one network draw for every replication.")
@click.option("--check", is_flag=True, help="Exit 1 if any embedded desk-scale band is violated.")
@click.option("--name", default="report", show_default=True, help="Output file stem.")
@click.pass_obj
@handle_errors
def montecarlo(obj: Ctx, scenario_path, replications, fixed_network, check, name):
    """Run a Monte Carlo experiment and write CSV and JSON reports."""
    if scenario_path:
        p = Path(scenario_path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise DataError(f"cannot read scenario: {exc.strerror}", p) from None
        try:
            data = _toml_loads(text) if p.suffix.lower() == ".toml" else json.loads(text)
        except Exception as exc:
            raise DataError(f"cannot parse scenario: {exc}", p) from None
        scenario = mc_harness.scenario_from_mapping(data)
    else:
        scenario = mc_harness.desk_scale_scenario()
    changes = {}
    if replications is not None:
        changes["replications"] = replications
    if fixed_network is not None:
        changes["fixed_network"] = fixed_network
    if obj.seed is not None:
        changes["seed"] = obj.seed
    if changes:
        from dataclasses import replace
        scenario = replace(scenario, **changes)

    def progress(done, total):
        log.info("replication %d/%d", done, total)

    report = mc_harness.run_scenario(scenario, threads=obj.threads, progress=progress)
    csv_path = panel_io.atomic_write_text(obj.out / f"{name}.csv", report.to_csv())
    json_path = panel_io.atomic_write_text(obj.out / f"{name}.json", report.to_json())
    summary = {"command": "montecarlo", "csv": str(csv_path), "json": str(json_path),
               "replications": scenario.replications, "seed": scenario.seed}
    code = EXIT_OK
    if check:
        checks = mc_harness.check_bands(report)
        summary["check"] = [{"name": c.name, "value": _finite(c.value), "lower": _finite(c.lower),
                             "upper": _finite(c.upper), "passed": c.passed} for c in checks]
        summary["check_passed"] = all(c.passed for c in checks)
        if not summary["check_passed"]:
            code = EXIT_ESTIMATION
    _emit(summary)
    sys.exit(code)


@cli.command()
@click.option("--manifest", type=click.Path(), required=True)
@click.option("--taus", "tau_values", multiple=True, default=("0.1:0.9:0.1",), show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@_grid_options
@click.option("--name", default="sweep", show_default=True)
@click.pass_obj
@handle_errors
def sweep(obj: Ctx, manifest, tau_values, alpha, grid_step, grid_lower, grid_upper, refine_rounds, name):
    """Estimates with pointwise intervals across quantile levels, as CSV."""
    taus = _parse_taus(tau_values)
    if len(taus) < 2:
        raise click.BadParameter("a sweep needs at least two quantile levels", param_hint="--taus")
    grid = ivqr.GridSpec(grid_lower, grid_upper, grid_step, refine_rounds)
    mf = panel_io.DatasetManifest.read(manifest)
    panel = panel_io.load_dataset(mf)
    rows = panel_io.quantile_sweep(panel, taus, grid, alpha, p=mf.p)
    path = panel_io.atomic_write_text(obj.out / f"{name}.csv", panel_io.sweep_to_csv(rows))
    failed = sorted({r.tau for r in rows if r.param == "*"})
    _emit({"command": "sweep", "file": str(path), "taus": taus, "failed_taus": failed})
    sys.exit(EXIT_ESTIMATION if len(failed) == len(taus) else EXIT_OK)


def main(argv=None):
    cli.main(args=argv, prog_name="netquant")


if __name__ == "__main__":
    main()
