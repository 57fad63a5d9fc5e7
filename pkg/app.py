#!/usr/bin/env python3
"""Command line front end: fits, divergences, tests, grids and simulations for count data."""

import functools
import logging
import sys

import click
import numpy as np
from joblib import Parallel, delayed

from asymptotics import attach_sandwich
from datasets import DatasetManager, parse_cell_list
from divergence_core import DiscreteDensity, derive_tuning, evaluate
from errors import CONFIG_ERRORS, BadParameter, LSDError
from estimation import OptimizerConfig, expected_frequencies, minimize_lsd, relative_density, working_support
from hypothesis_testing import (
    CONVENTIONS,
    TestingConfig,
    one_sample_test,
    power_approximation,
    signed_two_sample_test,
    simulate_estimator_distribution,
    simulate_test_level,
    two_sample_test,
)
from models import FAMILIES, get_family
from utils import ConfigManager, GridReport, ReportGenerator

logger = logging.getLogger(__name__)

CONTEXT_SETTINGS = dict(help_option_names=["-h", "--help"])
DEFAULT_BETAS = "0,0.2,0.4,0.6,0.8,0.9,1"
DEFAULT_GAMMAS = "-0.8,-0.7,-0.6,-0.5,-0.4,-0.3,-0.2,-0.1,0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8"


def parse_float_list(text):
    values = []
    for part in (text or "").split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(float(part))
        except ValueError:
            raise BadParameter(f"'{part}' is not a number") from None
    return values


def guarded(fn):
    """Map library errors onto exit codes: 1 for bad input, 2 for numerical failure"""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return fn(*args, **kwargs)
        except CONFIG_ERRORS as err:
            click.echo(f"Error: {err}", err=True)
            ctx.exit(1)
        except LSDError as err:
            click.echo(f"Numerical error: {type(err).__name__}: {err}", err=True)
            ctx.exit(2)

    return wrapper


def tuning_options(fn):
    fn = click.option("--gamma", type=float, default=0.0, show_default=True, help="LSD gamma")(fn)
    fn = click.option("--beta", type=float, default=0.0, show_default=True, help="LSD beta (>= 0)")(fn)
    fn = click.option(
        "--family", type=click.Choice(sorted(FAMILIES)), default="poisson", show_default=True
    )(fn)
    return fn


def data_options(fn):
    fn = click.option("--drop-cells", default="", help="comma separated cells to delete, e.g. 6,7")(fn)
    fn = click.option("--builtin", default=None, help="embedded dataset name")(fn)
    fn = click.option("--data", type=click.Path(dir_okay=False), default=None, help="x,count file")(fn)
    return fn


def output_options(fn):
    fn = click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=None)(fn)
    fn = click.option("--out", type=click.Path(dir_okay=False, writable=True), default=None)(fn)
    return fn


def mc_options(fn):
    fn = click.option("--alpha", type=float, default=None, help="test level")(fn)
    fn = click.option("--draws", type=int, default=None, help="Monte Carlo draws for p-values")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    return fn


def emit(text, out=None):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
        logger.info("wrote %s", out)
    else:
        click.echo(text.rstrip("\n"))


def _config(ctx):
    return ctx.obj["config"]


def _optimizer(ctx):
    return OptimizerConfig.from_section(_config(ctx).get_section("estimation"))


def _testing(ctx, alpha=None, draws=None, seed=None):
    cfg = _config(ctx)
    cfg.update_section("testing", {"alpha": alpha, "draws": draws, "seed": seed})
    return TestingConfig.from_section(cfg.get_section("testing"), n_jobs=ctx.obj["n_jobs"])


def _output(ctx, fmt):
    cfg = _config(ctx)
    cfg.update_section("output", {"format": fmt})
    return cfg.get("output", "format"), cfg.get("output", "decimals")


def _emit_test_row(ctx, task, result, theta_hat, fmt, out):
    t = result.tuning
    report = GridReport(task)
    report.add_row(t.beta, t.gamma, theta_hat=theta_hat, statistic=result.statistic, pvalue=result.pvalue)
    fmt, decimals = _output(ctx, fmt)
    emit(report.render(fmt, decimals), out)


class GridRunner:
    """Runs one task per (beta, gamma) cell and assembles the report in (gamma, beta) order"""

    TASKS = ("fit", "test-two-signed")

    def __init__(self, family, optimizer=None, n_jobs=1, convention="chisq_tail"):
        self.family = family
        self.optimizer = optimizer or OptimizerConfig()
        self.n_jobs = n_jobs
        self.convention = convention

    def run_grid(self, task, tables, betas, gammas):
        if task not in self.TASKS:
            raise BadParameter(f"unknown grid task '{task}'; choose from {self.TASKS}")
        needed = 1 if task == "fit" else 2
        if len(tables) != needed:
            raise BadParameter(f"task '{task}' needs {needed} table(s), got {len(tables)}")
        cells = [(b, g) for g in gammas for b in betas]
        logger.debug("running %d grid cells for %s", len(cells), task)
        rows = Parallel(n_jobs=self.n_jobs)(
            delayed(self._run_cell)(task, tables, beta, gamma) for beta, gamma in cells
        )
        report = GridReport(task)
        for beta, gamma, status, values in rows:
            report.add_row(beta, gamma, status, **values)
        return report

    def _run_cell(self, task, tables, beta, gamma):
        try:
            t = derive_tuning(beta, gamma)
        except BadParameter as err:
            return beta, gamma, f"error: {err}", {}
        if t.a_exp <= 0 or t.a_zero:
            logger.debug("degenerate cell beta=%g gamma=%g (A=%g)", beta, gamma, t.a_exp)
            return beta, gamma, "degenerate", {}
        try:
            if task == "fit":
                return beta, gamma, "ok", self._fit_cell(tables[0], t)
            return beta, gamma, "ok", self._signed_cell(tables, t)
        except LSDError as err:
            logger.debug("cell beta=%g gamma=%g failed: %s", beta, gamma, err)
            return beta, gamma, f"error: {type(err).__name__}", {}

    def _fit_cell(self, table, t):
        result = minimize_lsd(table, self.family, t, self.optimizer)
        se = None
        try:
            se = float(attach_sandwich(result, self.family).standard_errors()[0])
        except LSDError as err:
            logger.debug("no standard error at beta=%g gamma=%g: %s", t.beta, t.gamma, err)
        return {"theta_hat": result.theta, "se": se}

    def _signed_cell(self, tables, t):
        result = signed_two_sample_test(
            tables[0], tables[1], self.family, t, convention=self.convention, optimizer=self.optimizer
        )
        return {"theta_hat": float(result.estimates[2][0]), "statistic": result.statistic, "pvalue": result.pvalue}


@click.group(context_settings=CONTEXT_SETTINGS)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON configuration file; command line flags take precedence")
@click.option("--verbose", "-v", is_flag=True, help="debug logging")
@click.option("--n-jobs", type=int, default=None, help="parallel workers for grids and simulations")
@click.pass_context
def cli(ctx, config_path, verbose, n_jobs):
    """Minimum logarithmic super divergence estimation and testing for count data"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    ctx.ensure_object(dict)
    try:
        cfg = ConfigManager(config_path)
    except CONFIG_ERRORS as err:
        click.echo(f"Error: {err}", err=True)
        ctx.exit(1)
    cfg.update_section("simulation", {"n_jobs": n_jobs})
    ctx.obj["config"] = cfg
    ctx.obj["n_jobs"] = cfg.get("simulation", "n_jobs")
    ctx.obj["datasets"] = DatasetManager()


@cli.command()
@tuning_options
@data_options
@output_options
@click.option("--frequencies", is_flag=True, help="also print predicted frequencies")
@click.option("--cells", type=int, default=5, show_default=True, help="cells before the aggregated tail")
@click.pass_context
@guarded
def fit(ctx, family, beta, gamma, data, builtin, drop_cells, out, fmt, frequencies, cells):
    """Minimum LSD estimate of the model parameter"""
    fam = get_family(family)
    table = ctx.obj["datasets"].load(data, builtin, parse_cell_list(drop_cells))
    t = derive_tuning(beta, gamma)
    result = minimize_lsd(table, fam, t, _optimizer(ctx))
    try:
        attach_sandwich(result, fam)
    except LSDError as err:
        logger.warning("standard error unavailable: %s", err)

    if fmt is None:
        predicted = expected_frequencies(fam, result.theta_hat, table.n, cells) if frequencies else None
        decimals = _config(ctx).get("output", "decimals")
        text = ReportGenerator(decimals).generate_report("fit", {"result": result, "frequencies": predicted})
        emit(text, out)
        return
    se = result.standard_errors()
    report = GridReport("fit")
    report.add_row(beta, gamma, theta_hat=result.theta, se=None if se is None else float(se[0]))
    fmt, decimals = _output(ctx, fmt)
    emit(report.render(fmt, decimals), out)


@cli.command()
@click.option("--kind", type=click.Choice(["lsd", "pd", "lpd", "ldpd", "dpd", "s"]), default="lsd", show_default=True)
@tuning_options
@data_options
@click.option("--theta", type=float, required=True, help="model parameter of the second argument")
@click.option("--theta0", type=float, default=None, help="compare two model members instead of data")
@click.pass_context
@guarded
def divergence(ctx, kind, family, beta, gamma, data, builtin, drop_cells, theta, theta0):
    """Divergence between the data (or f_theta0) and the model f_theta"""
    fam = get_family(family)
    if theta0 is not None:
        if data is not None or builtin is not None:
            raise BadParameter("give either data or --theta0, not both")
        upper = max(fam.support_upper(theta0), fam.support_upper(theta))
        support = np.arange(upper + 1)
        g = fam.density(theta0, support)
    else:
        table = ctx.obj["datasets"].load(data, builtin, parse_cell_list(drop_cells))
        support = working_support(table, fam, theta)
        g = relative_density(table, support)
    f = fam.density(theta, support)
    value = evaluate(kind, g, f, beta, gamma)
    click.echo(f"{kind}(beta={beta:g}, gamma={gamma:g}) = {value:.10g}")


@cli.command("test-one")
@tuning_options
@data_options
@mc_options
@output_options
@click.option("--theta0", type=float, required=True, help="null parameter value")
@click.option("--power-at", type=float, default=None, help="also approximate the power at this theta")
@click.pass_context
@guarded
def test_one(ctx, family, beta, gamma, data, builtin, drop_cells, out, fmt, seed, draws, alpha, theta0, power_at):
    """One-sample test of H0: theta = theta0"""
    fam = get_family(family)
    table = ctx.obj["datasets"].load(data, builtin, parse_cell_list(drop_cells))
    t = derive_tuning(beta, gamma)
    config = _testing(ctx, alpha, draws, seed)
    result = one_sample_test(table, fam, theta0, t, config.alpha, config, _optimizer(ctx))
    if fmt is not None:
        if power_at is not None:
            logger.warning("--power-at is only reported in the text format")
        _emit_test_row(ctx, "test-one", result, float(result.estimates[0][0]), fmt, out)
        return
    reports = ReportGenerator(_config(ctx).get("output", "decimals"))
    parts = [reports.generate_report("test", {"result": result, "title": "One-sample LSD test"})]
    if power_at is not None:
        approx = power_approximation(power_at, theta0, fam, t, table.n, config.alpha, config)
        parts.append(reports.generate_report("power", {"result": approx}))
    emit("\n".join(parts), out)


@cli.command("test-two")
@tuning_options
@mc_options
@output_options
@click.option("--data1", type=click.Path(dir_okay=False), default=None, help="first (control) sample")
@click.option("--builtin1", default=None)
@click.option("--data2", type=click.Path(dir_okay=False), default=None, help="second (treated) sample")
@click.option("--builtin2", default=None)
@click.option("--drop-cells", default="", help="cells deleted from the second sample")
@click.option("--signed", is_flag=True, help="normalized one-df test at the pooled estimate")
@click.option("--convention", type=click.Choice(CONVENTIONS), default=None)
@click.pass_context
@guarded
def test_two(ctx, family, beta, gamma, out, fmt, seed, draws, alpha, data1, builtin1, data2, builtin2,
             drop_cells, signed, convention):
    """Two-sample test of H0: theta1 = theta2"""
    fam = get_family(family)
    manager = ctx.obj["datasets"]
    table1 = manager.load(data1, builtin1)
    table2 = manager.load(data2, builtin2, parse_cell_list(drop_cells))
    t = derive_tuning(beta, gamma)
    _config(ctx).update_section("testing", {"pvalue_convention": convention})
    config = _testing(ctx, alpha, draws, seed)
    if signed:
        result = signed_two_sample_test(
            table1, table2, fam, t, convention=config.pvalue_convention, alpha=config.alpha,
            optimizer=_optimizer(ctx),
        )
        title, task, theta_hat = "Normalized two-sample LSD test", "test-two-signed", result.estimates[2]
    else:
        result = two_sample_test(table1, table2, fam, t, config.alpha, config, _optimizer(ctx))
        title, task, theta_hat = "Two-sample LSD test", "test-two", result.estimates[0]
    if fmt is not None:
        _emit_test_row(ctx, task, result, float(theta_hat[0]), fmt, out)
        return
    reports = ReportGenerator(_config(ctx).get("output", "decimals"))
    emit(reports.generate_report("test", {"result": result, "title": title}), out)


@cli.command()
@click.option("--task", type=click.Choice(GridRunner.TASKS), default="fit", show_default=True)
@click.option("--family", type=click.Choice(sorted(FAMILIES)), default="poisson", show_default=True)
@click.option("--betas", default=DEFAULT_BETAS, show_default=True)
@click.option("--gammas", default=DEFAULT_GAMMAS, show_default=True)
@data_options
@click.option("--builtin2", default=None, help="treated sample for test-two-signed")
@click.option("--data2", type=click.Path(dir_okay=False), default=None)
@click.option("--convention", type=click.Choice(CONVENTIONS), default=None)
@output_options
@click.pass_context
@guarded
def grid(ctx, task, family, betas, gammas, data, builtin, drop_cells, builtin2, data2, convention, out, fmt):
    """Fit or test over a (beta, gamma) grid"""
    fam = get_family(family)
    manager = ctx.obj["datasets"]
    cells = parse_cell_list(drop_cells)
    if task == "fit":
        tables = [manager.load(data, builtin, cells)]
    else:
        tables = [manager.load(data, builtin), manager.load(data2, builtin2, cells)]
    _config(ctx).update_section("testing", {"pvalue_convention": convention})
    runner = GridRunner(
        fam,
        optimizer=_optimizer(ctx),
        n_jobs=ctx.obj["n_jobs"],
        convention=_config(ctx).get("testing", "pvalue_convention"),
    )
    report = runner.run_grid(task, tables, parse_float_list(betas), parse_float_list(gammas))
    fmt, decimals = _output(ctx, fmt)
    emit(report.render(fmt, decimals), out)


@cli.command()
@tuning_options
@click.option("--theta", type=float, required=True, help="true parameter")
@click.option("--n", "sample_size", type=int, default=None, help="sample size per replicate")
@click.option("--replicates", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--level", is_flag=True, help="rejection rate of the one-sample test instead of estimator moments")
@click.option("--alpha", type=float, default=None)
@click.option("--draws", type=int, default=None)
@click.pass_context
@guarded
def simulate(ctx, family, beta, gamma, theta, sample_size, replicates, seed, level, alpha, draws):
    """Monte Carlo check of the estimator's sandwich variance or the test level"""
    fam = get_family(family)
    t = derive_tuning(beta, gamma)
    cfg = _config(ctx)
    cfg.update_section("simulation", {"n": sample_size, "replicates": replicates, "seed": seed})
    sim = cfg.get_section("simulation")
    reports = ReportGenerator(cfg.get("output", "decimals"))
    if level:
        config = _testing(ctx, alpha, draws)
        study = simulate_test_level(
            fam, theta, t, sim["n"], sim["replicates"], config.alpha, sim["seed"], config, _optimizer(ctx)
        )
        click.echo(reports.generate_report("level", {"result": study}))
        return
    result = simulate_estimator_distribution(
        fam, theta, t, sim["n"], sim["replicates"], sim["seed"], ctx.obj["n_jobs"], _optimizer(ctx)
    )
    click.echo(reports.generate_report("simulation", {"result": result}))


def main(argv=None):
    """Entry point with exit codes 0 (success), 1 (usage or input error), 2 (numerical failure)"""
    try:
        rv = cli.main(args=argv, prog_name="lsd", standalone_mode=False)
    except click.ClickException as err:
        err.show()
        return 1
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
