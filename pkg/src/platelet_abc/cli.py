"""Umbrella command line: simulate, summarize, infer, predict, sched-bench, synth.

Every subcommand is reproducible from (config file, master seed); outputs
carry no timestamps. Structured errors go to stderr as a single
`error: ...` line with a nonzero exit code.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import io as pio
from .deposition import ModelParams, PARAM_NAMES, SubstrateGrid, simulate, with_seed
from .errors import PlateletABCError
from .inference import (
    RejectionABC,
    SABC,
    SimulationExecutor,
    posterior_predictive,
)
from .scheduling import imbalance_report, makespan, simulate_schedule
from .summaries import summarize


def _parse_theta(text: str) -> ModelParams:
    """Parse `--theta` values: five comma-separated numbers in
    (p_Ag, p_Ad, p_T, p_F, a_T) order, or name=value pairs."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if all("=" in p for p in parts):
        mapping = {}
        for p in parts:
            name, _, value = p.partition("=")
            mapping[name.strip()] = float(value)
        missing = [n for n in PARAM_NAMES if n not in mapping]
        if missing:
            raise click.BadParameter(f"missing parameters {missing}")
        return ModelParams.from_array([mapping[n] for n in PARAM_NAMES])
    if len(parts) != 5:
        raise click.BadParameter(
            "expected five comma-separated values "
            f"({', '.join(PARAM_NAMES)}) or name=value pairs"
        )
    return ModelParams.from_array([float(p) for p in parts])


def _resolve_theta(run, theta_text):
    if theta_text:
        return _parse_theta(theta_text)
    if run.theta is not None:
        return run.theta
    raise click.UsageError("no parameters: pass --theta or put `theta` in the config")


class _Ctx:
    def __init__(self, config_path, seed, out_dir):
        self.config_path = config_path
        self.seed = seed
        self.out_dir = out_dir
        self._run = None

    @property
    def run(self) -> "pio.RunConfig":
        if self.config_path is None:
            raise click.UsageError("this command needs --config")
        if self._run is None:
            self._run = pio.load_run_config(self.config_path)
        return self._run

    def sim_config(self):
        cfg = self.run.simulation
        if self.seed is not None:
            cfg = with_seed(cfg, self.seed)
        return cfg

    def master_seed(self) -> int:
        if self.seed is not None:
            return int(self.seed)
        return int(self.run.simulation.seed)

    def resolve_out_dir(self) -> Path:
        out = self.out_dir or (self.run.output_dir if self.config_path else None)
        out = Path(out) if out else Path.cwd()
        out.mkdir(parents=True, exist_ok=True)
        return out


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Run configuration JSON.")
@click.option("--seed", type=int, default=None,
              help="Master seed; overrides the seed in the config.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Directory for output files.")
@click.pass_context
def main(ctx, config_path, seed, out_dir):
    """Platelet deposition simulator and ABC calibration toolkit."""
    ctx.obj = _Ctx(config_path, seed, out_dir)


@main.command("simulate")
@click.option("--theta", "theta_text", default=None,
              help="Five comma-separated rates or name=value pairs.")
@click.option("--out", "out_name", default="series.csv", show_default=True,
              help="Output CSV (relative to --out-dir).")
@click.option("--snapshot-pgm", default=None,
              help="Also dump the final platelet stack as a text PGM.")
@click.pass_obj
def simulate_cmd(obj, theta_text, out_name, snapshot_pgm):
    """Run one forward simulation and write the deposition series CSV."""
    theta = _resolve_theta(obj.run, theta_text)
    config = obj.sim_config()
    series = simulate(theta, config)
    out_dir = obj.resolve_out_dir()
    pio.write_series(out_dir / out_name, series)
    if snapshot_pgm:
        grid = _final_grid(theta, config)
        pio.write_grid_pgm(out_dir / snapshot_pgm, grid)
    click.echo(f"wrote {out_dir / out_name}")


def _final_grid(theta, config) -> SubstrateGrid:
    # re-run the stepping loop to expose the lattice state at the end
    from .deposition import (
        boundary_exchange, deposition_sweep, diffusion_step, initial_state,
    )
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    state = initial_state(config)
    grid = SubstrateGrid.empty(config)
    for _ in range(config.n_steps):
        state = diffusion_step(state, config)
        grid, deposited = deposition_sweep(grid, state, theta, config, rng)
        state = boundary_exchange(state, deposited, config, rng)
    return grid


@main.command("summarize")
@click.argument("series_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_name", default="summary.csv", show_default=True)
@click.pass_obj
def summarize_cmd(obj, series_csv, out_name):
    """Reduce a deposition series CSV to its 24-component summary row."""
    series = pio.load_series(series_csv)
    out_dir = obj.resolve_out_dir()
    pio.write_summary(out_dir / out_name, summarize(series))
    click.echo(f"wrote {out_dir / out_name}")


@main.command("infer")
@click.option("--observed", "observed_csv", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Observed dataset CSV (default: config observed_path).")
@click.option("--sampler", type=click.Choice(["rejection", "sabc"]), default=None,
              help="Override the sampler kind from the config.")
@click.option("--n-particles", type=int, default=None)
@click.option("--n-steps", type=int, default=None)
@click.option("--cutoff", type=float, default=None, help="SABC acceptance-rate cutoff.")
@click.option("--epsilon", type=float, default=None, help="Rejection-ABC threshold.")
@click.option("--n-accept", type=int, default=None, help="Rejection-ABC kept samples.")
@click.option("--workers", type=int, default=None)
@click.pass_obj
def infer_cmd(obj, observed_csv, sampler, n_particles, n_steps, cutoff,
              epsilon, n_accept, workers):
    """Calibrate the five rates from observed data.

    Writes posterior.csv, bayes_estimate.json and correlation.csv into the
    output directory.
    """
    run = obj.run
    if observed_csv is None:
        if run.observed_path is None:
            raise click.UsageError("pass --observed or set observed_path in the config")
        observed_csv = run.observed_path
    observed = pio.load_observed(observed_csv)

    s = run.sampler
    kind = sampler or s.kind
    n_workers = workers if workers is not None else run.scheduler.workers
    common = dict(
        config=run.simulation, prior=run.prior, n_workers=n_workers,
        strategy=run.scheduler.strategy, seed=obj.master_seed(),
    )
    if kind == "sabc":
        est = SABC(
            n_particles=n_particles if n_particles is not None else s.n_particles,
            n_steps=n_steps if n_steps is not None else s.n_steps,
            acc_cutoff=cutoff if cutoff is not None else s.acc_cutoff,
            alpha=s.alpha, epsilon_floor=s.epsilon_floor, **common,
        )
    else:
        est = RejectionABC(
            n_accept=n_accept if n_accept is not None else s.n_accept,
            epsilon=epsilon if epsilon is not None else s.epsilon, **common,
        )
    est.fit(observed)

    out_dir = obj.resolve_out_dir()
    pio.write_population(out_dir / "posterior.csv", est.population_)
    pio.write_bayes_estimate(out_dir / "bayes_estimate.json", est.bayes_estimate_)
    pio.write_correlation(out_dir / "correlation.csv", est.correlation_)
    click.echo(
        f"wrote {out_dir / 'posterior.csv'} ({len(est.population_)} samples, "
        f"final mean discrepancy "
        f"{est.population_.mean_discrepancy_history[-1]:.6g})"
    )


@main.command("predict")
@click.option("--posterior", "posterior_csv", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--n-draws", type=int, default=100, show_default=True)
@click.option("--workers", type=int, default=None)
@click.option("--out", "out_name", default="predictive.csv", show_default=True)
@click.pass_obj
def predict_cmd(obj, posterior_csv, n_draws, workers, out_name):
    """Posterior predictive bands from a posterior samples CSV."""
    run = obj.run
    population = pio.load_population(posterior_csv)
    n_workers = workers if workers is not None else run.scheduler.workers
    table = posterior_predictive(
        population, run.simulation, n_draws=n_draws,
        executor=SimulationExecutor(
            n_workers=n_workers, strategy=run.scheduler.strategy
        ),
        rng=obj.master_seed(),
    )
    out_dir = obj.resolve_out_dir()
    pio.write_predictive(out_dir / out_name, table)
    click.echo(f"wrote {out_dir / out_name}")


@main.command("sched-bench")
@click.option("--m", "n_tasks", type=int, default=64, show_default=True)
@click.option("--n", "n_workers", type=int, default=8, show_default=True)
@click.option("--dist", type=click.Choice(["constant", "uniform", "lognormal", "file"]),
              default="lognormal", show_default=True)
@click.option("--duration-file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="One duration per line (with --dist file).")
@click.option("--strategy", type=click.Choice(["chunked", "dynamic", "both"]),
              default="both", show_default=True)
@click.pass_obj
def sched_bench_cmd(obj, n_tasks, n_workers, dist, duration_file, strategy):
    """Simulated-clock scheduling benchmark; emits timelines and a summary."""
    seed = obj.seed if obj.seed is not None else 0
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    if dist == "constant":
        durations = np.ones(n_tasks)
    elif dist == "uniform":
        durations = rng.uniform(0.5, 1.5, size=n_tasks)
    elif dist == "lognormal":
        durations = rng.lognormal(mean=0.0, sigma=1.0, size=n_tasks)
    else:
        if duration_file is None:
            raise click.UsageError("--dist file needs --duration-file")
        durations = np.array([
            float(line) for line in Path(duration_file).read_text().split()
        ])
    strategies = ["chunked", "dynamic"] if strategy == "both" else [strategy]
    out_dir = obj.resolve_out_dir()
    summary = {"m": len(durations), "n": n_workers, "dist": dist}
    for name in strategies:
        timeline = simulate_schedule(durations, n_workers, name)
        pio.write_timeline(out_dir / f"timeline_{name}.csv", timeline)
        report = imbalance_report(timeline)
        summary[name] = {
            "makespan": makespan(timeline),
            "busy_fraction_min": report["min"],
            "busy_fraction_max": report["max"],
            "busy_fraction_mean": report["mean"],
        }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    click.echo(f"wrote {out_dir / 'summary.json'}")


@main.command("synth")
@click.option("--theta", "theta_text", default=None,
              help="Ground-truth rates (see simulate --theta).")
@click.option("--out", "out_name", default="observed.csv", show_default=True)
@click.pass_obj
def synth_cmd(obj, theta_text, out_name):
    """Generate a synthetic observed dataset from known parameters."""
    theta = _resolve_theta(obj.run, theta_text)
    dataset = pio.synth_dataset(theta, obj.run.simulation, obj.master_seed())
    out_dir = obj.resolve_out_dir()
    pio.write_series(out_dir / out_name, dataset.series, provenance=dataset.provenance)
    click.echo(f"wrote {out_dir / out_name}")


def run_main():
    """Entry point wrapper that maps package errors to exit code 2."""
    try:
        main.main(standalone_mode=False)
    except PlateletABCError as err:
        print(f"error: {err}", file=sys.stderr)
        sys.exit(2)
    except click.ClickException as err:
        err.show()
        sys.exit(err.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)


if __name__ == "__main__":
    run_main()
