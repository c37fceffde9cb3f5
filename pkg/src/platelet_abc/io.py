"""Dataset / config parsing and result serialization.

All CSV schemas are fixed and documented here; every float is written with
shortest-round-trip precision (well beyond 9 significant digits), so
write-then-read is exact and repeated runs produce byte-identical files.
Output files carry no timestamps or timing metadata.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .deposition import (
    DepositionSeries,
    ModelParams,
    PARAM_NAMES,
    SimulationConfig,
    SubstrateGrid,
    VARIABLE_NAMES,
    simulate,
    with_seed,
)
from .errors import DataFormatError
from .inference import (
    N_PARAMS,
    Particle,
    Population,
    PredictiveSummary,
    PriorBox,
    default_prior,
)
from .scheduling import ExecutorTimeline
from .summaries import SUMMARY_NAMES, SummaryVector

SERIES_HEADER = ["t_s", "S_agg_um2", "N_agg_per_mm2", "N_plt_per_ul", "N_act_per_ul"]
POPULATION_HEADER = list(PARAM_NAMES) + ["weight", "discrepancy"]
PREDICTIVE_HEADER = ["t_s", "variable", "mean", "q25", "q75", "min", "max"]
TIMELINE_HEADER = ["worker", "task", "start_s", "end_s"]

CONFIG_SCHEMA_VERSION = 1


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"{where}: {text!r} is not a number") from None


# --------------------------------------------------------------------------
# Deposition series / observed datasets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservedDataset:
    """A deposition series tagged with its provenance."""

    series: DepositionSeries
    provenance: str = "experimental"

    def __post_init__(self):
        if self.provenance not in ("experimental", "synthetic"):
            raise DataFormatError(
                f"provenance must be experimental|synthetic, got {self.provenance!r}"
            )


def write_series(path, series: DepositionSeries, provenance: str | None = None):
    """Write a deposition series CSV (one row per observation time).

    A provenance tag, when given, is stored as a leading `# provenance:`
    comment that load_observed understands.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        if provenance is not None:
            fh.write(f"# provenance: {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(SERIES_HEADER)
        for k in range(len(series)):
            writer.writerow([
                _fmt(series.times[k]), _fmt(series.s_agg[k]), _fmt(series.n_agg[k]),
                _fmt(series.n_plt[k]), _fmt(series.n_act[k]),
            ])


def load_series(path) -> DepositionSeries:
    return load_observed(path).series


def load_observed(path) -> ObservedDataset:
    """Parse an observed-dataset CSV; errors cite row and column."""
    path = Path(path)
    provenance = "experimental"
    with path.open(newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            if "provenance:" in first:
                provenance = first.split("provenance:", 1)[1].strip()
            first = fh.readline()
        header = next(csv.reader([first])) if first else []
        if [h.strip() for h in header] != SERIES_HEADER:
            raise DataFormatError(
                f"{path}: expected header {','.join(SERIES_HEADER)}, "
                f"got {first.strip()!r}"
            )
        rows = []
        for i, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != len(SERIES_HEADER):
                raise DataFormatError(
                    f"{path}: row {i} has {len(row)} fields, expected "
                    f"{len(SERIES_HEADER)}"
                )
            rows.append([
                _parse_float(cell, f"{path}: row {i}, column {name!r}")
                for name, cell in zip(SERIES_HEADER, row)
            ])
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    data = np.array(rows)
    times = data[:, 0]
    if np.any(np.diff(times) <= 0):
        raise DataFormatError(f"{path}: times must be strictly increasing")
    if np.any(data < 0):
        bad = np.argwhere(data < 0)[0]
        raise DataFormatError(
            f"{path}: row {int(bad[0]) + 2}, column "
            f"{SERIES_HEADER[int(bad[1])]!r}: negative value"
        )
    series = DepositionSeries(
        times=times, s_agg=data[:, 1], n_agg=data[:, 2],
        n_plt=data[:, 3], n_act=data[:, 4],
    )
    return ObservedDataset(series=series, provenance=provenance)


def synth_dataset(theta: ModelParams, config: SimulationConfig, seed: int) -> ObservedDataset:
    """Ground-truth generator: a simulated series tagged as synthetic."""
    return ObservedDataset(
        series=simulate(theta, with_seed(config, seed)), provenance="synthetic"
    )


# --------------------------------------------------------------------------
# Summary vectors
# --------------------------------------------------------------------------

def write_summary(path, summary: SummaryVector):
    """Single-row CSV with the 24 summary components in SUMMARY_NAMES order."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_NAMES)
        writer.writerow([_fmt(v) for v in summary.as_array()])


# --------------------------------------------------------------------------
# Populations / estimates / correlation matrices
# --------------------------------------------------------------------------

def write_population(path, population: Population):
    """Posterior samples CSV; empty populations give a header-only file."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(POPULATION_HEADER)
        for p in population.particles:
            writer.writerow(
                [_fmt(v) for v in p.theta.as_array()]
                + [_fmt(p.weight), _fmt(p.discrepancy)]
            )


def load_population(path) -> Population:
    """Read a posterior CSV back into a Population (uniform metadata)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != POPULATION_HEADER:
            raise DataFormatError(
                f"{path}: expected header {','.join(POPULATION_HEADER)}"
            )
        particles = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(POPULATION_HEADER):
                raise DataFormatError(f"{path}: row {i} has {len(row)} fields")
            values = [
                _parse_float(cell, f"{path}: row {i}, column {name!r}")
                for name, cell in zip(POPULATION_HEADER, row)
            ]
            particles.append(Particle(
                theta=ModelParams.from_array(values[:N_PARAMS]),
                weight=values[N_PARAMS],
                discrepancy=values[N_PARAMS + 1],
                sim_seed=0,
            ))
    return Population(
        particles=tuple(particles), epsilon=0.0, step=0,
        kernel_cov=np.zeros((N_PARAMS, N_PARAMS)),
    )


def write_bayes_estimate(path, estimate: ModelParams):
    with Path(path).open("w") as fh:
        json.dump({k: v for k, v in estimate.as_dict().items()}, fh, indent=2)
        fh.write("\n")


def load_bayes_estimate(path) -> ModelParams:
    with Path(path).open() as fh:
        data = json.load(fh)
    try:
        return ModelParams.from_array([data[name] for name in PARAM_NAMES])
    except KeyError as missing:
        raise DataFormatError(f"{path}: missing parameter {missing}") from None


def write_correlation(path, matrix: np.ndarray):
    """5x5 correlation matrix CSV with parameter-name row/column labels."""
    matrix = np.asarray(matrix, dtype=float)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param"] + list(PARAM_NAMES))
        for name, row in zip(PARAM_NAMES, matrix):
            writer.writerow([name] + [_fmt(v) for v in row])


# --------------------------------------------------------------------------
# Predictive tables and timelines
# --------------------------------------------------------------------------

def write_predictive(path, table: PredictiveSummary):
    """Predictive-band CSV, rows sorted by (variable, t_s)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIVE_HEADER)
        for v, name in sorted(enumerate(VARIABLE_NAMES), key=lambda kv: kv[1]):
            for k in range(len(table.times)):
                writer.writerow([
                    _fmt(table.times[k]), name,
                    _fmt(table.mean[v, k]), _fmt(table.q25[v, k]),
                    _fmt(table.q75[v, k]), _fmt(table.minimum[v, k]),
                    _fmt(table.maximum[v, k]),
                ])


def write_timeline(path, timeline: ExecutorTimeline):
    """Timeline CSV: one row per executed task interval."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMELINE_HEADER)
        for worker, lane in enumerate(timeline.workers):
            for entry in lane:
                writer.writerow(
                    [worker, entry.task, _fmt(entry.start), _fmt(entry.end)]
                )


def write_grid_pgm(path, grid: SubstrateGrid):
    """Plain-text PGM raster of the platelet stack heights."""
    stack = grid.stack
    maxval = max(1, int(stack.max()))
    lines = ["P2", f"{stack.shape[1]} {stack.shape[0]}", str(maxval)]
    for row in stack:
        lines.append(" ".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerSettings:
    kind: str = "sabc"
    n_particles: int = 256
    n_steps: int = 10
    acc_cutoff: float = 1e-4
    epsilon: float = 0.5
    n_accept: int = 100
    alpha: float = 0.5
    epsilon_floor: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("sabc", "rejection"):
            raise DataFormatError(f"sampler kind must be sabc|rejection, got {self.kind!r}")


@dataclass(frozen=True)
class SchedulerSettings:
    workers: int = 1
    strategy: str = "dynamic"

    def __post_init__(self):
        if self.workers < 1:
            raise DataFormatError("scheduler.workers must be >= 1")
        if self.strategy not in ("dynamic", "chunked"):
            raise DataFormatError(
                f"scheduler.strategy must be dynamic|chunked, got {self.strategy!r}"
            )


@dataclass(frozen=True)
class RunConfig:
    """One JSON document describing a full reproducible run."""

    simulation: SimulationConfig
    prior: PriorBox
    sampler: SamplerSettings
    scheduler: SchedulerSettings
    theta: ModelParams | None = None
    observed_path: Path | None = None
    output_dir: Path | None = None


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise DataFormatError(f"{where}: missing required key {key!r}")
    return mapping[key]


def load_run_config(path) -> RunConfig:
    """Parse and validate the versioned JSON run configuration."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise DataFormatError(f"{path}: invalid JSON ({err})") from None
    version = _require(data, "schema_version", str(path))
    if version != CONFIG_SCHEMA_VERSION:
        raise DataFormatError(
            f"{path}: unsupported schema_version {version!r} "
            f"(this build reads version {CONFIG_SCHEMA_VERSION})"
        )

    sim_raw = dict(_require(data, "simulation", str(path)))
    sim_raw["obs_times"] = tuple(sim_raw.get("obs_times", ()))
    if "substrate_shape" in sim_raw:
        sim_raw["substrate_shape"] = tuple(sim_raw["substrate_shape"])
    try:
        simulation = SimulationConfig(**sim_raw)
    except TypeError as err:
        raise DataFormatError(f"{path}: simulation section: {err}") from None

    prior_raw = data.get("prior")
    if prior_raw is None:
        prior = default_prior()
    else:
        prior = PriorBox(
            np.asarray(_require(prior_raw, "lower", f"{path}: prior"), dtype=float),
            np.asarray(_require(prior_raw, "upper", f"{path}: prior"), dtype=float),
        )

    try:
        sampler = SamplerSettings(**data.get("sampler", {}))
        scheduler = SchedulerSettings(**data.get("scheduler", {}))
    except TypeError as err:
        raise DataFormatError(f"{path}: {err}") from None

    theta = None
    if "theta" in data:
        theta_raw = data["theta"]
        try:
            theta = ModelParams.from_array(
                [theta_raw[name] for name in PARAM_NAMES]
            )
        except (KeyError, TypeError):
            raise DataFormatError(
                f"{path}: theta must map every name in {PARAM_NAMES}"
            ) from None

    observed_path = None
    if data.get("observed_path"):
        observed_path = Path(data["observed_path"])
        if not observed_path.is_absolute():
            observed_path = path.parent / observed_path
        if not observed_path.exists():
            raise DataFormatError(f"{path}: observed_path {observed_path} does not exist")

    output_dir = Path(data["output_dir"]) if data.get("output_dir") else None
    return RunConfig(
        simulation=simulation, prior=prior, sampler=sampler,
        scheduler=scheduler, theta=theta,
        observed_path=observed_path, output_dir=output_dir,
    )


def write_run_config(path, config: RunConfig):
    """Serialize a RunConfig back to its JSON document."""
    sim = config.simulation
    doc = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "simulation": {
            "diffusion": sim.diffusion,
            "layer_height": sim.layer_height,
            "n_z": sim.n_z,
            "boundary_layer": sim.boundary_layer,
            "obs_times": list(sim.obs_times),
            "init_nap": sim.init_nap,
            "init_ap": sim.init_ap,
            "init_albumin": sim.init_albumin,
            "dt": sim.dt,
            "substrate_shape": list(sim.substrate_shape),
            "cell_area": sim.cell_area,
            "rho_max": sim.rho_max,
            "seed": sim.seed,
        },
        "prior": {
            "lower": config.prior.lower.tolist(),
            "upper": config.prior.upper.tolist(),
        },
        "sampler": {
            "kind": config.sampler.kind,
            "n_particles": config.sampler.n_particles,
            "n_steps": config.sampler.n_steps,
            "acc_cutoff": config.sampler.acc_cutoff,
            "epsilon": config.sampler.epsilon,
            "n_accept": config.sampler.n_accept,
            "alpha": config.sampler.alpha,
            "epsilon_floor": config.sampler.epsilon_floor,
        },
        "scheduler": {
            "workers": config.scheduler.workers,
            "strategy": config.scheduler.strategy,
        },
    }
    if config.theta is not None:
        doc["theta"] = config.theta.as_dict()
    if config.observed_path is not None:
        doc["observed_path"] = str(config.observed_path)
    if config.output_dir is not None:
        doc["output_dir"] = str(config.output_dir)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
