"""Likelihood-free calibration of the deposition model.

Two samplers approximate the posterior over the five deposition rates:

* rejection_abc: draw from the prior, simulate, keep parameters whose
  discrepancy to the observed data is below a fixed threshold;
* sabc: an annealed sampler with probabilistic acceptance; each particle's
  proposed move is accepted with probability min(1, exp(-(d_new - d_old) /
  eps)), with eps tightened every step from the current mean discrepancy.

Both are exposed as functions and as sklearn-style estimators (RejectionABC,
SABC) that fit on an observed series and leave the posterior in fitted
attributes. All sampler state evolves single-threaded between simulation
batches; simulation seeds are assigned by (step, particle index), never by
completion order, so results are identical for any worker count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .deposition import (
    DepositionSeries,
    ModelParams,
    PARAM_NAMES,
    SimulationConfig,
    simulate,
    with_seed,
)
from .errors import ConfigurationError, InferenceError
from .scheduling import SimulationExecutor
from .summaries import discrepancy_from_summaries, summarize
from .validation import as_deposition_series, check_seed

N_PARAMS = 5

#: independent uniform prior ranges, in (p_Ag, p_Ad, p_T, p_F, a_T) order
DEFAULT_PRIOR_LOWER = (5.0, 50.0, 0.5e-3, 0.1, 0.0)
DEFAULT_PRIOR_UPPER = (20.0, 150.0, 3e-3, 1.5, 10.0)

#: paper-scale sampler settings (desk-scale defaults are much smaller)
FULL_SCALE = {"n_particles": 5000, "n_steps": 30, "acc_cutoff": 1e-4}


@dataclass(frozen=True)
class PriorBox:
    """Axis-aligned box of independent uniform priors over the parameters."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != (N_PARAMS,) or upper.shape != (N_PARAMS,):
            raise ConfigurationError(
                f"prior bounds must have shape ({N_PARAMS},)"
            )
        if not np.all(np.isfinite(lower)) or not np.all(np.isfinite(upper)):
            raise ConfigurationError("prior bounds must be finite")
        if np.any(lower >= upper):
            raise ConfigurationError("prior box needs lower < upper everywhere")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def contains(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


def default_prior() -> PriorBox:
    return PriorBox(np.array(DEFAULT_PRIOR_LOWER), np.array(DEFAULT_PRIOR_UPPER))


@dataclass(frozen=True)
class Particle:
    theta: ModelParams
    weight: float
    discrepancy: float
    sim_seed: int


@dataclass(frozen=True)
class Population:
    """Weighted parameter samples approximating the posterior."""

    particles: tuple
    epsilon: float
    step: int
    kernel_cov: np.ndarray
    #: mean particle discrepancy after initialization and after each step
    mean_discrepancy_history: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "particles", tuple(self.particles))
        cov = np.asarray(self.kernel_cov, dtype=float)
        if cov.shape != (N_PARAMS, N_PARAMS):
            raise ConfigurationError("kernel_cov must be 5x5")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ConfigurationError("kernel_cov must be symmetric")
        object.__setattr__(self, "kernel_cov", cov)
        if self.particles:
            w = self.weights()
            if np.any(~np.isfinite(w)) or np.any(w < 0):
                raise ConfigurationError("particle weights must be finite and >= 0")
            if abs(float(w.sum()) - 1.0) > 1e-9:
                raise ConfigurationError(
                    f"particle weights must sum to 1, got {w.sum()!r}"
                )
            if np.any(~np.isfinite(self.thetas())) or not np.isfinite(
                np.asarray([p.discrepancy for p in self.particles])
            ).all():
                raise ConfigurationError("population contains non-finite values")

    def __len__(self) -> int:
        return len(self.particles)

    def thetas(self) -> np.ndarray:
        return np.array([p.theta.as_array() for p in self.particles]).reshape(
            len(self.particles), N_PARAMS
        )

    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.particles])

    def discrepancies(self) -> np.ndarray:
        return np.array([p.discrepancy for p in self.particles])


# --------------------------------------------------------------------------
# Sampling primitives
# --------------------------------------------------------------------------

def sample_prior(prior: PriorBox, n: int, rng: np.random.Generator) -> list:
    """n independent uniform draws from the prior box."""
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    draws = rng.uniform(prior.lower, prior.upper, size=(n, N_PARAMS))
    return [ModelParams.from_array(row) for row in draws]


_MAX_PERTURB_REJECTIONS = 10**6


def _cov_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # PSD but singular: factor through the eigendecomposition
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < -1e-8 * max(1.0, abs(vals.max())):
            raise ConfigurationError("perturbation covariance is not PSD")
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def perturb(theta: ModelParams, cov: np.ndarray, prior: PriorBox,
            rng: np.random.Generator) -> ModelParams:
    """Truncated Gaussian move centered on theta.

    Redraws until the proposal lands inside the prior box. A zero
    covariance returns theta unchanged; a covariance so mismatched to the
    box that a million draws all fall outside raises.
    """
    center = theta.as_array()
    if not prior.contains(center):
        raise ConfigurationError("theta to perturb lies outside the prior box")
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, float(np.abs(cov).max()))):
        raise ConfigurationError("perturbation covariance must be symmetric")
    if not cov.any():
        return theta
    factor = _cov_factor(cov)
    batch = 64
    for _ in range(0, _MAX_PERTURB_REJECTIONS, batch):
        proposals = center + rng.standard_normal((batch, N_PARAMS)) @ factor.T
        inside = np.all(
            (proposals >= prior.lower) & (proposals <= prior.upper), axis=1
        )
        hits = np.flatnonzero(inside)
        if hits.size:
            return ModelParams.from_array(proposals[hits[0]])
    raise InferenceError(
        "perturbation kernel rejected 10^6 consecutive proposals; "
        "covariance is pathological for this prior box"
    )


def adapt_cov(population: Population) -> np.ndarray:
    """Weighted sample covariance of the particles plus a small ridge.

    The ridge (1e-10 of the trace, or 1e-10 absolute for a degenerate
    population) keeps the kernel usable after the particles collapse.
    """
    if len(population) < 2:
        raise ConfigurationError("need >= 2 particles to adapt the kernel")
    w = population.weights()
    total = float(w.sum())
    if total <= 0:
        raise ConfigurationError("total particle weight must be > 0")
    w = w / total
    thetas = population.thetas()
    mean = w @ thetas
    centered = thetas - mean
    cov = (centered * w[:, None]).T @ centered
    cov = 0.5 * (cov + cov.T)
    trace = float(np.trace(cov))
    ridge = 1e-10 * trace if trace > 0 else 1e-10
    return cov + ridge * np.eye(N_PARAMS)


# --------------------------------------------------------------------------
# Simulation dispatch
# --------------------------------------------------------------------------

def task_seed(master_seed: int, step: int, index: int) -> int:
    """Deterministic per-task simulation seed.

    Derived from (master seed, step, task index) only, so results do not
    depend on how tasks are spread over workers or when they finish.
    """
    ss = np.random.SeedSequence(check_seed(master_seed), spawn_key=(step, index))
    return int(ss.generate_state(1, np.uint64)[0])


def _simulate_task(payload) -> DepositionSeries:
    theta_values, config, seed = payload
    return simulate(ModelParams.from_array(theta_values), with_seed(config, seed))


def _run_batch(executor, thetas, seeds, config, context) -> list:
    payloads = [
        (tuple(t.as_array()), config, s) for t, s in zip(thetas, seeds)
    ]
    out = executor.map(_simulate_task, payloads)
    out.raise_if_failed(context)
    return out.results


# --------------------------------------------------------------------------
# Samplers
# --------------------------------------------------------------------------

def rejection_abc(
    observed: DepositionSeries,
    prior: PriorBox,
    config: SimulationConfig,
    n_accept: int,
    epsilon: float,
    executor: SimulationExecutor | None = None,
    seed: int = 0,
    batch_size: int = 64,
    min_acceptance_rate: float = 1e-6,
    rate_window: int = 100_000,
) -> Population:
    """Plain rejection ABC: keep prior draws with discrepancy below epsilon.

    Accepted parameters carry equal weights. Draws are indexed globally and
    accepted in draw order, so the result is independent of batch and
    worker layout. Aborts with a diagnostic if fewer than
    `min_acceptance_rate` of the draws in a window of `rate_window`
    attempts were accepted.
    """
    if epsilon <= 0:
        raise ConfigurationError(f"epsilon must be > 0, got {epsilon}")
    if n_accept < 0:
        raise ConfigurationError(f"n_accept must be >= 0, got {n_accept}")
    seed = check_seed(seed)
    if n_accept == 0:
        return Population(
            particles=(), epsilon=float(epsilon), step=0,
            kernel_cov=np.zeros((N_PARAMS, N_PARAMS)),
        )
    executor = executor or SimulationExecutor()
    rng = np.random.Generator(np.random.Philox(key=seed))
    observed_summary = summarize(observed)

    accepted = []
    draw_index = 0
    window_attempts = 0
    window_accepts = 0
    while len(accepted) < n_accept:
        thetas = sample_prior(prior, batch_size, rng)
        seeds = [task_seed(seed, 0, draw_index + j) for j in range(batch_size)]
        series = _run_batch(
            executor, thetas, seeds, config,
            f"rejection ABC draws {draw_index}..{draw_index + batch_size - 1}",
        )
        for theta, sim_seed, sim in zip(thetas, seeds, series):
            d = discrepancy_from_summaries(observed_summary, summarize(sim))
            window_attempts += 1
            if d < epsilon:
                window_accepts += 1
                if len(accepted) < n_accept:
                    accepted.append((theta, d, sim_seed))
        draw_index += batch_size
        if window_attempts >= rate_window:
            if window_accepts / window_attempts < min_acceptance_rate:
                raise InferenceError(
                    f"rejection ABC acceptance rate collapsed: "
                    f"{window_accepts}/{window_attempts} over the last window "
                    f"(epsilon={epsilon}); raise epsilon or check the model"
                )
            window_attempts = 0
            window_accepts = 0

    weight = 1.0 / n_accept
    particles = tuple(
        Particle(theta=t, weight=weight, discrepancy=d, sim_seed=s)
        for t, d, s in accepted
    )
    population = Population(
        particles=particles, epsilon=float(epsilon), step=0,
        kernel_cov=np.zeros((N_PARAMS, N_PARAMS)),
        mean_discrepancy_history=(float(np.mean([d for _, d, _ in accepted])),),
    )
    if len(population) >= 2:
        # informative kernel for downstream use (e.g. a follow-up SABC run)
        population = Population(
            particles=particles, epsilon=float(epsilon), step=0,
            kernel_cov=adapt_cov(population),
            mean_discrepancy_history=population.mean_discrepancy_history,
        )
    return population


def sabc(
    observed: DepositionSeries,
    prior: PriorBox,
    config: SimulationConfig,
    n_particles: int = 256,
    n_steps: int = 10,
    acc_cutoff: float = 1e-4,
    executor: SimulationExecutor | None = None,
    seed: int = 0,
    alpha: float = 0.5,
    epsilon_floor: float = 1e-6,
) -> Population:
    """Annealed ABC with probabilistic acceptance.

    Particles start as prior draws with simulated discrepancies. Each step
    perturbs every particle with a kernel adapted to the current population,
    simulates the proposals, and accepts each move with probability
    min(1, exp(-(d_new - d_old) / eps)); eps is re-annealed to
    max(alpha * mean(d), epsilon_floor) after every step. Stops after
    n_steps or when a step's acceptance rate drops below acc_cutoff.
    Final weights are uniform.
    """
    if n_particles < 2:
        raise ConfigurationError(f"n_particles must be >= 2, got {n_particles}")
    if n_steps < 1:
        raise ConfigurationError(f"n_steps must be >= 1, got {n_steps}")
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    seed = check_seed(seed)
    executor = executor or SimulationExecutor()
    rng = np.random.Generator(np.random.Philox(key=seed))
    observed_summary = summarize(observed)

    # initialization: prior draws and their discrepancies
    thetas = sample_prior(prior, n_particles, rng)
    seeds = [task_seed(seed, 0, i) for i in range(n_particles)]
    series = _run_batch(executor, thetas, seeds, config, "SABC initialization")
    discreps = [
        discrepancy_from_summaries(observed_summary, summarize(s)) for s in series
    ]
    weight = 1.0 / n_particles
    particles = [
        Particle(t, weight, d, s) for t, d, s in zip(thetas, discreps, seeds)
    ]
    history = [float(np.mean(discreps))]
    epsilon = max(alpha * history[-1], epsilon_floor)
    cov = np.zeros((N_PARAMS, N_PARAMS))
    last_step = 0

    for step in range(1, n_steps + 1):
        population = Population(
            particles=tuple(particles), epsilon=epsilon, step=step - 1,
            kernel_cov=cov, mean_discrepancy_history=tuple(history),
        )
        cov = adapt_cov(population)
        proposals = [perturb(p.theta, cov, prior, rng) for p in particles]
        prop_seeds = [task_seed(seed, step, i) for i in range(n_particles)]
        series = _run_batch(
            executor, proposals, prop_seeds, config, f"SABC step {step}"
        )
        accept_draws = rng.random(n_particles)
        n_accepted = 0
        for i, (proposal, sim, sim_seed) in enumerate(
            zip(proposals, series, prop_seeds)
        ):
            d_new = discrepancy_from_summaries(observed_summary, summarize(sim))
            d_old = particles[i].discrepancy
            if d_new <= d_old or accept_draws[i] < math.exp(-(d_new - d_old) / epsilon):
                particles[i] = Particle(proposal, weight, d_new, sim_seed)
                n_accepted += 1
        last_step = step
        history.append(float(np.mean([p.discrepancy for p in particles])))
        epsilon = max(alpha * history[-1], epsilon_floor)
        if n_accepted / n_particles < acc_cutoff:
            break

    return Population(
        particles=tuple(particles), epsilon=epsilon, step=last_step,
        kernel_cov=cov, mean_discrepancy_history=tuple(history),
    )


# --------------------------------------------------------------------------
# Posterior functionals
# --------------------------------------------------------------------------

def bayes_estimate(population: Population) -> ModelParams:
    """Posterior mean (the Bayes estimator under squared loss)."""
    if len(population) == 0:
        raise ConfigurationError("cannot estimate from an empty population")
    w = population.weights()
    total = float(w.sum())
    if total <= 0:
        raise ConfigurationError("total particle weight must be > 0")
    return ModelParams.from_array((w / total) @ population.thetas())


def posterior_correlation(population: Population) -> np.ndarray:
    """Weighted Pearson correlation matrix of the five parameters.

    Parameters with zero posterior variance get zero off-diagonals (and a
    warning); the diagonal is always 1.
    """
    if len(population) < 2:
        raise ConfigurationError("need >= 2 particles for a correlation matrix")
    w = population.weights()
    w = w / float(w.sum())
    thetas = population.thetas()
    mean = w @ thetas
    centered = thetas - mean
    cov = (centered * w[:, None]).T @ centered
    var = np.diag(cov).copy()
    corr = np.eye(N_PARAMS)
    # relative threshold: a constant column leaves O(eps^2 * mean^2) of
    # round-off in the weighted variance
    degenerate = var <= (1e-12 * np.maximum(np.abs(mean), 1e-300)) ** 2
    if degenerate.any():
        names = [PARAM_NAMES[i] for i in np.flatnonzero(degenerate)]
        warnings.warn(
            f"zero posterior variance for {names}; correlations set to 0",
            stacklevel=2,
        )
    scale = np.sqrt(np.where(degenerate, 1.0, var))
    for i in range(N_PARAMS):
        for j in range(i + 1, N_PARAMS):
            if not (degenerate[i] or degenerate[j]):
                corr[i, j] = corr[j, i] = np.clip(
                    cov[i, j] / (scale[i] * scale[j]), -1.0, 1.0
                )
    return corr


@dataclass(frozen=True)
class PredictiveSummary:
    """Per-variable, per-time bands of the posterior predictive datasets."""

    times: np.ndarray            # (T,)
    mean: np.ndarray             # (4, T), variable-major
    q25: np.ndarray
    q75: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    n_draws: int = 0


def posterior_predictive(
    population: Population,
    config: SimulationConfig,
    n_draws: int = 100,
    executor: SimulationExecutor | None = None,
    rng: np.random.Generator | int = 0,
    vary_seeds: bool = True,
) -> PredictiveSummary:
    """Simulate datasets from posterior draws and summarize their spread.

    Parameters are resampled from the population multinomially by weight;
    each draw gets a fresh simulation seed unless vary_seeds is False (then
    every draw reuses config.seed, which collapses the bands for a
    point-mass posterior). Quantiles are lower order statistics:
    q = sorted[floor(q * (n - 1))].
    """
    if len(population) == 0:
        raise ConfigurationError("cannot predict from an empty population")
    if n_draws < 1:
        raise ConfigurationError(f"n_draws must be >= 1, got {n_draws}")
    executor = executor or SimulationExecutor()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.Philox(key=check_seed(rng)))
    w = population.weights()
    w = w / float(w.sum())
    indices = rng.choice(len(population), size=n_draws, p=w)
    thetas = [population.particles[i].theta for i in indices]
    if vary_seeds:
        seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=n_draws)]
    else:
        seeds = [config.seed] * n_draws
    series = _run_batch(executor, thetas, seeds, config, "posterior predictive")

    stacks = np.stack([s.variables() for s in series])   # (n_draws, T, 4)
    ordered = np.sort(stacks, axis=0)
    lo = int(math.floor(0.25 * (n_draws - 1)))
    hi = int(math.floor(0.75 * (n_draws - 1)))
    mean = stacks.mean(axis=0)
    constant = ordered[0] == ordered[-1]
    mean[constant] = ordered[0][constant]   # keep the mean inside [min, max]
    return PredictiveSummary(
        times=series[0].times,
        mean=mean.T,
        q25=ordered[lo].T,
        q75=ordered[hi].T,
        minimum=ordered[0].T,
        maximum=ordered[-1].T,
        n_draws=n_draws,
    )


# --------------------------------------------------------------------------
# sklearn-style estimators
# --------------------------------------------------------------------------

class _ABCSamplerMixin:
    """Shared fit plumbing for the ABC estimators."""

    def _executor(self) -> SimulationExecutor:
        return SimulationExecutor(
            n_workers=self.n_workers, strategy=self.strategy, backend=self.backend
        )

    def _require_config(self) -> SimulationConfig:
        if self.config is None:
            raise ConfigurationError(
                f"{type(self).__name__} needs a SimulationConfig before fitting"
            )
        return self.config

    def _finalize(self, population: Population):
        self.population_ = population
        self.bayes_estimate_ = bayes_estimate(population)
        self.correlation_ = posterior_correlation(population)
        return self

    def posterior_predictive(self, n_draws: int = 100, seed: int = 0,
                             vary_seeds: bool = True) -> PredictiveSummary:
        """Predictive bands from the fitted posterior (requires fit)."""
        if not hasattr(self, "population_"):
            raise InferenceError("call fit before posterior_predictive")
        return posterior_predictive(
            self.population_, self._require_config(), n_draws=n_draws,
            executor=self._executor(), rng=seed, vary_seeds=vary_seeds,
        )


class RejectionABC(_ABCSamplerMixin, BaseEstimator):
    """Rejection-ABC posterior sampler with the sklearn estimator API.

    fit(X) accepts the observed dataset (DepositionSeries, ObservedDataset
    or a (T, 5) array) and fills population_, bayes_estimate_ and
    correlation_.
    """

    def __init__(self, config=None, prior=None, n_accept: int = 100,
                 epsilon: float = 0.5, n_workers: int = 1,
                 strategy: str = "dynamic", backend: str = "auto",
                 seed: int = 0):
        self.config = config
        self.prior = prior
        self.n_accept = n_accept
        self.epsilon = epsilon
        self.n_workers = n_workers
        self.strategy = strategy
        self.backend = backend
        self.seed = seed

    def fit(self, X, y=None):
        observed = as_deposition_series(X)
        population = rejection_abc(
            observed,
            self.prior or default_prior(),
            self._require_config(),
            n_accept=self.n_accept,
            epsilon=self.epsilon,
            executor=self._executor(),
            seed=self.seed,
        )
        return self._finalize(population)


class SABC(_ABCSamplerMixin, BaseEstimator):
    """Annealed ABC posterior sampler with the sklearn estimator API."""

    def __init__(self, config=None, prior=None, n_particles: int = 256,
                 n_steps: int = 10, acc_cutoff: float = 1e-4,
                 alpha: float = 0.5, epsilon_floor: float = 1e-6,
                 n_workers: int = 1, strategy: str = "dynamic",
                 backend: str = "auto", seed: int = 0):
        self.config = config
        self.prior = prior
        self.n_particles = n_particles
        self.n_steps = n_steps
        self.acc_cutoff = acc_cutoff
        self.alpha = alpha
        self.epsilon_floor = epsilon_floor
        self.n_workers = n_workers
        self.strategy = strategy
        self.backend = backend
        self.seed = seed

    def fit(self, X, y=None):
        observed = as_deposition_series(X)
        population = sabc(
            observed,
            self.prior or default_prior(),
            self._require_config(),
            n_particles=self.n_particles,
            n_steps=self.n_steps,
            acc_cutoff=self.acc_cutoff,
            executor=self._executor(),
            seed=self.seed,
            alpha=self.alpha,
            epsilon_floor=self.epsilon_floor,
        )
        return self._finalize(population)
