"""Stochastic forward model of platelet deposition under shear flow.

The blood column above the deposition surface is treated as a continuum:
activated platelets (AP), non-activated platelets (NAP) and albumin each
follow a 1D vertical diffusion equation. A thin boundary layer just above
the substrate holds discrete particles; every time step each of them lands
on a uniformly random lattice cell and attempts to deposit. Deposition
probabilities depend on the local density of already-deposited albumin,
which competes with platelets for surface space and is what makes cluster
growth saturate.

Time evolution of one step:

    state = diffusion_step(state, config)                  # bulk, sealed ends
    grid, deposited = deposition_sweep(grid, state, ...)   # boundary layer -> lattice
    state = boundary_exchange(state, deposited, config, rng)   # bulk <-> layer

All randomness comes from a counter-based (Philox) generator keyed by the
configured seed, so a simulation is a pure function of (params, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, SimulationError

# Species indices used throughout (rows of BulkState.rho, entries of
# boundary-layer and deposited-count vectors).
AP, NAP, ALBUMIN = 0, 1, 2
SPECIES = ("AP", "NAP", "albumin")
N_SPECIES = 3

# 8-neighborhood structuring element for cluster connectivity.
_CONNECT8 = np.ones((3, 3), dtype=int)

UM2_PER_MM2 = 1e6


@dataclass(frozen=True)
class ModelParams:
    """The five deposition rates inferred by the calibration layer.

    Attributes
    ----------
    p_ag : float
        Aggregation rate (1/s): platelet lands next to an existing cluster.
    p_ad : float
        Adhesion rate (1/s): activated platelet seeds a new cluster.
    p_t : float
        On-top deposition rate (1/s): platelet lands on an occupied cell.
    p_f : float
        Albumin deposition rate per unit of free cell capacity (1/s).
    a_t : float
        Attenuation factor: albumin coverage damps platelet deposition
        as exp(-a_t * rho_al / rho_max).
    """

    p_ag: float
    p_ad: float
    p_t: float
    p_f: float
    a_t: float

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(
                    f"model parameter {name} must be finite and >= 0, got {value!r}"
                )

    def as_array(self) -> np.ndarray:
        return np.array([self.p_ag, self.p_ad, self.p_t, self.p_f, self.a_t])

    def as_dict(self) -> dict:
        return {
            "p_Ag": self.p_ag,
            "p_Ad": self.p_ad,
            "p_T": self.p_t,
            "p_F": self.p_f,
            "a_T": self.a_t,
        }

    @classmethod
    def from_array(cls, values) -> "ModelParams":
        p_ag, p_ad, p_t, p_f, a_t = (float(v) for v in values)
        return cls(p_ag, p_ad, p_t, p_f, a_t)


PARAM_NAMES = ("p_Ag", "p_Ad", "p_T", "p_F", "a_T")


@dataclass(frozen=True)
class SimulationConfig:
    """Geometry, transport and protocol settings for one simulation.

    Lengths are in mm, times in seconds, concentrations in particles per
    microlitre (1 ul = 1 mm^3). `cell_area` is in um^2; a cell holds at
    most `rho_max` albumin particles.
    """

    diffusion: float              # shear-induced diffusion coefficient (mm^2/s)
    layer_height: float           # fluid column height above the boundary layer (mm)
    n_z: int                      # vertical grid cells
    boundary_layer: float         # boundary-layer thickness (mm)
    obs_times: tuple              # observation times (s), strictly increasing from 0
    init_nap: float               # non-activated platelets per ul at t=0
    init_ap: float                # activated platelets per ul at t=0
    init_albumin: float           # albumin per ul at t=0
    dt: float = 0.01              # time step (s)
    substrate_shape: tuple = (200, 200)   # deposition lattice (rows, cols)
    cell_area: float = 5.0        # deposition cell area (um^2)
    rho_max: float = 100_000.0    # albumin capacity of one cell
    seed: int = 0                 # 64-bit RNG seed

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if self.n_z < 2:
            raise ConfigurationError(f"n_z must be >= 2, got {self.n_z}")
        if self.layer_height <= 0 or self.boundary_layer <= 0:
            raise ConfigurationError("layer_height and boundary_layer must be > 0")
        if self.diffusion < 0:
            raise ConfigurationError("diffusion coefficient must be >= 0")
        rows, cols = self.substrate_shape
        if rows < 1 or cols < 1:
            raise ConfigurationError(f"bad substrate_shape {self.substrate_shape}")
        if self.cell_area <= 0 or self.rho_max <= 0:
            raise ConfigurationError("cell_area and rho_max must be > 0")
        for name in ("init_nap", "init_ap", "init_albumin"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        times = tuple(float(t) for t in self.obs_times)
        if len(times) == 0 or times[0] != 0.0:
            raise ConfigurationError("obs_times must start at 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigurationError("obs_times must be strictly increasing")
        object.__setattr__(self, "obs_times", times)
        object.__setattr__(self, "substrate_shape", (int(rows), int(cols)))
        for t in times:
            steps = t / self.dt
            if abs(steps - round(steps)) > 1e-6:
                raise ConfigurationError(
                    f"observation time {t} is not a multiple of dt={self.dt}"
                )
        # Explicit-scheme stability: interior update and the bulk/boundary-layer
        # exchange must both move at most the available mass per step.
        if self.stability_number > 0.5:
            raise ConfigurationError(
                f"unstable diffusion discretization: D*dt/dz^2 = "
                f"{self.stability_number:.3g} > 0.5 (refine dt or coarsen n_z)"
            )
        frac_bl = self.diffusion * self.dt / (self.exchange_gap * self.boundary_layer)
        frac_bulk = self.diffusion * self.dt / (self.exchange_gap * self.dz)
        if frac_bl > 1.0 or frac_bulk > 1.0:
            raise ConfigurationError(
                "unstable boundary-layer exchange: more than the available mass "
                f"would move per step (fractions {frac_bulk:.3g}, {frac_bl:.3g})"
            )

    # cached_property writes through the instance dict, which frozen
    # dataclasses allow; these are pure functions of the frozen fields
    @cached_property
    def dz(self) -> float:
        return self.layer_height / self.n_z

    @cached_property
    def stability_number(self) -> float:
        return self.diffusion * self.dt / self.dz**2

    @cached_property
    def exchange_gap(self) -> float:
        """Distance between the lowest bulk cell center and the boundary layer."""
        return 0.5 * (self.dz + self.boundary_layer)

    @cached_property
    def n_cells(self) -> int:
        rows, cols = self.substrate_shape
        return rows * cols

    @cached_property
    def substrate_area_mm2(self) -> float:
        return self.n_cells * self.cell_area / UM2_PER_MM2

    @cached_property
    def sample_volume_ul(self) -> float:
        """Total fluid volume above the substrate (bulk + boundary layer)."""
        return self.substrate_area_mm2 * (self.layer_height + self.boundary_layer)

    @cached_property
    def n_steps(self) -> int:
        return int(round(self.obs_times[-1] / self.dt))

    def obs_step_indices(self) -> tuple:
        return tuple(int(round(t / self.dt)) for t in self.obs_times)


def with_seed(config: SimulationConfig, seed: int) -> SimulationConfig:
    """Copy of config with a different RNG seed."""
    return replace(config, seed=int(seed))


@dataclass
class BulkState:
    """Continuum densities plus discrete boundary-layer counts.

    `rho` has one row per species (AP, NAP, albumin), in particles/ul over
    the n_z vertical cells; `boundary` holds the total number of particles
    of each species currently in the boundary layer over the whole
    substrate (per-surface-element counts are boundary / n_cells). Inside a
    simulation the exchange operator keeps the boundary entries integer-
    valued whenever the bottom bulk cell holds at least one particle's
    worth of mass (transfers are capped at the available mass, so extremely
    dilute species can carry a sub-unit remainder).
    """

    rho: np.ndarray        # (3, n_z)
    boundary: np.ndarray   # (3,)

    @property
    def rho_ap(self) -> np.ndarray:
        return self.rho[AP]

    @property
    def rho_nap(self) -> np.ndarray:
        return self.rho[NAP]

    @property
    def rho_al(self) -> np.ndarray:
        return self.rho[ALBUMIN]

    def copy(self) -> "BulkState":
        return BulkState(self.rho.copy(), self.boundary.copy())

    def species_totals(self, config: SimulationConfig) -> np.ndarray:
        """Suspended particles per species: bulk mass plus boundary layer."""
        cell_volume = config.substrate_area_mm2 * config.dz
        return self.rho.sum(axis=1) * cell_volume + self.boundary


def initial_state(config: SimulationConfig) -> BulkState:
    rho = np.empty((N_SPECIES, config.n_z))
    rho[AP] = config.init_ap
    rho[NAP] = config.init_nap
    rho[ALBUMIN] = config.init_albumin
    return BulkState(rho=rho, boundary=np.zeros(N_SPECIES))


@dataclass
class SubstrateGrid:
    """2D deposition lattice.

    `albumin` is the deposited albumin count per cell (capped at rho_max);
    `stack` is the number of platelets piled on each cell. Cluster labels
    are derived on demand from the occupancy footprint.

    The grid keeps an adjacency mask (cells with at least one occupied
    8-neighbor) in sync as deposition_sweep adds platelets; call
    refresh_adjacency() after mutating `stack` directly.
    """

    albumin: np.ndarray    # (rows, cols) float
    stack: np.ndarray      # (rows, cols) int
    cell_area: float = 5.0
    rho_max: float = 100_000.0

    def __post_init__(self):
        self.refresh_adjacency()

    @classmethod
    def empty(cls, config: SimulationConfig) -> "SubstrateGrid":
        rows, cols = config.substrate_shape
        return cls(
            albumin=np.zeros((rows, cols)),
            stack=np.zeros((rows, cols), dtype=np.int64),
            cell_area=config.cell_area,
            rho_max=config.rho_max,
        )

    @property
    def occupied(self) -> np.ndarray:
        return self.stack > 0

    def refresh_adjacency(self):
        """Rebuild the internal caches; call after mutating stack or albumin
        arrays directly (deposition_sweep keeps them in sync itself)."""
        occupied = self.occupied
        if occupied.any():
            self._adjacent = ndimage.binary_dilation(
                occupied, structure=_CONNECT8
            ).astype(np.uint8)
        else:
            self._adjacent = np.zeros(self.stack.shape, dtype=np.uint8)
        self._albumin_total = float(self.albumin.sum())

    def cluster_labels(self) -> np.ndarray:
        """Connected-component label per cell (0 where platelet-free)."""
        labels, _ = ndimage.label(self.occupied, structure=_CONNECT8)
        return labels

    def copy(self) -> "SubstrateGrid":
        return SubstrateGrid(
            self.albumin.copy(), self.stack.copy(), self.cell_area, self.rho_max
        )


@dataclass(frozen=True)
class DepositionSeries:
    """The four observables recorded at the observation times.

    s_agg: mean cluster footprint area (um^2); n_agg: clusters per mm^2;
    n_plt / n_act: non-activated / activated platelets per ul still in
    suspension.
    """

    times: np.ndarray
    s_agg: np.ndarray
    n_agg: np.ndarray
    n_plt: np.ndarray
    n_act: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("times", "s_agg", "n_agg", "n_plt", "n_act"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            arrays[name] = arr
        n = len(arrays["times"])
        for name, arr in arrays.items():
            if arr.ndim != 1 or len(arr) != n:
                raise ConfigurationError(
                    f"series {name} must be 1D of length {n}, got shape {arr.shape}"
                )
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ConfigurationError(
                    f"series {name} contains negative/non-finite values"
                )

    def __len__(self) -> int:
        return len(self.times)

    def variables(self) -> np.ndarray:
        """(T, 4) matrix in the fixed order (s_agg, n_agg, n_plt, n_act)."""
        return np.column_stack([self.s_agg, self.n_agg, self.n_plt, self.n_act])


VARIABLE_NAMES = ("S_agg_um2", "N_agg_per_mm2", "N_plt_per_ul", "N_act_per_ul")


# --------------------------------------------------------------------------
# Bulk transport
# --------------------------------------------------------------------------

def diffusion_step(state: BulkState, config: SimulationConfig) -> BulkState:
    """Advance the bulk densities one dt with both ends sealed.

    Explicit central differences in flux form, so the column total of each
    species is conserved to round-off. The bottom coupling to the boundary
    layer is applied separately by boundary_exchange.
    """
    rho = state.rho
    lam = config.stability_number
    flux = lam * (rho[:, 1:] - rho[:, :-1])   # interior face transfers
    new = rho.copy()
    new[:, :-1] += flux
    new[:, 1:] -= flux
    return BulkState(rho=new, boundary=state.boundary.copy())


def boundary_exchange(
    state: BulkState,
    deposited,
    config: SimulationConfig,
    rng: np.random.Generator | None = None,
) -> BulkState:
    """Exchange mass between the lowest bulk cell and the boundary layer.

    The diffusive transfer across the z=0 interface feeds the boundary
    layer; particles that failed to deposit accumulate there and flow back
    into the bulk when the gradient reverses. `deposited` (count per
    species) is removed from the boundary layer: those particles are now on
    the substrate.

    With an rng, the transfer is rounded stochastically (unbiased) to whole
    particles so the boundary layer holds an integer count per species;
    without one the exact fractional transfer is applied.
    """
    area = config.substrate_area_mm2
    bl_volume = area * config.boundary_layer
    cell_mass = area * config.dz          # converts density to particle count
    rate = config.diffusion * config.dt / config.exchange_gap * area
    unit_draws = rng.random(N_SPECIES).tolist() if rng is not None else None

    # plain-float arithmetic: numpy scalars are an order of magnitude slower
    dep_list = np.asarray(deposited, dtype=float).tolist()
    bl_list = state.boundary.tolist()
    bottom = state.rho[:, 0].tolist()
    new_bottom = [0.0] * N_SPECIES
    new_boundary = [0.0] * N_SPECIES
    for s in range(N_SPECIES):
        dep = dep_list[s]
        if dep < 0:
            raise SimulationError(f"negative deposited count for {SPECIES[s]}")
        remaining = bl_list[s] - dep
        if remaining < 0:
            if remaining > -1e-9 * max(1.0, dep):
                remaining = 0.0   # round-off
            else:
                raise SimulationError(
                    f"boundary-layer count for {SPECIES[s]} went negative "
                    f"({remaining!r}); deposited more than available"
                )
        rho0 = bottom[s]
        # particles moved bulk -> layer this step (negative = re-injection);
        # deposited particles left the layer before the exchange.
        transfer = rate * (rho0 - remaining / bl_volume)
        if unit_draws is not None:
            whole = math.floor(transfer)
            transfer = whole + (unit_draws[s] < transfer - whole)
            # never move more than either side holds
            transfer = max(transfer, -remaining)
            if transfer >= rho0 * cell_mass:
                transfer = rho0 * cell_mass
                new_bottom[s] = 0.0   # exact, avoids 1-ulp undershoot
            else:
                new_bottom[s] = rho0 - transfer / cell_mass
        else:
            new_bottom[s] = rho0 - transfer / cell_mass
        new_boundary[s] = remaining + transfer

    new_rho = state.rho.copy()
    new_rho[:, 0] = new_bottom
    return BulkState(rho=new_rho, boundary=np.array(new_boundary))


# --------------------------------------------------------------------------
# Deposition probabilities (scalar or array arguments)
# --------------------------------------------------------------------------

def albumin_deposit_prob(rho_al_cell, params: ModelParams, config: SimulationConfig):
    """Per-hit probability that an albumin deposits on a cell.

    Proportional to the remaining free capacity of the cell, converted to
    a per-step probability via dt and clamped to [0, 1].
    """
    raw = params.p_f * (config.rho_max - np.asarray(rho_al_cell)) * config.dt
    return np.clip(raw, 0.0, 1.0)


def _attenuated_prob(rate, rho_al_cell, params, config):
    scaled = np.asarray(rho_al_cell) / config.rho_max
    raw = rate * np.exp(-params.a_t * scaled) * config.dt
    return np.clip(raw, 0.0, 1.0)


def adhesion_prob(rho_al_cell, params: ModelParams, config: SimulationConfig):
    """Per-hit probability that an AP seeds a new cluster on a platelet-free
    cell; decays exponentially with the cell's albumin coverage."""
    return _attenuated_prob(params.p_ad, rho_al_cell, params, config)


def aggregation_prob(rho_al_cell, params: ModelParams, config: SimulationConfig):
    """Per-hit probability that a platelet joins a cluster it landed next to."""
    return _attenuated_prob(params.p_ag, rho_al_cell, params, config)


def on_top_prob(rho_al_cell, params: ModelParams, config: SimulationConfig):
    """Per-hit probability that a platelet deposits on top of an occupied
    cell; same attenuated form as the lateral events, with rate p_t."""
    return _attenuated_prob(params.p_t, rho_al_cell, params, config)


# --------------------------------------------------------------------------
# Lattice deposition
# --------------------------------------------------------------------------

def deposition_sweep(
    grid: SubstrateGrid,
    state: BulkState,
    params: ModelParams,
    config: SimulationConfig,
    rng: np.random.Generator,
):
    """Let every whole particle in the boundary layer attempt one deposition.

    Each particle lands on a uniformly random cell. Albumin deposits with
    probability P (free-space law, capped at rho_max per cell). Activated
    platelets seed new clusters on isolated platelet-free cells (Q); both
    platelet species aggregate next to existing clusters (R) or pile on top
    of occupied cells (p_t form). Activated platelets are processed before
    non-activated ones; failed particles stay in the boundary layer.

    The grid is updated in place. Returns (grid, deposited) where
    `deposited` counts the particles per species that left the boundary
    layer; the caller removes them via boundary_exchange. Fractional
    boundary counts are floored to whole attempts.
    """
    deposited = np.zeros(N_SPECIES)
    rows, cols = grid.stack.shape
    n_cells = rows * cols
    albumin_flat = grid.albumin.reshape(-1)

    n_ap = int(state.boundary[AP])
    n_nap = int(state.boundary[NAP])
    n_al = int(state.boundary[ALBUMIN])
    if n_al > 0 and (
        params.p_f == 0.0 or grid._albumin_total >= config.rho_max * n_cells
    ):
        n_al = 0   # nothing can deposit: zero rate or saturated lattice
    total = n_ap + n_nap + n_al
    if total == 0:
        return grid, deposited

    cells = rng.integers(0, n_cells, size=total)
    draws = rng.random(total)

    # Albumin: vectorized batch against the pre-sweep albumin field (one-step
    # batch discretization), then capped per cell at rho_max. Same law as
    # albumin_deposit_prob; the clamp is implicit in `draws < p` because p is
    # never negative here (albumin <= rho_max).
    if n_al > 0:
        al_cells = cells[n_ap + n_nap:]
        p = (config.rho_max - albumin_flat[al_cells]) * (params.p_f * config.dt)
        hits = al_cells[draws[n_ap + n_nap:] < p]
        if hits.size:
            np.add.at(albumin_flat, hits, 1.0)
            landed = albumin_flat[hits]
            returned = 0.0
            if landed.max() > config.rho_max:
                # overfull cells bounce the excess back to the boundary layer
                over_cells = np.unique(hits[landed > config.rho_max])
                excess = albumin_flat[over_cells] - config.rho_max
                albumin_flat[over_cells] = config.rho_max
                returned = float(excess.sum())
            dep_al = float(hits.size) - returned
            deposited[ALBUMIN] = dep_al
            grid._albumin_total += dep_al

    # Platelets: sequential, so cluster growth within the sweep is visible
    # to later particles (AP first, then NAP). Scalar fast path of the
    # probability formulas above; clamped the same way.
    stack_flat = grid.stack.reshape(-1)
    adjacent_flat = grid._adjacent.reshape(-1)
    rho_max = config.rho_max
    a_t = params.a_t
    base_top = params.p_t * config.dt
    base_agg = params.p_ag * config.dt
    base_adh = params.p_ad * config.dt
    exp = math.exp

    for species, lo, hi, can_seed in ((AP, 0, n_ap, True), (NAP, n_ap, n_ap + n_nap, False)):
        if hi == lo:
            continue
        count = 0
        for cell, u in zip(cells[lo:hi].tolist(), draws[lo:hi].tolist()):
            if stack_flat[cell] > 0:
                base = base_top
            elif adjacent_flat[cell]:
                base = base_agg
            elif can_seed:
                base = base_adh
            else:
                continue   # NAP cannot seed a cluster on an isolated cell
            p = base * exp(-a_t * albumin_flat[cell] / rho_max)
            if u < p:
                if stack_flat[cell] == 0:
                    r, c = divmod(cell, cols)
                    grid._adjacent[
                        max(0, r - 1): r + 2, max(0, c - 1): c + 2
                    ] = 1
                stack_flat[cell] += 1
                count += 1
        deposited[species] = count

    return grid, deposited


def cluster_census(grid: SubstrateGrid):
    """Count clusters (8-connected occupied components) and their mean
    footprint area in um^2. An empty grid yields (0, 0.0)."""
    occupied = grid.occupied
    n_occupied = int(occupied.sum())
    if n_occupied == 0:
        return 0, 0.0
    _, count = ndimage.label(occupied, structure=_CONNECT8)
    return count, n_occupied * grid.cell_area / count


# --------------------------------------------------------------------------
# Full forward simulation
# --------------------------------------------------------------------------

def _observe(grid, state, config):
    count, mean_area = cluster_census(grid)
    totals = state.species_totals(config)
    volume = config.sample_volume_ul
    return (
        mean_area,
        count / config.substrate_area_mm2,
        totals[NAP] / volume,
        totals[AP] / volume,
    )


def simulate(params: ModelParams, config: SimulationConfig) -> DepositionSeries:
    """Run the deposition model and record the observables of the protocol.

    Deterministic given (params, config) including config.seed. Raises
    SimulationError naming the step and species if a count goes negative.
    """
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    state = initial_state(config)
    grid = SubstrateGrid.empty(config)

    records = {0: _observe(grid, state, config)}
    want = set(config.obs_step_indices())
    for step in range(1, config.n_steps + 1):
        state = diffusion_step(state, config)
        grid, deposited = deposition_sweep(grid, state, params, config, rng)
        try:
            state = boundary_exchange(state, deposited, config, rng)
        except SimulationError as err:
            raise SimulationError(f"step {step}: {err}") from err
        if step in want:
            if np.any(state.rho < 0):
                sp = int(np.argwhere(state.rho < 0)[0][0])
                raise SimulationError(
                    f"step {step}: bulk density of {SPECIES[sp]} went negative"
                )
            records[step] = _observe(grid, state, config)

    data = np.array([records[s] for s in config.obs_step_indices()])
    return DepositionSeries(
        times=np.array(config.obs_times),
        s_agg=data[:, 0],
        n_agg=data[:, 1],
        n_plt=data[:, 2],
        n_act=data[:, 3],
    )
