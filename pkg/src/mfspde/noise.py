"""Brownian and Poisson drivers for every scenario.

Each scenario draws from its own Philox stream keyed by
``(master_seed, scenario)``, so any subset of scenarios, generated in any
order or on any number of workers, reproduces bit for bit.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class LevyMeasure:
    """Finite-activity Levy measure: marks e_k != 0 with intensities nu_k > 0."""

    marks: tuple[float, ...] = ()
    intensities: tuple[float, ...] = ()

    def __post_init__(self):
        marks = tuple(float(e) for e in self.marks)
        nus = tuple(float(v) for v in self.intensities)
        if len(marks) != len(nus):
            raise ValueError("marks and intensities must have the same length")
        if any(e == 0.0 for e in marks):
            raise ValueError("Levy marks must be nonzero")
        if any(not v > 0.0 for v in nus):
            raise ValueError("Levy intensities must be > 0")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "intensities", nus)

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    @property
    def e(self) -> np.ndarray:
        return np.array(self.marks, dtype=float)

    @property
    def nu(self) -> np.ndarray:
        return np.array(self.intensities, dtype=float)

    @property
    def total_intensity(self) -> float:
        return float(sum(self.intensities))

    @property
    def second_moment(self) -> float:
        return float(np.sum(self.nu * self.e**2))


DEFAULT_LEVY = LevyMeasure(marks=(-0.3, 0.5), intensities=(1.0, 1.0))


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T={self.T} must be > 0")
        if self.n_steps < 1:
            raise ValueError(f"n_steps={self.n_steps} must be >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class NoisePath:
    """dW[s, t] and jump_counts[s, t, k] for s < n_scenarios, t < n_steps."""

    dW: np.ndarray
    jump_counts: np.ndarray
    time_grid: TimeGrid
    levy: LevyMeasure
    master_seed: int
    scenario_ids: np.ndarray

    @property
    def n_scenarios(self) -> int:
        return self.dW.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]

    @property
    def dt(self) -> float:
        return self.time_grid.dt

    def compensated(self) -> np.ndarray:
        """Compensated counts N_k - nu_k dt, shape (scenario, step, mark)."""
        return self.jump_counts - self.levy.nu * self.dt

    def subset(self, scenarios) -> NoisePath:
        idx = np.asarray(scenarios)
        return NoisePath(
            self.dW[idx],
            self.jump_counts[idx],
            self.time_grid,
            self.levy,
            self.master_seed,
            self.scenario_ids[idx],
        )

    def zero_brownian(self) -> NoisePath:
        return NoisePath(
            np.zeros_like(self.dW), self.jump_counts, self.time_grid, self.levy, self.master_seed, self.scenario_ids
        )


def scenario_generator(master_seed: int, scenario: int) -> np.random.Generator:
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, int(scenario)])
    return np.random.Generator(np.random.Philox(seq))


def _draw_scenario(master_seed, scenario, n_steps, dt, nu_dt):
    rng = scenario_generator(master_seed, scenario)
    dw = rng.normal(0.0, np.sqrt(dt), size=n_steps)
    if nu_dt.size:
        counts = rng.poisson(nu_dt, size=(n_steps, nu_dt.size))
    else:
        counts = np.zeros((n_steps, 0), dtype=np.int64)
    return dw, counts


def sample_noise(
    time_grid: TimeGrid,
    levy: LevyMeasure,
    n_scenarios: int,
    master_seed: int,
    workers: int = 1,
    first_scenario: int = 0,
) -> NoisePath:
    if n_scenarios < 1:
        raise ValueError(f"n_scenarios={n_scenarios} must be >= 1")
    ids = np.arange(first_scenario, first_scenario + n_scenarios)
    n, dt = time_grid.n_steps, time_grid.dt
    nu_dt = levy.nu * dt
    dW = np.empty((n_scenarios, n))
    counts = np.empty((n_scenarios, n, levy.n_marks), dtype=np.int64)

    def fill(chunk):
        for i in chunk:
            dW[i], counts[i] = _draw_scenario(master_seed, ids[i], n, dt, nu_dt)

    chunks = np.array_split(np.arange(n_scenarios), max(1, int(workers)))
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            list(pool.map(fill, chunks))
    else:
        for c in chunks:
            fill(c)
    return NoisePath(dW, counts, time_grid, levy, int(master_seed), ids)


def compensated_jump_increment(counts, levy: LevyMeasure, dt: float, theta_values) -> float:
    """sum_k theta_k * (count_k - nu_k dt): one step of the integral against N~."""
    counts = np.asarray(counts, dtype=float)
    theta_values = np.asarray(theta_values, dtype=float)
    if counts.shape[-1:] != (levy.n_marks,) or theta_values.shape[-1:] != (levy.n_marks,):
        raise ValueError(
            f"expected {levy.n_marks} marks, got counts {counts.shape} and theta {theta_values.shape}"
        )
    if not dt > 0:
        raise ValueError("dt must be > 0")
    return np.sum(theta_values * (counts - levy.nu * dt), axis=-1)


def write_noise_csv(path: str | Path, noise: NoisePath) -> None:
    """One row per (scenario, step): scenario, step, dW, count_1..count_K."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "step", "dW"] + [f"count_{k + 1}" for k in range(noise.levy.n_marks)])
        for s in range(noise.n_scenarios):
            for t in range(noise.n_steps):
                w.writerow(
                    [int(noise.scenario_ids[s]), t, format(noise.dW[s, t], ".17g")]
                    + [int(c) for c in noise.jump_counts[s, t]]
                )
