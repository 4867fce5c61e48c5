"""Generation of the initial data (u0, v0, w0)."""

import logging
from typing import Optional

import numpy as np

from AALab.AALabEnums import InitialDataKind
from AALab.ConfigModels import DomainSpec, InitialData, InitialProfile
from AALab.Errors import ConfigurationError
from AALab.Fields import FieldState, Grid, ScalarField, cell_centers, fill_ghosts
from AALab.Snapshots import read_snapshot

logger = logging.getLogger(__name__)


def _profile_values(kind: InitialDataKind, profile: InitialProfile, grid: Grid,
                    rng: np.random.Generator) -> np.ndarray:
    centers = cell_centers(grid)
    fractional = [x / length for x, length in zip(centers, grid.lengths)]
    values = np.full(grid.shape, profile.background, dtype=np.float64)

    if kind == InitialDataKind.cosineBump:
        mode = np.ones(grid.shape)
        for x, k in zip(fractional, profile.modes):
            mode *= np.cos(k * np.pi * x)
        values += profile.amplitude * mode
    elif kind == InitialDataKind.gaussianBumps:
        if profile.centers is not None:
            bump_centers = np.asarray(profile.centers, dtype=np.float64)
        else:
            bump_centers = rng.uniform(0.0, 1.0, size=(profile.count, grid.dims))
        for center in bump_centers:
            distance_sq = sum(((x - c) / profile.width) ** 2 for x, c in zip(fractional, center))
            values += profile.amplitude * np.exp(-0.5 * distance_sq)
    elif kind == InitialDataKind.randomPerturbation:
        values *= 1.0 + profile.amplitude * rng.uniform(-1.0, 1.0, size=grid.shape)
    return np.maximum(values, 0.0)


def generate_initial_state(initial: InitialData, domain: DomainSpec, seed: int = 0,
                           grid: Optional[Grid] = None) -> FieldState:
    """Build the ghost-filled initial state for a configuration.

    Each of u, v, w draws from its own child generator of ``seed`` so the
    fields do not depend on generation order.

    Raises:
        ConfigurationError: The data are negative somewhere or u0 vanishes identically.
    """
    grid = grid or Grid.from_domain(domain)
    if initial.kind == InitialDataKind.fromSnapshot:
        state = read_snapshot(initial.snapshot_path, grid)
        state.t = 0.0
    else:
        children = np.random.SeedSequence(seed).spawn(3)
        fields = []
        for name, child in zip(("u", "v", "w"), children):
            values = _profile_values(initial.kind, getattr(initial, name), grid, np.random.default_rng(child))
            fields.append(fill_ghosts(ScalarField(grid, values)))
        state = FieldState(u=fields[0], v=fields[1], w=fields[2], t=0.0)

    if state.min_value() < 0:
        raise ConfigurationError("initial data must be nonnegative", [f"min value {state.min_value():.3e}"])
    if not np.any(state.u.interior > 0):
        raise ConfigurationError("initial data invalid", ["u0 must not vanish identically"])
    logger.debug("Initial data %s on %s cells (seed %d)", initial.kind.value, grid.cells, seed)
    return state
