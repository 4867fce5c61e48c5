from pathlib import Path
from typing import Sequence

import numpy as np
import pytest

from AALab.ConfigModels import DomainSpec, InitialData, InitialProfile, LabConfig, ModelParams, RunSpec
from AALab.AALabEnums import InitialDataKind
from AALab.Fields import FieldState, Grid, ScalarField, fill_ghosts

MINIMAL_TOML = """\
[model]
chi1 = 1.0
chi2 = 1.0
mu1 = 2.0
mu2 = 2.0
"""


def make_grid(cells: Sequence[int], lengths: Sequence[float] = None) -> Grid:
    lengths = list(lengths) if lengths is not None else [1.0] * len(cells)
    return Grid(dims=len(cells), cells=list(cells), lengths=lengths)


def make_field(grid: Grid, values) -> ScalarField:
    return fill_ghosts(ScalarField(grid, np.asarray(values, dtype=np.float64)))


def random_state(grid: Grid, seed: int = 0, low: float = 0.5, high: float = 2.0) -> FieldState:
    rng = np.random.default_rng(seed)
    u, v, w = (make_field(grid, rng.uniform(low, high, size=grid.shape)) for _ in range(3))
    return FieldState(u=u, v=v, w=w)


def make_config(model: ModelParams, cells=(32,), lengths=None, initial: InitialData = None, **run_values) -> LabConfig:
    lengths = list(lengths) if lengths is not None else [1.0] * len(cells)
    return LabConfig(
        model=model,
        domain=DomainSpec(dims=len(cells), lengths=lengths, cells=list(cells)),
        run=RunSpec(**run_values),
        initial=initial or InitialData(),
    )


def constant_initial(u: float, v: float, w: float) -> InitialData:
    return InitialData(kind=InitialDataKind.constant, u=InitialProfile(background=u),
                       v=InitialProfile(background=v), w=InitialProfile(background=w))


def cosine_initial(background: float = 1.0, amplitude: float = 0.5, modes=(1,)) -> InitialData:
    profile = InitialProfile(background=background, amplitude=amplitude, modes=list(modes))
    return InitialData(kind=InitialDataKind.cosineBump, u=profile, v=profile, w=profile)


@pytest.fixture
def quadratic_params() -> ModelParams:
    return ModelParams(chi1=1.0, chi2=1.0, mu1=1.0, mu2=1.0)


@pytest.fixture
def equilibrium_config(quadratic_params) -> LabConfig:
    """Homogeneous steady state (2, 2, 4) of mu1 = mu2 = 1, r = 0."""
    return make_config(quadratic_params, cells=(16,), initial=constant_initial(2.0, 2.0, 4.0),
                       t_end=1.0, output_every=0.25, dt_max=0.05)


@pytest.fixture
def minimal_config_path(tmp_path) -> Path:
    path = tmp_path / "minimal.toml"
    path.write_text(MINIMAL_TOML, encoding="utf-8")
    return path
