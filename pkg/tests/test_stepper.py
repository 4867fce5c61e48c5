import math

import numpy as np
import pytest

from AALab.AALabEnums import FluxScheme, InitialDataKind, RunClassification, StepStatus
from AALab.Analytics import homogeneous_ode_trajectory, reaction_rates
from AALab.ConfigModels import InitialData, InitialProfile, ModelParams
from AALab.Errors import LinearSolverError
from AALab.Fields import FieldState, ScalarField, cell_centers, chemotactic_face_fluxes, integral
from AALab.Snapshots import read_snapshot
from AALab.Stepper import StepControl, compute_dt, explicit_update, implicit_diffuse, run, step

from conftest import constant_initial, cosine_initial, make_config, make_field, make_grid, random_state


def _control(dt: float, adaptive: bool = False, **values) -> StepControl:
    return StepControl(dt_current=dt, dt_max=dt, adaptive=adaptive, **values)


def _params(**overrides) -> ModelParams:
    values = dict(chi1=1.0, chi2=1.0, mu1=1.0, mu2=1.0)
    values.update(overrides)
    return ModelParams(**values)


def test_compute_dt_without_stiffness_is_dt_max():
    grid = make_grid((16,))
    state = FieldState.homogeneous(grid, 0.0, 0.0, 0.0)
    assert compute_dt(state, _params(), _control(1e-2, adaptive=True)) == 1e-2


def test_compute_dt_scales_with_sensitivity():
    grid = make_grid((32,))
    (x,) = cell_centers(grid)
    u = ScalarField.constant(grid, 0.01)
    state = FieldState(u=u, v=u.copy(), w=make_field(grid, 100.0 * x))
    ctl = _control(1.0, adaptive=True)
    dt_one = compute_dt(state, _params(chi1=1.0, chi2=1.0), ctl)
    dt_two = compute_dt(state, _params(chi1=2.0, chi2=2.0), ctl)
    assert dt_one == pytest.approx(0.4 * (1.0 / 32) / 100.0)
    assert dt_two == pytest.approx(0.5 * dt_one)


def test_compute_dt_reaction_limit():
    grid = make_grid((8,))
    state = FieldState.homogeneous(grid, 1e6, 0.0, 0.0)
    dt = compute_dt(state, _params(mu1=1.0, r1=2.0), _control(1.0, adaptive=True))
    assert dt <= 0.4 / 2e6


def test_implicit_diffuse_preserves_constants():
    grid = make_grid((12, 7))
    solution = implicit_diffuse(ScalarField.constant(grid, 3.25), 0.5, 0.0)
    assert np.all(solution.field.interior == 3.25)
    decayed = implicit_diffuse(ScalarField.constant(grid, 3.25), 0.5, 1.0)
    assert decayed.field.interior == pytest.approx(3.25 / 1.5, rel=1e-10)


@pytest.mark.parametrize("length", [1.0, 3.0])
def test_implicit_diffuse_damps_cosine_mode_exactly(length):
    cells, dt = 40, 0.05
    grid = make_grid((cells,), (length,))
    (x,) = cell_centers(grid)
    mode = np.cos(np.pi * x / length)
    h = length / cells
    eigenvalue = 2.0 * (1.0 - math.cos(math.pi * h / length)) / h ** 2
    solution = implicit_diffuse(make_field(grid, mode), dt, 0.0)
    assert solution.field.interior == pytest.approx(mode / (1.0 + dt * eigenvalue), abs=1e-9)


def test_diffusion_decay_rate_converges_at_second_order():
    dt = 1e-3

    def rate_error(cells: int) -> float:
        grid = make_grid((cells,))
        (x,) = cell_centers(grid)
        mode = np.cos(np.pi * x)
        solved = implicit_diffuse(make_field(grid, mode), dt, 0.0).field.interior
        measured = (mode[0] / solved[0] - 1.0) / dt
        return abs(measured - math.pi ** 2)

    errors = [rate_error(n) for n in (64, 128, 256, 512)]
    for coarse, fine in zip(errors, errors[1:]):
        assert 3.4 <= coarse / fine <= 4.6


def test_implicit_diffuse_reports_non_convergence():
    grid = make_grid((64,))
    field = make_field(grid, np.random.default_rng(0).uniform(0, 1, size=grid.shape))
    with pytest.raises(LinearSolverError) as error:
        implicit_diffuse(field, 10.0, 0.0, linear_tol=1e-300)
    assert error.value.iterations > 0
    assert error.value.residual > error.value.tolerance


def test_step_keeps_equilibrium():
    grid = make_grid((16,))
    state = FieldState.homogeneous(grid, 2.0, 2.0, 4.0)
    ctl = _control(1e-2)
    outcome = step(state, _params(), ctl, dt_limit=4e-3)
    assert outcome.status == StepStatus.advanced
    assert outcome.state.t == pytest.approx(4e-3)
    assert ctl.dt_current == outcome.dt == pytest.approx(4e-3)
    for field, value in zip(outcome.state.fields(), (2.0, 2.0, 4.0)):
        assert np.abs(field.interior - value).max() < 1e-10


def test_step_keeps_origin():
    grid = make_grid((8, 8))
    outcome = step(FieldState.homogeneous(grid, 0.0, 0.0, 0.0), _params(r=1.0), _control(1e-2))
    assert outcome.status == StepStatus.advanced
    assert all(np.all(field.interior == 0.0) for field in outcome.state.fields())


def _homogeneous_error(dt: float, params: ModelParams = None, y0=(1.0, 1.0, 1.0), t_end: float = 1.0) -> float:
    params = params or _params()
    state = FieldState.homogeneous(make_grid((4,)), *y0)
    ctl = _control(dt)
    for _ in range(int(round(t_end / dt))):
        outcome = step(state, params, ctl)
        assert outcome.status == StepStatus.advanced
        state = outcome.state
    oracle = homogeneous_ode_trajectory(params, y0, t_end, 1e-4).final
    computed = np.array([field.interior.mean() for field in state.fields()])
    return float(np.max(np.abs(computed - oracle) / np.abs(oracle)))


def test_homogeneous_data_follow_the_ode():
    assert _homogeneous_error(1e-2) < 1e-2


@pytest.mark.slow
@pytest.mark.parametrize("case", range(10))
def test_homogeneous_consistency_is_first_order(case):
    rng = np.random.default_rng(100 + case)
    exponents = (2.0, 2.5, 3.0)
    params = _params(mu1=rng.uniform(0.5, 2.0), mu2=rng.uniform(0.5, 2.0), r=rng.uniform(0.0, 1.0),
                     r1=exponents[case % 3], r2=exponents[(case // 3) % 3])
    y0 = tuple(float(value) for value in rng.uniform(0.5, 2.0, size=3))
    errors = [_homogeneous_error(dt, params, y0) for dt in (1e-2, 5e-3, 2.5e-3)]
    for coarse, fine in zip(errors, errors[1:]):
        assert 0.8 <= math.log2(coarse / fine) <= 1.2


@pytest.mark.parametrize("cells", [(24,), (10, 8)])
def test_step_changes_mass_only_through_reactions(cells):
    params = _params(chi1=3.0, chi2=0.5, r=0.7)
    state = random_state(make_grid(cells), seed=13)
    before = [integral(field) for field in state.fields()]
    rates = reaction_rates(state.u.interior, state.v.interior, state.w.interior, params)
    vol = state.grid.cell_volume
    outcome = step(state, params, _control(1e-3))
    assert outcome.status == StepStatus.advanced
    dt = outcome.dt
    u_new, v_new, w_new = (integral(field) for field in outcome.state.fields())
    assert u_new - before[0] == pytest.approx(dt * float(rates[0].sum()) * vol, abs=1e-10)
    assert v_new - before[1] == pytest.approx(dt * float(rates[1].sum()) * vol, abs=1e-10)
    # the decay of w is implicit
    assert w_new * (1.0 + dt) == pytest.approx(before[2] + dt * (before[0] + before[1]), abs=1e-10)


def test_regularization_weakens_chemotactic_update():
    grid = make_grid((12, 9))
    rng = np.random.default_rng(21)
    w = make_field(grid, rng.uniform(0, 4, size=grid.shape))
    u = ScalarField.constant(grid, 2.5)
    state = FieldState(u=u, v=u.copy(), w=w)
    previous = None
    for eps in (0.0, 0.05, 0.2, 1.0):
        stage = explicit_update(state.copy(), _params(chi1=4.0, epsilon=eps), FluxScheme.central, 1e-3)
        magnitude = np.abs(stage.chem_u.interior)
        if previous is not None:
            assert np.all(magnitude <= previous + 1e-12)
        previous = magnitude


@pytest.mark.parametrize("scheme", list(FluxScheme))
def test_regularization_weakens_face_fluxes(scheme):
    state = random_state(make_grid((30,)), seed=6)
    weak = chemotactic_face_fluxes(state.u, state.w, 2.0, 0.1, 3, scheme)
    strong = chemotactic_face_fluxes(state.u, state.w, 2.0, 0.5, 3, scheme)
    for low, high in zip(strong, weak):
        assert np.all(np.abs(low) <= np.abs(high) + 1e-12)


def test_step_detects_blowup():
    grid = make_grid((8,))
    outcome = step(FieldState.homogeneous(grid, 60.0, 50.0, 1.0), _params(), _control(1e-3, blowup_linf=100.0))
    assert outcome.status == StepStatus.blowupDetected


def test_step_gives_up_after_five_rejections():
    grid = make_grid((8,))
    state = FieldState.homogeneous(grid, 1.0, 1.0, 0.0)
    ctl = _control(10.0)
    outcome = step(state, _params(mu1=100.0, mu2=100.0), ctl)
    assert outcome.status == StepStatus.dtUnderflow
    assert outcome.rejections == 5
    assert ctl.rejected_steps == 5
    assert outcome.state.t == 0.0


@pytest.mark.slow
def test_positivity_over_random_configurations():
    rng = np.random.default_rng(1234)
    kinds = [InitialDataKind.cosineBump, InitialDataKind.gaussianBumps, InitialDataKind.randomPerturbation]
    for case in range(50):
        cells = (int(rng.integers(12, 33)),) if case % 5 else (8, 8)
        params = _params(chi1=rng.uniform(0.5, 6.0), chi2=rng.uniform(0.5, 6.0), mu1=rng.uniform(0.2, 3.0),
                         mu2=rng.uniform(0.2, 3.0), r=rng.uniform(0.0, 2.0), epsilon=rng.choice([0.0, 0.1]))
        kind = kinds[case % 3]
        amplitude = 0.9 if kind != InitialDataKind.gaussianBumps else 5.0
        profile = InitialProfile(background=1.0, amplitude=amplitude, modes=[2] * len(cells), width=0.08)
        config = make_config(params, cells=cells, initial=InitialData(kind=kind, u=profile, v=profile, w=profile),
                             t_end=0.05, dt_max=5e-3, output_every=0.01, seed=case)
        result = run(config)
        assert result.steps > 0
        assert result.min_accepted_value >= -1e-12


def test_run_with_zero_end_time(quadratic_params):
    config = make_config(quadratic_params, initial=cosine_initial(), t_end=0.0)
    result = run(config)
    assert result.steps == 0
    assert len(result.series) == 1
    assert result.series.samples[0].t == 0.0
    assert result.outcome.status == StepStatus.advanced


def test_run_detects_blowup_before_the_first_step(quadratic_params):
    config = make_config(quadratic_params, initial=constant_initial(2.0, 0.0, 1.0), blowup_linf=1.0)
    result = run(config)
    assert result.outcome.status == StepStatus.blowupDetected
    assert result.steps == 0
    assert result.classification == RunClassification.blowUp


def test_run_samples_land_on_output_times(equilibrium_config):
    result = run(equilibrium_config.with_run_values(keep_trajectory=True))
    assert result.series.times().tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert len(result.trajectory) == len(result.series)
    assert result.classification == RunClassification.bounded
    assert result.series.metadata.cells == [16]
    last = result.series.samples[-1]
    assert (last.linf_u, last.linf_v, last.linf_w) == pytest.approx((2.0, 2.0, 4.0), abs=1e-10)
    assert result.min_accepted_value == pytest.approx(2.0, abs=1e-10)
    assert 0.0 < result.series.samples[-1].dt <= 0.05


def test_run_writes_snapshots(equilibrium_config, tmp_path):
    config = equilibrium_config.with_run_values(snapshot_every=0.5)
    result = run(config, out_dir=tmp_path)
    assert [path.name for path in result.snapshots] == [
        "snapshot_00000.aalab", "snapshot_00001.aalab", "snapshot_00002.aalab"]
    final = read_snapshot(result.snapshots[-1], make_grid((16,)))
    assert final.t == pytest.approx(1.0)


def test_run_is_deterministic(quadratic_params):
    profile = InitialProfile(background=1.0, amplitude=0.5)
    initial = InitialData(kind=InitialDataKind.randomPerturbation, u=profile, v=profile, w=profile)
    config = make_config(quadratic_params, cells=(24,), initial=initial, t_end=0.2, output_every=0.05, seed=5)
    first, second = run(config), run(config)
    assert first.series.samples == second.series.samples


@pytest.mark.slow
def test_diffusion_dominated_run_decays_to_equilibrium():
    params = ModelParams(chi1=0.0, chi2=0.0, mu1=10.0, mu2=10.0, r=0.0)
    config = make_config(params, cells=(32,), initial=cosine_initial(1.0, 0.5), t_end=10.0, dt_max=1e-2,
                         output_every=0.1)
    result = run(config)
    linf_u = result.series.column("linf_u")
    assert np.all(np.diff(linf_u) <= 1e-12)
    assert linf_u[-1] == pytest.approx(0.2, abs=1e-2)
    assert result.classification == RunClassification.bounded
