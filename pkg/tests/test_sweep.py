import math

import pytest

import AALab.Sweep as sweep_module
from AALab.AALabEnums import InitialDataKind, RunClassification, SweepParameter, Verdict
from AALab.Analytics import ThresholdInputs, mu_star
from AALab.ConfigModels import InitialData, InitialProfile, ModelParams, SweepAxis
from AALab.Errors import AALabError, ConfigurationError, TrajectoryMismatchError
from AALab.Monitors import check_mass_inequality
from AALab.Stepper import run
from AALab.Sweep import COMPLETED_FILE, SWEEP_FILE, EpsilonStudySpec, SweepResult, SweepRow, SweepSpec, \
    epsilon_study, resolve_workers, run_sweep, space_time_distance, threshold_margin_table

from conftest import cosine_initial, make_config


@pytest.fixture
def sweep_base():
    params = ModelParams(chi1=1.0, chi2=1.0, mu1=1.0, mu2=10.0)
    return make_config(params, cells=(16,), initial=cosine_initial(), t_end=0.4, output_every=0.1, dt_max=0.02)


@pytest.fixture
def mu1_sweep(sweep_base) -> SweepSpec:
    return SweepSpec(base=sweep_base, axes=[SweepAxis(name=SweepParameter.mu1, values=[0.1, 1.0, 10.0])])


def _essentials(result: SweepResult):
    return [(row.point_id, row.replicate, row.values, row.classification, row.final_linf_u, row.final_linf_v,
             row.steps, row.margin) for row in result.rows]


def test_single_point_sweep(sweep_base):
    result = run_sweep(SweepSpec(base=sweep_base), workers=1)
    assert len(result.rows) == 1
    row = result.rows[0]
    assert row.classification == RunClassification.bounded
    assert row.error == ""
    assert row.mu_star == pytest.approx(2.0 / 3.0)


def test_margin_grows_with_damping(mu1_sweep):
    result = run_sweep(mu1_sweep, workers=1)
    margins = [row.margin for row in result.rows]
    assert margins == sorted(margins) and len(set(margins)) == 3
    for row in result.rows:
        expected = mu_star(ThresholdInputs(chi1=1.0, chi2=1.0, r=0.0, dim_n=3, c_sobolev=1.0)).value
        assert row.mu_star == pytest.approx(expected)
        assert row.margin == pytest.approx(min(row.values["mu1"], 10.0) - expected)
    assert [row.values["mu1"] for row in result.rows] == [0.1, 1.0, 10.0]


def test_sweep_is_deterministic(mu1_sweep):
    assert _essentials(run_sweep(mu1_sweep, workers=1)) == _essentials(run_sweep(mu1_sweep, workers=1))


def test_parallel_sweep_matches_serial(sweep_base):
    spec = SweepSpec(base=sweep_base, axes=[SweepAxis(name=SweepParameter.mu1, values=[0.5, 2.0]),
                                            SweepAxis(name=SweepParameter.r, values=[0.0, 1.0])],
                     replicates=[1, 2])
    serial = run_sweep(spec, workers=1)
    parallel = run_sweep(spec, workers=2)
    assert len(serial.rows) == 8
    assert _essentials(serial) == _essentials(parallel)


def test_sweep_writes_table_and_marker(mu1_sweep, tmp_path):
    result = run_sweep(mu1_sweep, out_dir=tmp_path, workers=1, stanza=["config_hash abc"])
    text = (tmp_path / SWEEP_FILE).read_text(encoding="utf-8")
    assert text.startswith("# config_hash abc\npoint_id,replicate,mu1,mu_star,margin")
    marker = (tmp_path / COMPLETED_FILE).read_text(encoding="utf-8").splitlines()
    assert marker == [f"# sweep {mu1_sweep.fingerprint()}", "0", "1", "2"]
    loaded = SweepResult.from_csv(tmp_path / SWEEP_FILE, ["mu1"])
    assert _essentials(loaded) == _essentials(result)


def _record_calls(monkeypatch):
    calls = []
    original = sweep_module.run_point

    def recording(base, point_id, values, seeds):
        calls.append(point_id)
        return original(base, point_id, values, seeds)

    monkeypatch.setattr(sweep_module, "run_point", recording)
    return calls


def test_sweep_resumes_from_marker(mu1_sweep, tmp_path, monkeypatch):
    first = run_sweep(mu1_sweep, out_dir=tmp_path, workers=1)
    (tmp_path / COMPLETED_FILE).write_text(f"# sweep {mu1_sweep.fingerprint()}\n0\n", encoding="utf-8")

    calls = _record_calls(monkeypatch)
    resumed = run_sweep(mu1_sweep, out_dir=tmp_path, workers=1)
    assert calls == [1, 2]
    assert _essentials(resumed) == _essentials(first)
    assert len(SweepResult.from_csv(tmp_path / SWEEP_FILE, ["mu1"]).rows) == 3


def test_sweep_resume_drops_a_cut_off_row(mu1_sweep, tmp_path, monkeypatch):
    first = run_sweep(mu1_sweep, out_dir=tmp_path, workers=1)
    table = tmp_path / SWEEP_FILE
    lines = table.read_text(encoding="utf-8").splitlines()
    table.write_text("\n".join(lines[:-1] + [lines[-1][:12]]) + "\n", encoding="utf-8")
    with pytest.raises(AALabError, match="malformed sweep row 2"):
        SweepResult.from_csv(table, ["mu1"])
    (tmp_path / COMPLETED_FILE).write_text(f"# sweep {mu1_sweep.fingerprint()}\n0\n1\n", encoding="utf-8")

    calls = _record_calls(monkeypatch)
    resumed = run_sweep(mu1_sweep, out_dir=tmp_path, workers=1)
    assert calls == [2]
    assert _essentials(resumed) == _essentials(first)
    assert _essentials(SweepResult.from_csv(table, ["mu1"])) == _essentials(first)


def test_sweep_restarts_when_the_spec_changed(mu1_sweep, tmp_path, monkeypatch):
    run_sweep(mu1_sweep, out_dir=tmp_path, workers=1)
    changed = mu1_sweep.model_copy(update={"axes": [SweepAxis(name=SweepParameter.mu1, values=[0.2, 2.0])]})
    assert changed.fingerprint() != mu1_sweep.fingerprint()

    calls = _record_calls(monkeypatch)
    result = run_sweep(changed, out_dir=tmp_path, workers=1)
    assert calls == [0, 1]
    assert [row.values["mu1"] for row in result.rows] == [0.2, 2.0]
    assert len(SweepResult.from_csv(tmp_path / SWEEP_FILE, ["mu1"]).rows) == 2
    assert mu1_sweep.model_copy(update={"max_runs": 50}).fingerprint() == mu1_sweep.fingerprint()


def test_sweep_limits(sweep_base):
    axes = [SweepAxis(name=name, values=[1.0, 2.0]) for name in
            (SweepParameter.mu1, SweepParameter.mu2, SweepParameter.chi1, SweepParameter.chi2)]
    with pytest.raises(ConfigurationError, match="at most 3 sweep axes"):
        run_sweep(SweepSpec(base=sweep_base, axes=axes), workers=1)
    with pytest.raises(ConfigurationError, match="above the cap 3"):
        run_sweep(SweepSpec(base=sweep_base, axes=axes[:2], max_runs=3), workers=1)


def test_invalid_point_is_recorded_as_failed(sweep_base):
    spec = SweepSpec(base=sweep_base, axes=[SweepAxis(name=SweepParameter.mu1, values=[-1.0, 1.0])])
    failed, ok = run_sweep(spec, workers=1).rows
    assert failed.classification == RunClassification.failed
    assert "invalid sweep point" in failed.error
    assert ok.classification == RunClassification.bounded


def test_resolve_workers(monkeypatch):
    monkeypatch.setenv("AA_LAB_THREADS", "3")
    assert resolve_workers() == 3
    assert resolve_workers(2) == 2
    monkeypatch.setenv("AA_LAB_THREADS", "many")
    assert resolve_workers() >= 1


def test_margin_table_empty():
    table = threshold_margin_table(SweepResult())
    assert table.partitions == []
    assert "sufficient, not necessary" in table.note


def test_margin_table_all_positive():
    rows = [SweepRow(point_id=k, replicate=0, margin=0.5 + k, classification=RunClassification.bounded)
            for k in range(3)]
    (partition,) = threshold_margin_table(SweepResult(rows=rows)).partitions
    assert partition.sign == "positive"
    assert partition.counts == {"Bounded": 3}
    assert partition.fraction(RunClassification.bounded) == 1.0


def test_margin_table_mixed():
    rows = [
        SweepRow(point_id=0, replicate=0, margin=1.0, classification=RunClassification.bounded),
        SweepRow(point_id=1, replicate=0, margin=0.5, classification=RunClassification.bounded),
        SweepRow(point_id=2, replicate=0, margin=-0.2, classification=RunClassification.growthSuspected),
        SweepRow(point_id=3, replicate=0, margin=math.nan, classification=RunClassification.failed),
    ]
    partitions = threshold_margin_table(SweepResult(rows=rows)).partitions
    assert [(p.sign, p.rows) for p in partitions] == [("positive", 2), ("negative", 1), ("undefined", 1)]
    assert partitions[1].counts == {"GrowthSuspected": 1}
    assert partitions[1].fraction(RunClassification.bounded) == 0.0


def _trajectory(params: ModelParams, amplitude: float = 0.5):
    config = make_config(params, cells=(16,), initial=cosine_initial(1.0, amplitude), t_end=0.2,
                         output_every=0.05, dt_max=0.01, adaptive=False, keep_trajectory=True)
    return run(config).trajectory


def test_space_time_distance_is_a_metric(quadratic_params):
    a = _trajectory(quadratic_params, 0.2)
    b = _trajectory(quadratic_params, 0.5)
    c = _trajectory(quadratic_params, 0.9)
    assert space_time_distance(a, a) == (0.0, 0.0, 0.0)
    ab, bc, ac = space_time_distance(a, b), space_time_distance(b, c), space_time_distance(a, c)
    assert ab == space_time_distance(b, a)
    for k in range(3):
        assert ac[k] <= ab[k] + bc[k] + 1e-12
        assert ab[k] > 0


def test_space_time_distance_rejects_mismatch(quadratic_params):
    a = _trajectory(quadratic_params)
    with pytest.raises(TrajectoryMismatchError):
        space_time_distance(a, a[:-1])


def _ladder_spec(params: ModelParams, ladder, initial=None) -> EpsilonStudySpec:
    base = make_config(params, cells=(16,), initial=initial or cosine_initial(), t_end=0.2, output_every=0.05,
                       dt_max=0.005)
    return EpsilonStudySpec(base=base, ladder=ladder)


def test_epsilon_study_at_equilibrium(equilibrium_config):
    result = epsilon_study(EpsilonStudySpec(base=equilibrium_config, ladder=[0.1, 0.05, 0.025]), workers=1)
    assert len(result.rows) == 2
    for row in result.rows:
        assert row.conclusive
        assert (row.d_u, row.d_v, row.d_w) == (0.0, 0.0, 0.0)
    assert not result.monotone_u


def test_epsilon_study_without_chemotaxis():
    params = ModelParams(chi1=0.0, chi2=0.0, mu1=1.0, mu2=1.0)
    result = epsilon_study(_ladder_spec(params, [0.2, 0.1, 0.05]), workers=1)
    assert all((row.d_u, row.d_v, row.d_w) == (0.0, 0.0, 0.0) for row in result.rows)


def test_epsilon_study_parallel_matches_serial(quadratic_params):
    spec = _ladder_spec(quadratic_params.model_copy(update={"chi1": 3.0, "chi2": 3.0}), [0.4, 0.2, 0.1, 0.05])
    serial = epsilon_study(spec, workers=1)
    assert len(serial.rows) == 3
    assert all(row.conclusive and row.d_u > 0 for row in serial.rows)
    assert epsilon_study(spec, workers=2) == serial


@pytest.mark.parametrize(("ladder", "message"), [
    ([0.1, 0.05], "at least 3 rungs"),
    ([0.1, 0.1, 0.05], "strictly decreasing"),
    ([0.1, 0.05, -0.01], ">= 0"),
])
def test_epsilon_ladder_rules(quadratic_params, ladder, message):
    with pytest.raises(ConfigurationError) as error:
        epsilon_study(_ladder_spec(quadratic_params, ladder), workers=1)
    assert any(message in violation for violation in error.value.violations)


def test_epsilon_study_needs_quadratic_damping():
    params = ModelParams(chi1=1.0, chi2=1.0, mu1=1.0, mu2=1.0, r1=3.0)
    with pytest.raises(ConfigurationError, match="r1 = r2 = 2"):
        epsilon_study(_ladder_spec(params, [0.1, 0.05, 0.025]), workers=1)


@pytest.mark.slow
def test_damping_sweep_is_consistent_with_the_threshold():
    params = ModelParams(chi1=1.0, chi2=1.0, mu1=1.0, mu2=1.0, r=1.0)
    initial = InitialData(kind=InitialDataKind.randomPerturbation,
                          u=InitialProfile(background=1.0, amplitude=0.5),
                          v=InitialProfile(background=1.0, amplitude=0.5), w=InitialProfile(background=1.0))
    base = make_config(params, cells=(32,), initial=initial, t_end=20.0, output_every=0.1, seed=3)
    damping = [0.5, 1.0, 2.0, 4.0]
    sup_norms = []
    for mu in damping:
        config = base.with_model_values(mu1=mu, mu2=mu)
        (row,) = run_sweep(SweepSpec(base=config), workers=1).rows
        if row.margin > 0:
            assert row.classification == RunClassification.bounded
        sup_norms.append(row.sup_linf_sum)
        series = run(config).series
        assert check_mass_inequality(series, config.model).verdict == Verdict.consistent
    assert all(later <= earlier + 1e-12 for earlier, later in zip(sup_norms, sup_norms[1:]))


@pytest.mark.slow
def test_epsilon_ladder_distances_decrease():
    params = ModelParams(chi1=2.0, chi2=2.0, mu1=0.5, mu2=0.5, r=1.0)
    base = make_config(params, cells=(64,), initial=cosine_initial(1.0, 0.5), t_end=1.0, output_every=0.05,
                       dt_max=1e-3)
    result = epsilon_study(EpsilonStudySpec(base=base, ladder=[0.1, 0.05, 0.025, 0.0125]), workers=1)
    assert all(row.conclusive for row in result.rows)
    assert result.monotone_u and result.monotone_v and result.monotone_w
