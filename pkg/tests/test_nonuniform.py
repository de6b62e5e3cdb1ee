import json
import math

import numpy as np
import pytest

from rodflow.errors import OutsideDomainError, ParameterError, ResolutionError
from rodflow.eulerian import SolverConfig, integrate_eulerian
from rodflow.lagrangian import ProbeConstants
from rodflow.nonuniform import (
    ExperimentConfig,
    ExperimentRecord,
    ExperimentResult,
    build_pair,
    export_experiment,
    minimal_N_for,
    radius,
    rescale_to_time_T,
    run_experiment,
    summarize,
)
from rodflow.spectral import GridFunction, sobolev_norm


def gf(func, n):
    return GridFunction.from_function(func, n)


def experiment(N=4096, n_values=(1, 2), x0=math.pi / 2, **kw):
    cfg = SolverConfig(gamma=2.0, s=2.0, N=N, dt=0.05, T=1.0)
    return ExperimentConfig(
        cfg=cfg,
        v0=GridFunction.zeros(N),
        g=gf(lambda x: 0.2 * np.sin(x), N),
        x0=x0,
        R=0.2,
        n_values=n_values,
        **kw,
    )


def test_radius_arithmetic():
    assert radius(0.5, 2.0, 8) == pytest.approx(0.015625)


def test_config_validation():
    N = 64
    cfg = SolverConfig(gamma=2.0, N=N, dt=0.1)
    zero = GridFunction.zeros(N)
    g = gf(np.sin, N)
    with pytest.raises(ParameterError):
        ExperimentConfig(cfg=cfg, v0=zero, g=zero, x0=1.0, R=0.2)
    with pytest.raises(ParameterError):
        ExperimentConfig(cfg=cfg, v0=zero, g=g, x0=1.0, R=0.0)
    with pytest.raises(ParameterError):
        ExperimentConfig(cfg=cfg, v0=zero, g=g, x0=7.0, R=0.2)
    with pytest.raises(ParameterError):
        ExperimentConfig(cfg=cfg, v0=zero, g=g, x0=1.0, R=0.2, n_values=())
    ec = ExperimentConfig(cfg=cfg, v0=zero, g=g, x0=1.0, R=0.2, n_values=[8, 2, 2])
    assert ec.n_values == (2, 8)


def test_build_pair_is_exact():
    ec = experiment(N=8192)
    m, L = 0.7, 1.2
    for n in (1, 2, 4):
        z, z_tilde, r_n = build_pair(ec, n, m, L)
        assert r_n == radius(m, ec.norm_g, n)
        assert sobolev_norm(z_tilde - z, 2.0) * n == pytest.approx(ec.norm_g, rel=1e-10)
        assert sobolev_norm(z - ec.v0, 2.0) == pytest.approx(ec.R / 4, rel=1e-10)
        offset = np.abs(z.x - ec.x0)
        assert np.all(z.samples[offset >= r_n / L] == 0.0)
    with pytest.raises(ParameterError):
        build_pair(ec, 1, 0.0, 1.0)


def test_unresolved_bump_names_minimal_N():
    ec = experiment(N=256, n_values=(4,))
    with pytest.raises(ResolutionError) as info:
        build_pair(ec, 4, 0.7, 1.2)
    assert info.value.minimal_N == minimal_N_for(ec, 0.7, 1.2)
    assert str(info.value.minimal_N) in str(info.value)
    with pytest.raises(ResolutionError):
        run_experiment(ec, constants=ProbeConstants(0.7, 1.2))


def test_rescale_examples():
    v = gf(np.sin, 64)
    assert rescale_to_time_T(v, 1.0) is not v
    assert np.array_equal(rescale_to_time_T(v, 1.0).samples, v.samples)
    with pytest.raises(ParameterError):
        rescale_to_time_T(v, 0.0)


def test_rescaled_solution_is_a_solution():
    # solution from 2 v0 at time t equals 2 v(2t) from v0
    N = 128
    v0 = gf(lambda x: 0.1 * np.sin(x) + 0.05 * np.cos(2 * x), N)
    slow = integrate_eulerian(v0, SolverConfig(gamma=2.0, N=N, dt=0.01, T=1.0, snapshot_stride=10))
    fast = integrate_eulerian(
        rescale_to_time_T(v0, 2.0), SolverConfig(gamma=2.0, N=N, dt=0.005, T=0.5, snapshot_stride=10)
    )
    for v_fast, v_slow in zip(fast.states, slow.states):
        assert (v_fast - 2.0 * v_slow).sup() <= 1e-6


@pytest.mark.parametrize("T", [0.5, 0.75, 2.0])
def test_solution_map_conjugation(T):
    N = 128
    v0 = gf(lambda x: 0.1 * np.sin(x) + 0.05 * np.cos(2 * x), N)
    v_T = integrate_eulerian(v0, SolverConfig(gamma=2.0, N=N, dt=0.01 * T, T=T)).final
    v_1 = integrate_eulerian(rescale_to_time_T(v0, T), SolverConfig(gamma=2.0, N=N, dt=0.01, T=1.0)).final
    assert (v_T - v_1 / T).sup() <= 1e-6


def test_summary_verdicts_on_synthetic_records():
    ec = experiment(N=256, n_values=(4, 8, 16, 32))
    m, L = 0.7, 1.2
    recs = []
    for n, gap in zip((4, 8, 16, 32), (0.05, 0.03, 0.02, 0.019)):
        r_n = radius(m, ec.norm_g, n)
        recs.append(
            ExperimentRecord(
                n=n, r_n=r_n, initial_gap=ec.norm_g / n, final_gap_s=0.1, final_gap_y_s2=gap,
                phi_separation=m * ec.norm_g / n, supports_disjoint=True, bump_norm=ec.R / 4,
                bump_support_ok=True, y_reconstruction_error=0.0,
            )
        )
    summary = summarize(ec, recs, m, L)
    assert summary["all_invariants_hold"]
    assert summary["initial_gap_ratio"] == pytest.approx(8.0)
    recs[-1].final_gap_y_s2 = 0.001
    assert not summarize(ec, recs, m, L)["verdicts"]["witness"]
    recs[0].phi_separation = 0.0
    assert not summarize(ec, recs, m, L)["verdicts"]["separation"]


def test_all_pairs_failing_raises():
    N = 2048
    cfg = SolverConfig(gamma=2.0, N=N, dt=0.05, T=1.0, blowup_floor=0.5)
    ec = ExperimentConfig(
        cfg=cfg, v0=gf(lambda x: -0.8 * np.sin(x), N), g=gf(lambda x: 0.2 * np.cos(x), N),
        x0=1.0, R=0.2, n_values=(1,),
    )
    with pytest.raises(OutsideDomainError):
        run_experiment(ec, constants=ProbeConstants(0.5, 1.0))


@pytest.fixture(scope="module")
def small_run():
    return run_experiment(experiment(N=8192, n_values=(1, 2, 4)))


def test_small_experiment_invariants(small_run):
    s = small_run.summary
    assert s["m"] == pytest.approx(1 / math.sqrt(2), rel=1e-6)
    v = s["verdicts"]
    assert v["construction_exact"] and v["separation"] and v["disjoint_supports"]
    for rec in small_run.records:
        assert rec.phi_separation * rec.n >= 0.8 * 0.5 * s["m"] * s["norm_g"]
    assert s["eulerian_crosscheck"]["sup_diff"] < 1e-6


def test_threaded_run_is_identical(small_run):
    again = run_experiment(experiment(N=8192, n_values=(1, 2, 4)), threads=3)
    for a, b in zip(small_run.records, again.records):
        assert a == b


def test_export(tmp_path, small_run):
    csv_path, json_path = export_experiment(small_run, tmp_path)
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "n,r_n,initial_gap,final_gap_s,final_gap_y_s2,phi_separation,supports_disjoint"
    assert len(lines) == 4
    summary = json.load(open(json_path))
    assert set(summary["verdicts"]) == {"construction_exact", "separation", "witness", "disjoint_supports"}


def test_export_replaces_nan(tmp_path):
    rec = ExperimentRecord(n=1, r_n=0.1, initial_gap=0.2, failed=True, reason="boom")
    result = ExperimentResult([rec], {"m": 0.5, "x": float("nan"), "nested": {"y": float("inf")}})
    _, json_path = export_experiment(result, tmp_path)
    text = open(json_path).read()
    assert "NaN" not in text and "Infinity" not in text
    data = json.loads(text)
    assert data["x"] is None and data["nested"]["y"] is None
    assert data["failed_records"] == [{"n": 1, "reason": "boom"}]
