import json

import numpy as np
import pytest

from rodflow.conservation import (
    ConservationReport,
    conservation_residual,
    convergence_orders,
    export_conservation,
    instantaneous_identity_check,
    reconstruct_y1,
    transported_momentum,
    y_of,
)
from rodflow.errors import InvalidInputError, OutsideDomainError, ParameterError
from rodflow.eulerian import SolverConfig, _rhs_parts, rk4_step
from rodflow.lagrangian import (
    FlowState,
    _state_from_array,
    eulerian_velocity,
    integrate_spray,
    psi_coefficient,
)
from rodflow.spectral import (
    Diffeo,
    GridFunction,
    _derivative_multiplier,
    _inverse_points,
    _irfft,
    _rfft,
    _trig_eval,
    grid_points,
)


def gf(func, n=256):
    return GridFunction.from_function(func, n)


def test_y_of_examples():
    assert y_of(GridFunction.zeros(64), 2.0).sup() == 0.0
    np.testing.assert_allclose(y_of(GridFunction.constant(0.3, 64), 2.0).samples, 0.3)
    assert (y_of(gf(np.cos, 64), 2.0) - 1.25 * gf(np.cos, 64)).sup() < 1e-12
    with pytest.raises(ParameterError):
        y_of(gf(np.cos, 64), 0.0)


def test_zero_data_residual_exactly_zero():
    cfg = SolverConfig(gamma=2.0, N=64, dt=0.1, T=1.0)
    v0 = GridFunction.zeros(64)
    report = conservation_residual(integrate_spray(v0, 1.0, cfg), v0, 2.0, 2.0)
    assert report.max_residual_sup == 0.0
    assert report.max_residual_s_minus_2 == 0.0


@pytest.mark.parametrize(
    "v0_func",
    [lambda x: 0.1 * np.sin(x), lambda x: 0.1 * np.cos(x) + 0.05 * np.sin(3 * x + 0.4)],
)
def test_camassa_holm_invariant(v0_func):
    v0 = gf(v0_func)
    cfg = SolverConfig(gamma=1.0, N=256, dt=1e-3, T=1.0, snapshot_stride=100)
    report = conservation_residual(integrate_spray(v0, 1.0, cfg), v0, 1.0, 2.0)
    assert report.psi_identically_zero
    assert report.max_residual_sup <= 1e-7


def test_gamma_two_residual_and_order():
    v0 = gf(lambda x: 0.1 * np.sin(x))
    cfg = SolverConfig(gamma=2.0, N=256, dt=1e-3, T=1.0, snapshot_stride=250)
    report = conservation_residual(integrate_spray(v0, 1.0, cfg), v0, 2.0, 2.0)
    assert not report.psi_identically_zero
    assert report.residual_sup[-1] <= 1e-6
    # order needs a residual well above round-off: larger data, coarse steps
    v1 = gf(lambda x: 0.3 * np.sin(x), n=64)
    errs = []
    for dt in (0.25, 0.125, 0.0625):
        flow = integrate_spray(v1, 1.0, cfg.replace(N=64, dt=dt, snapshot_stride=10**6))
        errs.append(conservation_residual([flow.final], v1, 2.0, 2.0).residual_sup[0])
    assert np.all(convergence_orders(errs) >= 3.5)


def test_psi_is_smoother_than_y():
    v0 = gf(lambda x: 0.2 * np.sin(x) + 0.1 * np.cos(4 * x))
    cfg = SolverConfig(gamma=2.0, N=256, dt=0.01, T=1.0, snapshot_stride=100)
    report = conservation_residual(integrate_spray(v0, 1.0, cfg), v0, 2.0, 2.0)
    assert np.all(np.isfinite(report.psi_norm_s_minus_1))
    assert report.psi_norm_s_minus_1[0] == 0.0 and report.psi_norm_s_minus_1[-1] > 0


def test_literal_integrand_breaks_identity():
    """With Psi' = c V V_x / phi_x the identity fails; with c V V_x phi_x it holds."""
    N, L, gamma = 128, 2 * np.pi, 2.0
    v0 = gf(lambda x: 0.3 * np.sin(x), n=N)
    m1 = _derivative_multiplier(N, L, 1)
    x = grid_points(N, L)
    coef = psi_coefficient(gamma)

    def rhs_with(power):
        def rhs(Y):
            d, v = Y[0], Y[1]
            phi_x = 1.0 + _irfft(_rfft(d) * m1, N)
            u = _trig_eval(_rfft(v), _inverse_points(d, L), N, L)[0]
            b = _rhs_parts(u, L, gamma)[0]
            b_phi = _trig_eval(_rfft(b), x + d, N, L)[0]
            vx = _irfft(_rfft(v) * m1, N)
            return np.stack([v, b_phi, coef * v * vx * phi_x**power])

        return rhs

    residuals = {}
    for power in (1, -1):
        Y = np.stack([np.zeros(N), v0.samples, np.zeros(N)])
        for _ in range(100):
            Y = rk4_step(rhs_with(power), Y, 0.01)
        state = _state_from_array(Y, L)
        residuals[power] = conservation_residual([state], v0, gamma, 2.0).residual_sup[0]
    assert residuals[1] < 1e-8
    assert residuals[-1] > 1e-3


def test_gamma_and_grid_mismatch():
    v0 = gf(lambda x: 0.1 * np.sin(x), n=64)
    cfg = SolverConfig(gamma=2.0, N=64, dt=0.1, T=0.5)
    flow = integrate_spray(v0, 0.5, cfg)
    with pytest.raises(ParameterError):
        conservation_residual(flow, v0, 1.0, 2.0)
    with pytest.raises(InvalidInputError):
        conservation_residual(flow, gf(lambda x: 0.1 * np.sin(x), n=32), 2.0, 2.0)


def test_reconstruct_y1_examples():
    y0 = gf(lambda x: np.sin(x) + 0.3, n=64)
    zero = GridFunction.zeros(64)
    assert (reconstruct_y1(y0, Diffeo.identity(64), zero) - y0).sup() < 1e-13
    c = 0.5
    shifted = reconstruct_y1(y0, Diffeo.shift(c, 64), zero)
    assert (shifted - gf(lambda x: np.sin(x - c) + 0.3, n=64)).sup() < 1e-12


def test_reconstruct_y1_matches_flow():
    gamma = 2.0
    v0 = gf(lambda x: 0.1 * np.sin(x) + 0.05 * np.cos(2 * x))
    cfg = SolverConfig(gamma=gamma, N=256, dt=0.01, T=1.0, snapshot_stride=10**6)
    final = integrate_spray(v0, 1.0, cfg).final
    y1 = reconstruct_y1(y_of(v0, gamma), final.phi, final.psi)
    assert (y1 - y_of(eulerian_velocity(final), gamma)).sup() <= 1e-6


def test_transported_momentum_at_identity():
    v = gf(lambda x: np.sin(2 * x), n=64)
    state = FlowState.initial(v)
    assert (transported_momentum(state, 2.0) - y_of(v, 2.0)).sup() < 1e-12


def test_instantaneous_identity_check():
    zero = FlowState.initial(GridFunction.zeros(64))
    assert instantaneous_identity_check(zero, 2.0) == 0.0
    const = FlowState.initial(GridFunction.constant(0.4, 64))
    assert instantaneous_identity_check(const, 2.0) <= 1e-10
    state = FlowState.initial(gf(lambda x: 0.1 * np.sin(x)))
    assert instantaneous_identity_check(state, 2.0, micro_step=1e-4) <= 1e-6
    phi = Diffeo(gf(lambda x: 0.2 * np.sin(x) + 0.05 * np.cos(2 * x)))
    bent = FlowState(phi, gf(lambda x: 0.1 * np.cos(x)), GridFunction.zeros(256))
    assert instantaneous_identity_check(bent, 2.0, micro_step=1e-4) <= 1e-6


def test_instantaneous_check_failure_is_domain_error():
    phi = Diffeo(gf(lambda x: 0.95 * np.sin(x), n=64))
    state = FlowState(phi, gf(lambda x: -50 * np.sin(x), n=64), GridFunction.zeros(64))
    with pytest.raises(OutsideDomainError):
        instantaneous_identity_check(state, 2.0, micro_step=0.1)


def test_convergence_orders():
    np.testing.assert_allclose(convergence_orders([16.0, 1.0, 1 / 16]), [4.0, 4.0])


def test_report_export(tmp_path):
    report = ConservationReport(
        times=np.array([0.0, 1.0]),
        residual_s_minus_2=np.array([0.0, 1e-12]),
        residual_sup=np.array([0.0, 2e-12]),
        psi_norm_s_minus_1=np.array([0.0, 0.1]),
    )
    csv_path, json_path = export_conservation(report, tmp_path, order=4.0)
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "t,residual_s2,residual_sup,psi_norm"
    assert len(lines) == 3
    summary = json.load(open(json_path))
    assert summary["max_residual_sup"] == 2e-12
    assert summary["measured_order"] == 4.0
