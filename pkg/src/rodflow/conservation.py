"""Transport identity for the momentum variable y = (1 - gamma^-2 d_x^2) v.

Along the flow,

    (y(t) o phi(t)) * phi_x(t)^2 = y(0) + Psi(t),

with the accumulator Psi carried by the spray integration. The residual of
this identity is the solver's self-check.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError, OutsideDomainError, ParameterError
from .eulerian import rk4_step
from .lagrangian import (
    FlowState,
    _LostDiffeo,
    _make_rhs,
    _state_from_array,
    eulerian_velocity,
    psi_coefficient,
)
from .spectral import (
    Diffeo,
    GridFunction,
    compose,
    derivative,
    helmholtz_forward,
    invert_diffeo,
    sobolev_norm,
)


def y_of(v: GridFunction, gamma: float) -> GridFunction:
    return helmholtz_forward(v, gamma)


def transported_momentum(state: FlowState, gamma: float) -> GridFunction:
    """``(y o phi) * phi_x^2`` for the Eulerian velocity carried by ``state``."""
    y = y_of(eulerian_velocity(state), gamma)
    return compose(y, state.phi) * (state.phi.phi_x * state.phi.phi_x)


@dataclass
class ConservationReport:
    times: np.ndarray
    residual_s_minus_2: np.ndarray
    residual_sup: np.ndarray
    psi_norm_s_minus_1: np.ndarray
    psi_identically_zero: bool = False

    @property
    def max_residual_sup(self) -> float:
        return float(self.residual_sup.max())

    @property
    def max_residual_s_minus_2(self) -> float:
        return float(self.residual_s_minus_2.max())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("t,residual_s2,residual_sup,psi_norm\n")
            for row in zip(
                self.times, self.residual_s_minus_2, self.residual_sup, self.psi_norm_s_minus_1
            ):
                fh.write(",".join(f"{c:.15g}" for c in row) + "\n")

    def summary(self, order=None) -> dict:
        return {
            "max_residual_sup": self.max_residual_sup,
            "max_residual_s_minus_2": self.max_residual_s_minus_2,
            "final_residual_sup": float(self.residual_sup[-1]),
            "max_psi_norm_s_minus_1": float(self.psi_norm_s_minus_1.max()),
            "psi_identically_zero": self.psi_identically_zero,
            "measured_order": order,
        }


def conservation_residual(flow, v0: GridFunction, gamma: float, s: float) -> ConservationReport:
    """Residual of the transport identity at every saved state of ``flow``."""
    cfg = getattr(flow, "config", None) or {}
    if "gamma" in cfg and cfg["gamma"] != gamma:
        raise ParameterError(f"flow was integrated with gamma={cfg['gamma']}, not {gamma}")
    times = getattr(flow, "times", None)
    states = list(flow)
    if times is None:
        times = np.arange(len(states), dtype=float)
    y0 = y_of(v0, gamma)
    res_s2, res_sup, psi_norm = [], [], []
    psi_zero = True
    for state in states:
        if not state.v.same_grid(v0):
            raise InvalidInputError("flow state and v0 live on different grids")
        residual = transported_momentum(state, gamma) - (y0 + state.psi)
        res_s2.append(sobolev_norm(residual, s - 2))
        res_sup.append(residual.sup())
        psi_norm.append(sobolev_norm(state.psi, s - 1))
        psi_zero = psi_zero and not np.any(state.psi.samples)
    return ConservationReport(
        times=np.asarray(times, dtype=float),
        residual_s_minus_2=np.array(res_s2),
        residual_sup=np.array(res_sup),
        psi_norm_s_minus_1=np.array(psi_norm),
        psi_identically_zero=psi_zero,
    )


def reconstruct_y1(y0: GridFunction, phi: Diffeo, psi: GridFunction) -> GridFunction:
    """``((y0 + psi) / phi_x^2) o phi^-1``."""
    return compose((y0 + psi) / (phi.phi_x * phi.phi_x), invert_diffeo(phi))


def _micro_step(state: FlowState, gamma: float, h: float) -> FlowState:
    N, L = state.v.N, state.v.domain_length
    Y = np.stack([state.phi.displacement.samples, state.v.samples, state.psi.samples])
    try:
        return _state_from_array(rk4_step(_make_rhs(N, L, gamma, False), Y, h), L)
    except (_LostDiffeo, NumericalError, ValueError) as exc:
        raise OutsideDomainError(f"micro-step of size {h:g} failed: {exc}") from exc


def instantaneous_identity_check(
    state: FlowState, gamma: float, micro_step: float = 1e-4
) -> float:
    """Sup-norm mismatch between d/dt[(y o phi) phi_x^2] and the Psi integrand.

    The time derivative is a central difference over RK4 micro-steps of
    size ``+-micro_step``.
    """
    forward = transported_momentum(_micro_step(state, gamma, micro_step), gamma)
    backward = transported_momentum(_micro_step(state, gamma, -micro_step), gamma)
    ddt = (forward - backward) / (2.0 * micro_step)
    v = state.v
    integrand = psi_coefficient(gamma) * v * derivative(v, 1) * state.phi.phi_x
    return (ddt - integrand).sup()


def convergence_orders(errors, refinement=2.0):
    """Observed orders ``log(e_i / e_{i+1}) / log(refinement)``."""
    errors = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(errors[:-1] / errors[1:]) / math.log(refinement)


def export_conservation(report: ConservationReport, out_dir, prefix="conservation", order=None):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{prefix}.csv")
    report.to_csv(csv_path)
    json_path = os.path.join(out_dir, f"{prefix}_summary.json")
    with open(json_path, "w") as fh:
        json.dump(report.summary(order), fh, indent=2)
    return [csv_path, json_path]
