"""Geometric (flow map) formulation of the rod equation.

The flow ``phi_t = v o phi`` turns the Eulerian equation into the spray

    d/dt (phi, V) = (V, B(V o phi^-1, V o phi^-1) o phi),     V = phi_t,

integrated together with the accumulator

    d/dt Psi = (3 gamma - 3)/gamma * V V_x phi_x

needed by the conservation identity. The exponential map sends ``v0`` to the
time-one flow map started at ``(id, v0)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateDirectionError,
    NumericalError,
    OutsideDomainError,
    ParameterError,
)
from .eulerian import SolverConfig, _rhs_parts, b_operator, rk4_step
from .spectral import (
    Diffeo,
    GridFunction,
    _check_gamma,
    _derivative_multiplier,
    _inverse_points,
    _irfft,
    _rfft,
    _trig_eval,
    compose,
    evaluate,
    grid_points,
    invert_diffeo,
    sobolev_norm,
)


@dataclass(frozen=True, eq=False)
class FlowState:
    """A point ``(phi, v, psi)`` of the augmented tangent bundle."""

    phi: Diffeo
    v: GridFunction
    psi: GridFunction

    @classmethod
    def initial(cls, v0: GridFunction) -> "FlowState":
        return cls(Diffeo.identity(v0.N, v0.domain_length), v0, 0.0 * v0)

    def to_csv(self, path):
        x = self.v.x
        cols = (x, self.phi.values, self.phi.phi_x.samples, self.v.samples, self.psi.samples)
        with open(path, "w", newline="") as fh:
            fh.write("x,phi,phi_x,v,psi\n")
            for row in zip(*cols):
                fh.write(",".join(f"{c:.15g}" for c in row) + "\n")


class FlowDerivative(NamedTuple):
    phi_dot: GridFunction
    v_dot: GridFunction
    psi_dot: GridFunction


class ProbeConstants(NamedTuple):
    m: float
    L: float


@dataclass
class FlowTrajectory:
    """Saved flow states of one spray integration (sequence-like)."""

    times: np.ndarray
    states: list
    dt: float
    min_phi_x: np.ndarray
    max_phi_x: np.ndarray
    terminated_early: bool = False
    reason: str | None = None
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    def __iter__(self):
        return iter(self.states)

    @property
    def final(self) -> FlowState:
        return self.states[-1]

    @property
    def t_final(self) -> float:
        return float(self.times[-1])


class _LostDiffeo(Exception):
    pass


def psi_coefficient(gamma: float) -> float:
    return (3.0 * gamma - 3.0) / gamma


# ---------------------------------------------------------------------------
# right-hand side
# ---------------------------------------------------------------------------


def conjugated_b(phi: Diffeo, v: GridFunction, gamma: float) -> GridFunction:
    """``B(v o phi^-1, v o phi^-1) o phi``."""
    _check_gamma(gamma)
    eulerian = compose(v, invert_diffeo(phi))
    return compose(b_operator(eulerian, gamma), phi)


def spray_rhs(state: FlowState, gamma: float) -> FlowDerivative:
    _check_gamma(gamma)
    v = state.v
    phi_dot = v
    v_dot = conjugated_b(state.phi, v, gamma)
    coef = psi_coefficient(gamma)
    if coef == 0.0:
        psi_dot = 0.0 * v
    else:
        vx = _irfft(_rfft(v.samples) * _derivative_multiplier(v.N, v.domain_length, 1), v.N)
        psi_dot = v.like(coef * v.samples * vx * state.phi.phi_x.samples)
    return FlowDerivative(phi_dot, v_dot, psi_dot)


def _make_rhs(N, L, gamma, dealias):
    x = grid_points(N, L)
    m1 = _derivative_multiplier(N, L, 1)
    coef = psi_coefficient(gamma)

    def rhs(Y):
        d, v = Y[0], Y[1]
        dh = _rfft(d)
        phi_x = 1.0 + _irfft(dh * m1, N)
        if not np.all(phi_x > 0):
            raise _LostDiffeo(f"min phi_x = {phi_x.min():.3e} in an RK stage")
        vh = _rfft(v)
        u = _trig_eval(vh, _inverse_points(d, L), N, L)[0]
        b = _rhs_parts(u, L, gamma, dealias)[0]
        b_phi = _trig_eval(_rfft(b), x + d, N, L)[0]
        if coef == 0.0:
            psi_dot = np.zeros(N)
        else:
            psi_dot = coef * v * _irfft(vh * m1, N) * phi_x
        return np.stack([v, b_phi, psi_dot])

    return rhs


def _state_from_array(Y, L):
    return FlowState(
        Diffeo(GridFunction(Y[0], L)), GridFunction(Y[1], L), GridFunction(Y[2], L)
    )


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def integrate_spray(
    v0: GridFunction, t_end: float, cfg: SolverConfig, snapshot_stride: int | None = None
) -> FlowTrajectory:
    """RK4 on ``(phi, v, psi)`` from ``(id, v0, 0)`` up to ``t_end``.

    Stops early when ``min phi_x`` drops below ``cfg.blowup_floor``, the
    velocity gradient exceeds ``cfg.norm_cap`` or values stop being finite.
    Only valid diffeomorphisms are ever stored.
    """
    cfg.check_grid(v0)
    if not t_end > 0:
        raise ParameterError(f"t_end must be positive, got {t_end}")
    stride = cfg.snapshot_stride if snapshot_stride is None else snapshot_stride
    n_steps, dt = cfg.steps_for(t_end, v0)
    N, L = cfg.N, cfg.domain_length
    rhs = _make_rhs(N, L, cfg.gamma, cfg.dealias)
    m1 = _derivative_multiplier(N, L, 1)

    Y = np.stack([np.zeros(N), v0.samples, np.zeros(N)])
    times, states = [0.0], [FlowState.initial(v0)]
    min_px, max_px = [1.0], [1.0]
    reason = None
    for i in range(1, n_steps + 1):
        t = i * dt
        try:
            Y_new = rk4_step(rhs, Y, dt)
        except (_LostDiffeo, NumericalError) as exc:
            reason = f"loss of diffeomorphism in step to t={t:.6g}: {exc}"
            break
        if not np.all(np.isfinite(Y_new)):
            reason = f"non-finite values at t={t:.6g}"
            break
        phi_x = 1.0 + _irfft(_rfft(Y_new[0]) * m1, N)
        low = float(phi_x.min())
        if low < cfg.blowup_floor:
            reason = f"min phi_x={low:.3e} below blowup_floor={cfg.blowup_floor:g} at t={t:.6g}"
            break
        sup_vx = float(np.max(np.abs(_irfft(_rfft(Y_new[1]) * m1, N))))
        Y = Y_new
        min_px.append(low)
        max_px.append(float(phi_x.max()))
        if sup_vx > cfg.norm_cap:
            reason = f"blow-up: sup|v_x|={sup_vx:.3e} exceeds norm_cap={cfg.norm_cap:g} at t={t:.6g}"
        if reason or i % stride == 0 or i == n_steps:
            times.append(t)
            states.append(_state_from_array(Y, L))
        if reason:
            break
    return FlowTrajectory(
        times=np.array(times),
        states=states,
        dt=dt,
        min_phi_x=np.array(min_px),
        max_phi_x=np.array(max_px),
        terminated_early=reason is not None,
        reason=reason,
        config=cfg.to_dict(),
    )


def eulerian_velocity(state: FlowState) -> GridFunction:
    """Reconstruct ``v(t) = phi_t o phi^-1`` on the grid."""
    L = state.v.domain_length
    pts = _inverse_points(state.phi.displacement.samples, L)
    return state.v.like(evaluate(state.v, pts))


def flow_map(v0: GridFunction, cfg: SolverConfig, t_end: float = 1.0) -> Diffeo:
    traj = integrate_spray(v0, t_end, cfg, snapshot_stride=10**9)
    if traj.terminated_early:
        raise OutsideDomainError(
            f"initial velocity outside the domain of the flow map: {traj.reason}",
            t_fail=traj.t_final,
            reason=traj.reason,
        )
    return traj.final.phi


def exp_map(v0: GridFunction, cfg: SolverConfig) -> Diffeo:
    """``exp(v0) = phi(1; v0)``; raises :class:`OutsideDomainError` on failure."""
    return flow_map(v0, cfg, 1.0)


def default_eps(v0: GridFunction, h: GridFunction, s: float) -> float:
    return 1e-4 * (1.0 + sobolev_norm(v0, s)) / (1.0 + sobolev_norm(h, s))


def d_exp(
    v0: GridFunction,
    h: GridFunction,
    cfg: SolverConfig,
    eps: float | None = None,
    t_end: float = 1.0,
) -> GridFunction:
    """Central difference ``(exp(v0 + eps h) - exp(v0 - eps h)) / (2 eps)``.

    Returned as the difference of displacements, i.e. a periodic function.
    """
    if eps is None:
        eps = default_eps(v0, h, cfg.s)
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    plus = flow_map(v0 + eps * h, cfg, t_end)
    minus = flow_map(v0 - eps * h, cfg, t_end)
    return (plus.displacement - minus.displacement) / (2.0 * eps)


def estimate_m_L(
    v0: GridFunction,
    g: GridFunction,
    x0: float,
    cfg: SolverConfig,
    eps: float | None = None,
    t_end: float = 1.0,
    degenerate_tol: float = 1e-10,
) -> ProbeConstants:
    """Working values of the probe constant m and the Lipschitz bound L.

    ``m = |d_{v0} exp(g)(x0)| / ||g||_s``; ``L`` is the largest ``phi_x``
    seen along the flows of ``v0`` and ``v0 +- g``.
    """
    norm_g = sobolev_norm(g, cfg.s)
    if norm_g == 0:
        raise ParameterError("probe direction g must be non-zero")
    dexp = d_exp(v0, g, cfg, eps, t_end)
    m = abs(float(evaluate(dexp, [x0])[0])) / norm_g
    if m <= degenerate_tol:
        raise DegenerateDirectionError(
            f"d exp(g) vanishes at x0={x0:.6g} (m={m:.3e}); perturb x0 or g"
        )
    lip = 1.0
    for data in (v0, v0 + g, v0 - g):
        traj = integrate_spray(data, t_end, cfg, snapshot_stride=10**9)
        if traj.terminated_early:
            raise OutsideDomainError(
                f"flow for Lipschitz estimate left the domain: {traj.reason}",
                t_fail=traj.t_final,
                reason=traj.reason,
            )
        lip = max(lip, float(traj.max_phi_x.max()))
    return ProbeConstants(m, lip)


def export_flow(traj: FlowTrajectory, out_dir, prefix="lagrangian", snapshot_stride=1):
    """Write ``x,phi,phi_x,v,psi`` CSVs for every saved state; return the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for idx in range(0, len(traj.states), snapshot_stride):
        path = os.path.join(out_dir, f"{prefix}_{idx:05d}.csv")
        traj.states[idx].to_csv(path)
        paths.append(path)
    return paths
