"""Eulerian form of the hyperelastic rod equation.

With ``v(t, x) = u(t, gamma x)`` the rod equation becomes

    v_t + v v_x = B(v, v),
    B(v, v) = (1 - gamma^-2 d_x^2)^-1 ( (gamma - 3)/gamma v v_x - gamma^-2 v_x v_xx ),

which is integrated here with classical fixed-step RK4.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ParameterError
from .spectral import (
    TWO_PI,
    GridFunction,
    SobolevIndex,
    _check_gamma,
    _derivative_multiplier,
    _helmholtz_symbol,
    _irfft,
    _rfft,
    sobolev_norm,
)

STEP_RATIO_RTOL = 1e-9
CFL_SANITY = 10.0


@dataclass(frozen=True)
class SolverConfig:
    gamma: float
    s: float = 2.0
    N: int = 256
    domain_length: float = TWO_PI
    dt: float | None = None
    cfl_factor: float = 0.25
    T: float = 1.0
    blowup_floor: float = 1e-6
    norm_cap: float = 1e6
    dealias: bool = False
    snapshot_stride: int = 1
    resolution_tol: float | None = None

    def __post_init__(self):
        _check_gamma(self.gamma)
        object.__setattr__(self, "s", float(SobolevIndex(self.s)))
        if self.N < 16 or self.N % 2:
            raise ParameterError(f"N must be even and >= 16, got {self.N}")
        if not self.domain_length > 0:
            raise ParameterError("domain_length must be positive")
        if not self.T > 0:
            raise ParameterError(f"T must be positive, got {self.T}")
        if self.dt is not None and not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if not self.cfl_factor > 0:
            raise ParameterError("cfl_factor must be positive")
        if self.snapshot_stride < 1:
            raise ParameterError("snapshot_stride must be >= 1")
        if self.dt is not None:
            self.steps_for(self.T)

    @property
    def dx(self) -> float:
        return self.domain_length / self.N

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def check_grid(self, f: GridFunction, name="v0"):
        if f.N != self.N or not math.isclose(f.domain_length, self.domain_length, rel_tol=1e-14):
            raise InvalidInputError(
                f"{name} lives on (N={f.N}, L={f.domain_length}), config expects "
                f"(N={self.N}, L={self.domain_length})"
            )

    def steps_for(self, t_end, v0: GridFunction | None = None):
        """Number of steps and effective step size to reach ``t_end``.

        An explicit ``dt`` must divide ``t_end`` (up to rounding); otherwise
        the auto rule ``cfl_factor * dx / max(1, sup|v0|)`` is rounded down
        to the nearest divisor of ``t_end``.
        """
        if self.dt is not None:
            ratio = t_end / self.dt
            n = round(ratio)
            if n < 1 or abs(ratio - n) > STEP_RATIO_RTOL * max(1, n):
                raise ParameterError(f"t_end={t_end} is not an integer multiple of dt={self.dt}")
        else:
            speed = 1.0 if v0 is None else max(1.0, v0.sup())
            n = math.ceil(t_end / (self.cfl_factor * self.dx / speed) - 1e-9)
        return n, t_end / n


@dataclass
class Trajectory:
    """Snapshots and per-step diagnostics of an Eulerian run."""

    times: np.ndarray
    states: list
    dt: float
    diag_times: np.ndarray
    sup_v: np.ndarray
    sup_vx: np.ndarray
    hs_norm: np.ndarray
    terminated_early: bool = False
    reason: str | None = None
    config: dict = field(default_factory=dict)

    @property
    def final(self) -> GridFunction:
        return self.states[-1]

    @property
    def t_final(self) -> float:
        return float(self.times[-1])


# ---------------------------------------------------------------------------
# right-hand side
# ---------------------------------------------------------------------------


def _dealias_mask(N):
    return np.arange(N // 2 + 1) <= N // 3


def _rhs_parts(v, L, gamma, dealias=False):
    """Return ``(B(v, v), v v_x)`` for a raw sample array."""
    N = v.size
    c = _rfft(v)
    mask = _dealias_mask(N) if dealias else None
    if dealias:
        c = c * mask
        v = _irfft(c, N)
    vx = _irfft(c * _derivative_multiplier(N, L, 1), N)
    vxx = _irfft(c * _derivative_multiplier(N, L, 2), N)
    q = ((gamma - 3.0) / gamma) * v * vx - vx * vxx / gamma**2
    qh = _rfft(q)
    adv = v * vx
    if dealias:
        qh = qh * mask
        adv = _irfft(_rfft(adv) * mask, N)
    return _irfft(qh / _helmholtz_symbol(N, L, gamma), N), adv


def b_operator(v: GridFunction, gamma: float, dealias: bool = False) -> GridFunction:
    """The quadratic nonlocal term B(v, v)."""
    _check_gamma(gamma)
    return v.like(_rhs_parts(v.samples, v.domain_length, gamma, dealias)[0])


def eulerian_rhs(v: GridFunction, gamma: float, dealias: bool = False) -> GridFunction:
    """``v_t = -v v_x + B(v, v)``."""
    _check_gamma(gamma)
    b, adv = _rhs_parts(v.samples, v.domain_length, gamma, dealias)
    return v.like(b - adv)


def rk4_step(rhs, y, dt):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _tail_ratio(v):
    c = np.abs(_rfft(v))
    top = c.max()
    if top == 0:
        return 0.0
    return float(c[v.size // 3 + 1 :].max(initial=0.0) / top)


def integrate_eulerian(v0: GridFunction, cfg: SolverConfig) -> Trajectory:
    """Integrate the Eulerian equation from ``v0`` up to ``cfg.T``.

    The run stops early, keeping the partial trajectory, when ``sup|v_x|``
    exceeds ``cfg.norm_cap``, a step produces non-finite values, or (with
    ``cfg.resolution_tol`` set) the upper third of the spectrum carries too
    much amplitude.
    """
    cfg.check_grid(v0)
    n_steps, dt = cfg.steps_for(cfg.T, v0)
    if dt * v0.sup() >= CFL_SANITY * cfg.dx:
        raise ParameterError(
            f"dt={dt:.3e} too large for sup|v0|={v0.sup():.3e} at dx={cfg.dx:.3e}"
        )
    L, gamma = cfg.domain_length, cfg.gamma
    dmult = _derivative_multiplier(cfg.N, L, 1)

    def rhs(v):
        b, adv = _rhs_parts(v, L, gamma, cfg.dealias)
        return b - adv

    def diagnostics(v):
        vx = _irfft(_rfft(v) * dmult, cfg.N)
        return (
            float(np.max(np.abs(v))),
            float(np.max(np.abs(vx))),
            sobolev_norm(GridFunction(v, L), cfg.s),
        )

    v = v0.samples.copy()
    times, states = [0.0], [v0]
    diag = [diagnostics(v)]
    reason = None
    for i in range(1, n_steps + 1):
        t = i * dt
        v_new = rk4_step(rhs, v, dt)
        if not np.all(np.isfinite(v_new)):
            reason = f"non-finite values at t={t:.6g}"
            break
        v = v_new
        d = diagnostics(v)
        diag.append(d)
        if d[1] > cfg.norm_cap:
            reason = f"blow-up: sup|v_x|={d[1]:.3e} exceeds norm_cap={cfg.norm_cap:g} at t={t:.6g}"
        elif cfg.resolution_tol is not None and _tail_ratio(v) > cfg.resolution_tol:
            reason = f"under-resolved: spectral tail above {cfg.resolution_tol:g} at t={t:.6g}"
        if reason or i % cfg.snapshot_stride == 0 or i == n_steps:
            times.append(t)
            states.append(GridFunction(v, L))
        if reason:
            break
    diag = np.array(diag)
    return Trajectory(
        times=np.array(times),
        states=states,
        dt=dt,
        diag_times=dt * np.arange(len(diag)),
        sup_v=diag[:, 0],
        sup_vx=diag[:, 1],
        hs_norm=diag[:, 2],
        terminated_early=reason is not None,
        reason=reason,
        config=cfg.to_dict(),
    )


# ---------------------------------------------------------------------------
# change of variables u(t, x) <-> v(t, x) = u(t, gamma x)
# ---------------------------------------------------------------------------


def _reflect(samples):
    return np.roll(samples[::-1], 1)


def u_to_v(u: GridFunction, gamma: float) -> GridFunction:
    """``v(x) = u(gamma x)`` on the torus of length ``L / |gamma|``.

    The grid points of the rescaled torus map onto the original grid points,
    so the samples carry over unchanged (reflected for ``gamma < 0``).
    """
    _check_gamma(gamma)
    samples = u.samples if gamma > 0 else _reflect(u.samples)
    return GridFunction(samples, u.domain_length / abs(gamma))


def v_to_u(v: GridFunction, gamma: float) -> GridFunction:
    """Inverse of :func:`u_to_v`: ``u(x) = v(x / gamma)``."""
    _check_gamma(gamma)
    samples = v.samples if gamma > 0 else _reflect(v.samples)
    return GridFunction(samples, v.domain_length * abs(gamma))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def export_trajectory(traj: Trajectory, out_dir, prefix="eulerian", snapshot_stride=1):
    """Write one CSV per saved snapshot plus a JSON manifest; return the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for idx in range(0, len(traj.states), snapshot_stride):
        path = os.path.join(out_dir, f"{prefix}_{idx:05d}.csv")
        traj.states[idx].to_csv(path)
        paths.append(path)
    manifest = {
        "config": traj.config,
        "dt": traj.dt,
        "times": traj.times[::snapshot_stride].tolist(),
        "snapshots": [os.path.basename(p) for p in paths],
        "diagnostics": {
            "t": traj.diag_times.tolist(),
            "sup_v": traj.sup_v.tolist(),
            "sup_vx": traj.sup_vx.tolist(),
            "hs_norm": traj.hs_norm.tolist(),
        },
        "terminated_early": traj.terminated_early,
        "reason": traj.reason,
    }
    manifest_path = os.path.join(out_dir, f"{prefix}_manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    paths.append(manifest_path)
    return paths
