"""Numerical witness for non-uniform dependence on initial data.

Around a base point ``v0`` two families of initial data are built,

    z_n = v0 + w_n,        z~_n = z_n + g / n,

where ``w_n`` is a smooth bump of fixed H^s norm ``R/4`` centred at ``x0``
with halfwidth ``r_n / L``, ``r_n = m ||g||_s / (8 n)``. The initial distance
``||g||_s / n`` vanishes, while the flow maps separate the two bumps by about
``m ||g||_s / n`` which is more than four support radii, so the momenta at
time T stay a fixed distance apart.
"""

from __future__ import annotations

import json
import math
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .conservation import reconstruct_y1, y_of
from .errors import OutsideDomainError, ParameterError, ResolutionError, RodflowError
from .eulerian import SolverConfig, integrate_eulerian
from .lagrangian import eulerian_velocity, estimate_m_L, integrate_spray
from .spectral import (
    MIN_BUMP_CELLS,
    GridFunction,
    bump,
    evaluate,
    minimal_grid_size,
    sobolev_norm,
)

SEPARATION_SLACK = 0.2
WITNESS_FRACTION = 0.5
MIN_GAP_DECREASE = 8.0
EXACT_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    cfg: SolverConfig
    v0: GridFunction
    g: GridFunction
    x0: float
    R: float
    n_values: tuple = (4, 8, 16, 32)
    crosscheck: bool = True
    crosscheck_dt: float | None = None

    def __post_init__(self):
        self.cfg.check_grid(self.v0, "v0")
        self.cfg.check_grid(self.g, "g")
        if sobolev_norm(self.g, self.cfg.s) == 0:
            raise ParameterError("probe direction g must have positive H^s norm")
        if not self.R > 0:
            raise ParameterError(f"ball radius R must be positive, got {self.R}")
        if not 0 <= self.x0 < self.cfg.domain_length:
            raise ParameterError(f"x0={self.x0} outside [0, {self.cfg.domain_length})")
        ns = tuple(sorted({int(n) for n in self.n_values}))
        if not ns or ns[0] < 1:
            raise ParameterError("n_values must be non-empty integers >= 1")
        object.__setattr__(self, "n_values", ns)

    @property
    def norm_g(self) -> float:
        return sobolev_norm(self.g, self.cfg.s)


class Pair(NamedTuple):
    z: GridFunction
    z_tilde: GridFunction
    r_n: float


@dataclass
class ExperimentRecord:
    n: int
    r_n: float
    initial_gap: float
    final_gap_s: float = math.nan
    final_gap_y_s2: float = math.nan
    phi_separation: float = math.nan
    supports_disjoint: bool = False
    bump_norm: float = math.nan
    bump_support_ok: bool = False
    y_reconstruction_error: float = math.nan
    failed: bool = False
    reason: str | None = None


@dataclass
class ExperimentResult:
    records: list
    summary: dict = field(default_factory=dict)


def radius(m, norm_g, n):
    return m * norm_g / (8.0 * n)


def _bump(ec: ExperimentConfig, n, m, L):
    r_n = radius(m, ec.norm_g, n)
    cfg = ec.cfg
    try:
        w = bump(ec.x0, r_n / L, cfg.s, ec.R / 4.0, cfg.N, cfg.domain_length)
    except ResolutionError as exc:
        raise ResolutionError(
            f"n={n}: bump halfwidth r_n/L={r_n / L:.3e} unresolved at N={cfg.N}; "
            f"need N >= {exc.minimal_N}",
            minimal_N=exc.minimal_N,
        ) from exc
    return w, r_n


def build_pair(ec: ExperimentConfig, n: int, m: float, L: float) -> Pair:
    if not (m > 0 and L > 0):
        raise ParameterError(f"m and L must be positive, got m={m}, L={L}")
    w, r_n = _bump(ec, n, m, L)
    z = ec.v0 + w
    return Pair(z, z + ec.g / n, r_n)


def minimal_N_for(ec: ExperimentConfig, m: float, L: float) -> int:
    """Grid size needed to resolve the bump for the largest n."""
    halfwidth = radius(m, ec.norm_g, max(ec.n_values)) / L
    return minimal_grid_size(halfwidth, ec.cfg.domain_length, MIN_BUMP_CELLS)


def rescale_to_time_T(v: GridFunction, lam: float) -> GridFunction:
    """Initial datum ``lam * v`` of the rescaled solution ``lam v(lam t, x)``."""
    if lam == 0 or not math.isfinite(lam):
        raise ParameterError(f"lambda must be finite and non-zero, got {lam}")
    return lam * v


def _support_ok(w: GridFunction, center, halfwidth):
    L = w.domain_length
    offset = np.mod(w.x - center + L / 2, L) - L / 2
    return bool(np.all(w.samples[np.abs(offset) >= halfwidth] == 0.0))


def _run_one(ec: ExperimentConfig, n, m, L):
    cfg = ec.cfg
    w, r_n = _bump(ec, n, m, L)
    z = ec.v0 + w
    z_tilde = z + ec.g / n
    rec = ExperimentRecord(
        n=n,
        r_n=r_n,
        initial_gap=sobolev_norm(z_tilde - z, cfg.s),
        bump_norm=sobolev_norm(w, cfg.s),
        bump_support_ok=_support_ok(w, ec.x0, r_n / L),
    )
    flows = []
    for data in (z, z_tilde):
        traj = integrate_spray(data, cfg.T, cfg, snapshot_stride=10**9)
        if traj.terminated_early:
            rec.failed = True
            rec.reason = traj.reason
            return rec, None
        flows.append(traj.final)
    state, state_t = flows
    v1, v1_t = eulerian_velocity(state), eulerian_velocity(state_t)
    y1, y1_t = y_of(v1, cfg.gamma), y_of(v1_t, cfg.gamma)
    rec.final_gap_s = sobolev_norm(v1 - v1_t, cfg.s)
    rec.final_gap_y_s2 = sobolev_norm(y1 - y1_t, cfg.s - 2)
    sep = evaluate(state.phi.displacement - state_t.phi.displacement, [ec.x0])[0]
    rec.phi_separation = abs(float(sep))
    rec.supports_disjoint = r_n <= rec.phi_separation / 4.0
    y_rec = reconstruct_y1(y_of(z, cfg.gamma), state.phi, state.psi)
    rec.y_reconstruction_error = (y_rec - y1).sup()
    return rec, (z, z_tilde, v1, v1_t)


def _crosscheck(ec: ExperimentConfig, data, v_lagrangian):
    """Sup difference between Eulerian and reconstructed Lagrangian v(T)."""
    cfg = ec.cfg
    if ec.crosscheck_dt is not None:
        dt = ec.crosscheck_dt
    else:
        k_max = math.pi * cfg.N / cfg.domain_length
        dt = min(cfg.dt or 1e-3, 1.0 / (k_max * max(data.sup(), 1e-12)))
    n_steps = math.ceil(cfg.T / dt - 1e-9)
    ecfg = cfg.replace(dt=cfg.T / n_steps, snapshot_stride=10**9)
    traj = integrate_eulerian(data, ecfg)
    if traj.terminated_early:
        return math.nan, ecfg.dt
    return (traj.final - v_lagrangian).sup(), ecfg.dt


def summarize(ec: ExperimentConfig, records, m, L) -> dict:
    ok = [r for r in records if not r.failed]
    norm_g = ec.norm_g
    summary = {
        "m": m,
        "L": L,
        "norm_g": norm_g,
        "R": ec.R,
        "x0": ec.x0,
        "n_values": list(ec.n_values),
        "failed_n": [r.n for r in records if r.failed],
    }
    if not ok:
        summary["verdicts"] = {}
        summary["all_invariants_hold"] = False
        return summary
    half = ok[len(ok) // 2 :] if len(ok) > 1 else ok
    gaps_y = [r.final_gap_y_s2 for r in ok]
    median_y = statistics.median(gaps_y)
    min_large_y = min(r.final_gap_y_s2 for r in half)
    gap_decrease = ok[0].initial_gap / ok[-1].initial_gap
    construction = all(
        abs(r.initial_gap * r.n - norm_g) <= EXACT_RTOL * norm_g
        and abs(r.bump_norm - ec.R / 4.0) <= EXACT_RTOL * ec.R / 4.0
        and r.bump_support_ok
        for r in ok
    )
    separation = all(
        r.phi_separation >= (m / (2.0 * r.n)) * norm_g * (1.0 - SEPARATION_SLACK) for r in ok
    )
    witness = min_large_y >= WITNESS_FRACTION * median_y and gap_decrease >= MIN_GAP_DECREASE
    disjoint = all(r.supports_disjoint for r in ok)
    summary.update(
        {
            "initial_gap_ratio": gap_decrease,
            "median_final_gap_y_s2": median_y,
            "min_final_gap_y_s2_large_n": min_large_y,
            "min_final_gap_s_large_n": min(r.final_gap_s for r in half),
            "empirical_constant": min_large_y / ec.R,
            "min_separation_times_n": min(r.phi_separation * r.n for r in ok),
            "max_y_reconstruction_error": max(r.y_reconstruction_error for r in ok),
            "verdicts": {
                "construction_exact": construction,
                "separation": separation,
                "witness": witness,
                "disjoint_supports": disjoint,
            },
        }
    )
    summary["all_invariants_hold"] = (
        all(summary["verdicts"].values()) and not summary["failed_n"]
    )
    return summary


def run_experiment(
    ec: ExperimentConfig, constants=None, threads: int = 1
) -> ExperimentResult:
    """Evolve every pair to time ``ec.cfg.T`` and collect the diagnostics.

    ``constants`` may supply precomputed ``(m, L)``; otherwise they are
    estimated at ``(v0, g, x0)``. Records come back ordered by ``n``.
    """
    if constants is None:
        constants = estimate_m_L(ec.v0, ec.g, ec.x0, ec.cfg, t_end=ec.cfg.T)
    m, L = constants
    n_min = minimal_N_for(ec, m, L)
    if ec.cfg.N < n_min:
        raise ResolutionError(
            f"n={max(ec.n_values)} needs a bump halfwidth of "
            f"{radius(m, ec.norm_g, max(ec.n_values)) / L:.3e}; use N >= {n_min}",
            minimal_N=n_min,
        )

    def job(n):
        try:
            return _run_one(ec, n, m, L)
        except (OutsideDomainError, RodflowError) as exc:
            rec = ExperimentRecord(n=n, r_n=radius(m, ec.norm_g, n), initial_gap=ec.norm_g / n)
            rec.failed, rec.reason = True, str(exc)
            return rec, None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, ec.n_values))
    else:
        outcomes = [job(n) for n in ec.n_values]
    records = [rec for rec, _ in outcomes]
    if all(r.failed for r in records):
        raise OutsideDomainError("every pair left the domain of the flow map: "
                                 + "; ".join(f"n={r.n}: {r.reason}" for r in records))
    summary = summarize(ec, records, m, L)
    if ec.crosscheck:
        for rec, extra in outcomes:
            if extra is None:
                continue
            z, z_tilde, v1, v1_t = extra
            diff, dt = _crosscheck(ec, z_tilde, v1_t)
            summary["eulerian_crosscheck"] = {"n": rec.n, "dt": dt, "sup_diff": diff}
            break
    return ExperimentResult(records, summary)


CSV_FIELDS = (
    "n",
    "r_n",
    "initial_gap",
    "final_gap_s",
    "final_gap_y_s2",
    "phi_separation",
    "supports_disjoint",
)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return f"{value:.15g}"


def _finite_or_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    return obj


def export_experiment(result: ExperimentResult, out_dir, prefix="nonuniform"):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{prefix}.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(",".join(CSV_FIELDS) + "\n")
        for rec in result.records:
            if rec.failed:
                continue
            row = asdict(rec)
            fh.write(",".join(_fmt(row[k]) for k in CSV_FIELDS) + "\n")
    json_path = os.path.join(out_dir, f"{prefix}_summary.json")
    failed = [{"n": r.n, "reason": r.reason} for r in result.records if r.failed]
    with open(json_path, "w") as fh:
        payload = _finite_or_none({**result.summary, "failed_records": failed})
        json.dump(payload, fh, indent=2, allow_nan=False)
    return [csv_path, json_path]
