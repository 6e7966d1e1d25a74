"""Explicit finite-volume solver for the eps-scaled two-phase system.

Conserved variables are the partial masses ``R_plus``, ``R_minus`` and the
momentum ``m = rho u``. Fluxes are of local Lax-Friedrichs type. Two
dissipation models are available:

``"rusanov"``
    classic LLF, every component diffused with ``max(|u_n| + c/eps)``.
``"low_mach"`` (default)
    advective LLF dissipation ``|u_n|`` on every component plus an acoustic
    term acting on the pressure jump only, ``Y * [p] / (eps * c)`` on the
    partial masses and ``u * [p] / (eps * c)`` on momentum. The velocity jump
    is never diffused at the acoustic rate, so the numerical viscosity stays
    O(h |u|) as eps -> 0 instead of O(h c / eps).

Time stepping is the three-stage SSP Runge-Kutta method.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import entropy
from .closure import reconstruct
from .errors import DomainError, SimulationError
from .fields import (
    DIRICHLET,
    PERIODIC,
    Grid,
    divergence,
    integrate,
    norm_l2,
    vector_norm_l2_sq,
    velocity_gradient_sq,
    viscous_operator,
)

log = logging.getLogger(__name__)

FLUXES = ("low_mach", "rusanov")
LIMITERS = ("none", "minmod")


@dataclass
class ConservedField:
    R_plus: np.ndarray
    R_minus: np.ndarray
    m: np.ndarray

    def copy(self) -> "ConservedField":
        return ConservedField(self.R_plus.copy(), self.R_minus.copy(), self.m.copy())

    def stack(self) -> np.ndarray:
        return np.concatenate([self.R_plus[None], self.R_minus[None], self.m], axis=0)

    @classmethod
    def unstack(cls, q: np.ndarray) -> "ConservedField":
        return cls(q[0], q[1], q[2:])

    def masses(self, grid: Grid) -> tuple:
        return integrate(grid, self.R_plus), integrate(grid, self.R_minus)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.R_plus)) and np.all(np.isfinite(self.R_minus))
                    and np.all(np.isfinite(self.m)))

    def save(self, path, t=None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, R_plus=self.R_plus, R_minus=self.R_minus, m=self.m,
                 t=np.nan if t is None else t)
        return path

    @classmethod
    def load(cls, path) -> tuple:
        with np.load(path) as z:
            t = float(z["t"])
            return cls(z["R_plus"], z["R_minus"], z["m"]), (None if math.isnan(t) else t)


@dataclass(frozen=True)
class SolverConfig:
    cfl: float = 0.4
    floor: float = 1e-8
    t_end: float = 0.5
    cadence: float = 0.01
    limiter: str = "none"
    flux: str = "low_mach"
    checkpoint_dir: str | None = None
    max_steps: int = 10_000_000
    energy_abort: float = 1.05

    def __post_init__(self):
        if not 0 < self.cfl < 1:
            raise DomainError(f"CFL number must lie in (0, 1), got {self.cfl}")
        if not self.floor > 0:
            raise DomainError(f"density floor must be positive, got {self.floor}")
        if self.limiter not in LIMITERS:
            raise DomainError(f"limiter must be one of {LIMITERS}, got {self.limiter!r}")
        if self.flux not in FLUXES:
            raise DomainError(f"flux must be one of {FLUXES}, got {self.flux!r}")
        if self.t_end < 0 or self.cadence <= 0:
            raise DomainError("need t_end >= 0 and cadence > 0")


# ------------------------------------------------------------ thermodynamics

def sound_speeds(prim, params):
    """``(c_plus, c_mix)``: plus-phase speed and the equal-pressure mixture speed.

    The mixture speed comes from ``1/(rho c^2) = sum alpha_i / (rho_i c_i^2)``
    with ``rho_i c_i^2 = gamma_i p``.
    """
    gp, gm = params.gamma_plus, params.gamma_minus
    p = prim.p
    c_plus = np.sqrt(gp * np.maximum(prim.rho_plus, 0.0) ** (gp - 1.0))
    comp = prim.alpha_plus / gp + prim.alpha_minus / gm
    with np.errstate(divide="ignore", invalid="ignore"):
        c_mix = np.sqrt(np.where(prim.rho > 0, p / (prim.rho * comp), 0.0))
    return c_plus, c_mix


def stable_dt(grid: Grid, state: ConservedField, params, config: SolverConfig, prim=None) -> float:
    """Minimum of the acoustic and the explicit viscous time-step bounds."""
    if prim is None:
        prim = reconstruct(state.R_plus, state.R_minus, state.m, params)
    occupied = prim.rho > 0
    if not np.any(occupied):
        raise DomainError("all-vacuum state has no time scale")
    c_plus, c_mix = sound_speeds(prim, params)
    c = np.maximum(c_plus, c_mix)
    speed = 0.0
    for a in range(grid.dim):
        s = np.max((np.abs(prim.u[a]) + c / params.eps)[occupied]) / grid.h[a]
        speed += s
    dt_ac = config.cfl / speed if speed > 0 else math.inf
    visc = 2.0 * params.mu + params.lam
    rho_min = float(np.min(prim.rho[occupied]))
    dt_visc = config.cfl * grid.h_min ** 2 * rho_min / (2 * grid.dim * visc)
    return float(min(dt_ac, dt_visc))


# ------------------------------------------------------------------- fluxes

def _pad(q, axis, width, bc, odd=False):
    """Ghost cells along ``axis``: periodic wrap, or mirror (negated if ``odd``)."""
    pad = [(0, 0)] * q.ndim
    pad[axis] = (width, width)
    if bc == PERIODIC:
        return np.pad(q, pad, mode="wrap")
    g = np.pad(q, pad, mode="symmetric")
    if odd:
        idx = [slice(None)] * q.ndim
        n = g.shape[axis]
        for sl in (slice(0, width), slice(n - width, n)):
            idx[axis] = sl
            g[tuple(idx)] *= -1.0
    return g


def _pad_state(q, grid: Grid, a: int, width: int):
    """Pad the stacked state ``[R+, R-, m_0, m_1...]`` along spatial axis ``a``."""
    bc = grid.bc[a]
    ax = a + 1
    parts = [_pad(q[:2], ax, width, bc)]
    if bc == DIRICHLET:
        # no-slip wall: every velocity component is odd across the wall
        parts.append(_pad(q[2:], ax, width, bc, odd=True))
    else:
        parts.append(_pad(q[2:], ax, width, bc))
    return np.concatenate(parts, axis=0)


def _take(x, axis, s):
    idx = [slice(None)] * x.ndim
    idx[axis] = s
    return x[tuple(idx)]


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _primitive_bundle(q, params, guess=None):
    """Quantities the flux needs, from a stacked state of any cell shape."""
    prim = reconstruct(q[0], q[1], q[2:], params, guess=guess)
    c_plus, c_mix = sound_speeds(prim, params)
    rho = prim.rho
    safe = np.where(rho > 0, rho, 1.0)
    return {
        "u": prim.u,
        "p": prim.p,
        "c_mix": c_mix,
        "c_max": np.maximum(c_plus, c_mix),
        "Y": np.stack([q[0] / safe, q[1] / safe]),
        "prim": prim,
    }


def _pad_bundle(b, grid: Grid, a: int, width: int):
    bc = grid.bc[a]
    return {
        "u": _pad(b["u"], a + 1, width, bc, odd=(bc == DIRICHLET)),
        "p": _pad(b["p"], a, width, bc),
        "c_mix": _pad(b["c_mix"], a, width, bc),
        "c_max": _pad(b["c_max"], a, width, bc),
        "Y": _pad(b["Y"], a + 1, width, bc),
    }


def _physical_flux(q, u_n, p, a, params):
    f = q * u_n
    f[2 + a] += (p - params.c0) / params.eps ** 2
    return f


def _face_flux(qL, qR, bL, bR, a, params, flux):
    uL, uR = bL["u"][a], bR["u"][a]
    F = 0.5 * (_physical_flux(qL, uL, bL["p"], a, params) + _physical_flux(qR, uR, bR["p"], a, params))
    jump = qR - qL
    if flux == "rusanov":
        lam = np.maximum(np.abs(uL) + bL["c_max"] / params.eps, np.abs(uR) + bR["c_max"] / params.eps)
        return F - 0.5 * lam * jump
    a_u = np.maximum(np.abs(uL), np.abs(uR))
    F -= 0.5 * a_u * jump
    c_bar = np.maximum(bL["c_mix"], bR["c_mix"])
    c_bar = np.where(c_bar > 0, c_bar, 1.0)
    ac = 0.5 * (bR["p"] - bL["p"]) / (params.eps * c_bar)
    F[:2] -= 0.5 * (bL["Y"] + bR["Y"]) * ac
    F[2:] -= 0.5 * (bL["u"] + bR["u"]) * ac
    return F


def convective_rhs(grid: Grid, q: np.ndarray, params, config: SolverConfig, bundle=None):
    """``-div F(q)`` for the stacked state, including the eps^-2 pressure flux."""
    if bundle is None:
        bundle = _primitive_bundle(q, params)
    rhs = np.zeros_like(q)
    for a in range(grid.dim):
        n = grid.shape[a]
        ax = a + 1
        if config.limiter == "none":
            qp = _pad_state(q, grid, a, 1)
            bp = _pad_bundle(bundle, grid, a, 1)
            qL, qR = _take(qp, ax, slice(0, n + 1)), _take(qp, ax, slice(1, n + 2))

            def side(sl, b=bp):
                return {"u": _take(b["u"], ax, sl), "p": _take(b["p"], a, sl),
                        "c_mix": _take(b["c_mix"], a, sl), "c_max": _take(b["c_max"], a, sl),
                        "Y": _take(b["Y"], ax, sl)}

            bL, bR = side(slice(0, n + 1)), side(slice(1, n + 2))
        else:
            qp = _pad_state(q, grid, a, 2)
            dl = _take(qp, ax, slice(1, n + 4)) - _take(qp, ax, slice(0, n + 3))
            # slope[k] belongs to padded cell k+1, k = 0..n+1; faces sit between
            # padded cells 1..n+1 and their right neighbours
            slope = _minmod(_take(dl, ax, slice(0, n + 2)), _take(dl, ax, slice(1, n + 3)))
            centre = _take(qp, ax, slice(1, n + 3))
            qL = _take(centre, ax, slice(0, n + 1)) + 0.5 * _take(slope, ax, slice(0, n + 1))
            qR = _take(centre, ax, slice(1, n + 2)) - 0.5 * _take(slope, ax, slice(1, n + 2))
            qL[:2] = np.maximum(qL[:2], 0.0)
            qR[:2] = np.maximum(qR[:2], 0.0)
            bL = _primitive_bundle(qL, params)
            bR = _primitive_bundle(qR, params)
        F = _face_flux(qL, qR, bL, bR, a, params, config.flux)
        rhs -= (_take(F, ax, slice(1, n + 1)) - _take(F, ax, slice(0, n))) / grid.h[a]
    return rhs


def rhs(grid: Grid, q: np.ndarray, params, config: SolverConfig, guess=None):
    bundle = _primitive_bundle(q, params, guess=guess)
    out = convective_rhs(grid, q, params, config, bundle)
    out[2:] += viscous_operator(grid, bundle["u"], params.mu, params.lam)
    return out, bundle["prim"]


def apply_floor(q: np.ndarray, floor: float, grid: Grid) -> float:
    """Raise partial masses to ``floor`` in place; returns the mass added."""
    added = 0.0
    for k in (0, 1):
        low = q[k] < floor
        if np.any(low):
            added += float(np.sum(floor - q[k][low])) * grid.cell_volume
            q[k][low] = floor
    return added


def step(grid: Grid, state: ConservedField, params, config: SolverConfig, dt: float,
         info: dict | None = None, guess=None) -> ConservedField:
    """One SSP-RK3 step written in increment form.

    The increment form leaves a state with vanishing right-hand side
    bit-for-bit unchanged. ``info`` (optional dict) receives the floor mass
    added and the stage-one primitive state.
    """
    q0 = state.stack()
    k1, prim0 = rhs(grid, q0, params, config, guess)
    g = prim0.alpha_plus
    q1 = q0 + dt * k1
    added = apply_floor(q1, config.floor, grid)
    k2, _ = rhs(grid, q1, params, config, g)
    q2 = q0 + 0.25 * dt * (k1 + k2)
    added += apply_floor(q2, config.floor, grid)
    k3, _ = rhs(grid, q2, params, config, g)
    q3 = q0 + dt * (k1 / 6.0 + k2 / 6.0 + 2.0 * k3 / 3.0)
    added += apply_floor(q3, config.floor, grid)
    if info is not None:
        info["floor_mass"] = added
        info["prim0"] = prim0
    return ConservedField.unstack(q3)


# ---------------------------------------------------------------------- run

def dissipation_rate(grid: Grid, u: np.ndarray, params) -> float:
    """``mu ||grad u||^2 + (lam + mu) ||div u||^2`` for the discrete operators in use."""
    d = divergence(grid, u)
    return params.mu * velocity_gradient_sq(grid, u) + (params.lam + params.mu) * integrate(grid, d * d)


@dataclass
class RunResult:
    state: ConservedField
    report: entropy.EntropyReport
    t: float
    steps: int
    aborted: bool = False
    floor_mass: float = 0.0
    max_budget_excess: float = 0.0
    max_mass_drift: float = 0.0
    max_pressure_residual: float = 0.0
    min_partial_mass: float = math.inf
    div_integral: float = 0.0
    snapshots: dict = field(default_factory=dict)


def _diag_times(t_end, cadence):
    n = int(math.floor(t_end / cadence + 1e-9))
    ts = [k * cadence for k in range(n + 1)]
    if t_end - ts[-1] > 1e-12 * max(1.0, t_end):
        ts.append(t_end)
    return ts


def diagnose(grid: Grid, state: ConservedField, params, t: float, limit=None, prim=None) -> dict:
    """Energy and, when a limit trajectory is supplied, the relative-entropy terms at time t."""
    if prim is None:
        prim = reconstruct(state.R_plus, state.R_minus, state.m, params)
    row = {
        "t": t,
        "energy_E": entropy.energy(grid, prim, params),
        "div_l2": norm_l2(grid, divergence(grid, prim.u)),
    }
    if limit is not None:
        alpha, u_lim = limit.at(t)
        rp, rm = params.rho_plus_limit, params.rho_minus_limit
        R_lim = (alpha * rp, (1.0 - alpha) * rm)
        R_eps = (state.R_plus, state.R_minus)
        ev = entropy.e1(grid, prim, u_lim, params)
        ep = entropy.e2_species(grid, R_eps[0], R_lim[0])
        em = entropy.e2_species(grid, R_eps[1], R_lim[1])
        dp, dm = R_eps[0] - R_lim[0], R_eps[1] - R_lim[1]
        pr2 = entropy.l2_by_l1_check(grid, R_eps, R_lim, ev, params.eps)
        row.update(
            E1=ev, E2=ep + em, E_total=ev + ep + em, e2_plus=ep, e2_minus=em,
            l1_plus=integrate(grid, np.abs(dp)), l1_minus=integrate(grid, np.abs(dm)),
            l2_plus=norm_l2(grid, dp), l2_minus=norm_l2(grid, dm),
            u_l2=math.sqrt(vector_norm_l2_sq(grid, prim.u - u_lim)),
            propR2_ratio=pr2.ratio,
            mass_gap_plus=abs(integrate(grid, R_eps[0]) - integrate(grid, R_lim[0])),
            mass_gap_minus=abs(integrate(grid, R_eps[1]) - integrate(grid, R_lim[1])),
        )
    return row


def run(grid: Grid, initial: ConservedField, params, config: SolverConfig, limit=None,
        snapshot_times=()) -> RunResult:
    """Advance to ``config.t_end``, emitting a diagnostic row every ``config.cadence``.

    Tracks the discrete energy budget ``E(t) + int_0^t D - E(0)`` after every
    step, accumulated viscous dissipation (trapezoid rule in time), the time
    integral of ``||div u||^2``, mass drift and floor corrections. Growth of
    E beyond ``energy_abort * E(0)`` stops the run with ``aborted=True``;
    non-finite values raise :class:`SimulationError`.
    """
    ckpt = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    last_good = None
    state = initial.copy()
    if np.any(state.R_plus < 0) or np.any(state.R_minus < 0):
        raise DomainError("initial partial masses must be nonnegative")
    q = state.stack()
    floor_mass = apply_floor(q, config.floor, grid)
    state = ConservedField.unstack(q)
    mass0 = np.array(initial.masses(grid))
    prim = reconstruct(state.R_plus, state.R_minus, state.m, params)
    E0 = entropy.energy(grid, prim, params)
    report = entropy.EntropyReport(meta={"eps": params.eps, "flux": config.flux, "limiter": config.limiter})
    res = RunResult(state, report, 0.0, 0, floor_mass=floor_mass)
    res.max_pressure_residual = prim.pressure_residual(params.gamma_plus, params.gamma_minus)
    res.min_partial_mass = float(min(state.R_plus.min(), state.R_minus.min()))

    diag = _diag_times(config.t_end, config.cadence)
    snaps = {float(x) for x in snapshot_times if 0 <= x <= config.t_end}
    # stop exactly on every diagnostic and snapshot time
    targets = sorted(set(diag) | snaps)
    diag = set(diag)
    t = 0.0
    D_prev = dissipation_rate(grid, prim.u, params)
    div_prev = integrate(grid, divergence(grid, prim.u) ** 2)
    diss = 0.0
    div_int = 0.0

    def visit(t, prim):
        if t in diag:
            row = diagnose(grid, state, params, t, limit, prim)
            row.update(dissipation=diss, floor_mass=res.floor_mass)
            report.append(**row)
        if t in snaps:
            res.snapshots[t] = state.copy()

    visit(0.0, prim)
    if ckpt is not None:
        last_good = state.save(ckpt / "last_good.npz", 0.0)
    next_idx = 1
    steps = 0
    while next_idx < len(targets):
        if steps >= config.max_steps:
            res.aborted = True
            report.meta["abort_reason"] = "max_steps"
            break
        dt = stable_dt(grid, state, params, config, prim)
        target = targets[next_idx]
        hit = t + dt >= target - 1e-12 * max(1.0, target)
        if hit:
            dt = target - t
        info = {}
        new = step(grid, state, params, config, dt, info, guess=prim.alpha_plus)
        steps += 1
        if not new.is_finite():
            raise SimulationError(f"non-finite state at t={t + dt:.6g} after {steps} steps",
                                  None if last_good is None else str(last_good))
        state = new
        t = target if hit else t + dt
        res.floor_mass += info["floor_mass"]
        prim = reconstruct(state.R_plus, state.R_minus, state.m, params, guess=info["prim0"].alpha_plus)
        D_new = dissipation_rate(grid, prim.u, params)
        div_new = integrate(grid, divergence(grid, prim.u) ** 2)
        diss += 0.5 * dt * (D_prev + D_new)
        div_int += 0.5 * dt * (div_prev + div_new)
        D_prev, div_prev = D_new, div_new
        E = entropy.energy(grid, prim, params)
        res.max_budget_excess = max(res.max_budget_excess, (E + diss - E0) / abs(E0) if E0 else 0.0)
        masses = np.array(state.masses(grid))
        drift = np.abs(masses - mass0) / np.maximum(np.abs(mass0), 1e-300)
        res.max_mass_drift = max(res.max_mass_drift, float(drift.max()))
        res.min_partial_mass = min(res.min_partial_mass, float(min(state.R_plus.min(), state.R_minus.min())))
        if E > config.energy_abort * E0:
            res.aborted = True
            report.meta["abort_reason"] = f"energy growth E/E0 = {E / E0:.4f} at t = {t:.4g}"
            log.warning(report.meta["abort_reason"])
            break
        if hit:
            res.max_pressure_residual = max(res.max_pressure_residual,
                                            prim.pressure_residual(params.gamma_plus, params.gamma_minus))
            visit(t, prim)
            next_idx += 1
            if ckpt is not None:
                last_good = state.save(ckpt / "last_good.npz", t)
    res.state = state
    res.t = t
    res.steps = steps
    res.div_integral = div_int
    report.meta.update(
        steps=steps, t=t, E0=E0, aborted=res.aborted, floor_mass=res.floor_mass,
        max_budget_excess=res.max_budget_excess, max_mass_drift=res.max_mass_drift,
        div_integral=div_int, max_pressure_residual=res.max_pressure_residual,
    )
    return res


# ----------------------------------------------------------- initial states

def rest_state(grid: Grid, params, alpha_plus: float = 0.5) -> ConservedField:
    """Uniform state at the limit pressure with zero velocity."""
    rp, rm = params.rho_plus_limit, params.rho_minus_limit
    Rp = np.full(grid.shape, alpha_plus * rp)
    Rm = np.full(grid.shape, (1.0 - alpha_plus) * rm)
    return ConservedField(Rp, Rm, grid.zeros_vector())


def from_primitive(grid: Grid, alpha_plus, rho_plus, u, params) -> ConservedField:
    """Conserved state from a volume fraction, plus-phase density and velocity."""
    alpha_plus = np.broadcast_to(np.asarray(alpha_plus, dtype=float), grid.shape)
    rho_plus = np.broadcast_to(np.asarray(rho_plus, dtype=float), grid.shape)
    rho_minus = rho_plus ** (params.gamma_plus / params.gamma_minus)
    Rp = alpha_plus * rho_plus
    Rm = (1.0 - alpha_plus) * rho_minus
    rho = Rp + Rm
    u = np.broadcast_to(np.asarray(u, dtype=float), (grid.dim,) + grid.shape)
    return ConservedField(np.array(Rp), np.array(Rm), np.array(rho * u))


def with_config(config: SolverConfig, **kw) -> SolverConfig:
    return replace(config, **kw)
