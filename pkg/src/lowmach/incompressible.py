"""Projection solver for the incompressible two-phase limit on periodic grids.

The limit densities are constant per phase, the mixture density is
``rho = alpha rho_plus + (1 - alpha) rho_minus`` and the velocity is kept
divergence free with respect to the central difference operator of
:mod:`lowmach.fields`. Advection uses the same local Lax-Friedrichs flux as
the compressible solver, so the two discretisations share their eps -> 0
limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, GridError
from .fields import Grid, divergence, gradient, integrate, laplacian, norm_l2

PROJECTION_RTOL = 1e-10
DIV_TOL = 1e-8
ALPHA_TOL = 1e-8


@dataclass
class LimitState:
    alpha: np.ndarray
    u: np.ndarray
    Pi: np.ndarray
    t: float = 0.0

    def copy(self) -> "LimitState":
        return LimitState(self.alpha.copy(), self.u.copy(), self.Pi.copy(), self.t)


def mixture_density(alpha, params):
    return alpha * params.rho_plus_limit + (1.0 - alpha) * params.rho_minus_limit


def density_bounds(params, a_lo: float, a_hi: float) -> tuple:
    """Range of the mixture density when alpha_plus stays in ``[a_lo, a_hi]``."""
    r = [mixture_density(a, params) for a in (a_lo, a_hi)]
    return min(r), max(r)


def _check_periodic(grid: Grid):
    if not grid.periodic:
        raise GridError("the limit solver runs on periodic grids only")


def _llf_divergence(grid: Grid, q: np.ndarray, u: np.ndarray, scalar_axis_offset: int):
    """``div`` of the LLF flux of ``q u`` with dissipation speed ``max|u_n|``.

    ``q`` may carry leading component axes; ``scalar_axis_offset`` is their
    count, so spatial axis ``a`` of ``q`` is ``a + offset``.
    """
    out = np.zeros_like(q)
    for a in range(grid.dim):
        ax = a + scalar_axis_offset
        un = u[a]
        qR = np.roll(q, -1, axis=ax)
        uR = np.roll(un, -1, axis=a)
        flux = 0.5 * (q * un + qR * uR) - 0.5 * np.maximum(np.abs(un), np.abs(uR)) * (qR - q)
        out += (flux - np.roll(flux, 1, axis=ax)) / grid.h[a]
    return out


def advective_cfl(grid: Grid, u: np.ndarray, dt: float) -> float:
    return float(sum(np.max(np.abs(u[a])) * dt / grid.h[a] for a in range(grid.dim)))


def advect_alpha(grid: Grid, alpha: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """One forward-Euler upwind (LLF) transport step of the volume fraction.

    For a discretely divergence-free ``u`` and ``dt * sum_a 2 max|u_a| / h_a <= 1``
    the update is a convex combination of neighbouring values, so extrema do
    not grow. Raises :class:`DomainError` when ``|u| dt / h > 1``.
    """
    _check_periodic(grid)
    if advective_cfl(grid, u, dt) > 1.0:
        raise DomainError(f"transport CFL violated: {advective_cfl(grid, u, dt):.3g} > 1")
    if not np.any(u):
        return alpha.copy()
    return alpha - dt * _llf_divergence(grid, alpha, u, 0)


def momentum_step(grid: Grid, alpha_old, alpha_new, u, params, dt) -> np.ndarray:
    """Provisional velocity: conservative LLF advection of ``rho u`` plus ``mu lap u``.

    The momentum ``rho(alpha_old) u`` is advanced and divided by the density
    of the already transported volume fraction. No pressure is applied.
    """
    rho_old = mixture_density(alpha_old, params)
    rho_new = mixture_density(alpha_new, params)
    if np.min(rho_new) <= 0:
        raise DomainError("mixture density must stay positive")
    visc_dt = 0.5 * grid.h_min ** 2 * float(np.min(rho_new)) / (grid.dim * params.mu)
    if dt > visc_dt * (1 + 1e-12):
        raise DomainError(f"time step {dt:.3g} exceeds the viscous bound {visc_dt:.3g}")
    m = rho_old * u
    rhs = -_llf_divergence(grid, m, u, 1)
    rhs += params.mu * np.stack([laplacian(grid, u[k]) for k in range(grid.dim)])
    return (m + dt * rhs) / rho_new


# ----------------------------------------------------------------- projection

def _parity_classes(grid: Grid) -> list:
    """Index masks of the sub-lattices on which the central gradient decouples."""
    masks = [np.ones(grid.shape, dtype=bool)]
    for a, n in enumerate(grid.shape):
        if n % 2:
            continue
        idx = np.arange(n) % 2
        shape = [1] * grid.dim
        shape[a] = n
        par = np.broadcast_to(idx.reshape(shape), grid.shape)
        masks = [m & (par == k) for m in masks for k in (0, 1)]
    return masks


def _remove_class_means(f, classes):
    out = f.copy()
    for m in classes:
        out[m] -= out[m].mean()
    return out


@dataclass
class PoissonResult:
    Pi: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)


def solve_pressure(grid: Grid, beta: np.ndarray, b: np.ndarray, rtol: float = PROJECTION_RTOL,
                   maxiter: int | None = None, x0=None) -> PoissonResult:
    """Solve ``-div(beta grad Pi) = b`` by Jacobi-preconditioned conjugate gradients.

    Both operators are the central ones, so the kernel consists of the
    functions constant on each parity sub-lattice; ``b`` and the iterates
    are kept orthogonal to it. Stops at ``||r|| <= rtol ||b||``.
    """
    classes = _parity_classes(grid)
    b = _remove_class_means(b, classes)
    maxiter = maxiter or 20 * grid.size

    def A(x):
        return -divergence(grid, beta * gradient(grid, x))

    diag = np.zeros(grid.shape)
    for a in range(grid.dim):
        diag += (np.roll(beta, -1, axis=a) + np.roll(beta, 1, axis=a)) / (4 * grid.h[a] ** 2)
    minv = 1.0 / diag

    bnorm = math.sqrt(float(np.sum(b * b)))
    x = np.zeros(grid.shape) if x0 is None else _remove_class_means(x0, classes)
    if bnorm == 0.0:
        return PoissonResult(np.zeros(grid.shape), 0, [0.0])
    r = b - A(x)
    z = _remove_class_means(minv * r, classes)
    p = z.copy()
    rz = float(np.sum(r * z))
    history = [math.sqrt(float(np.sum(r * r))) / bnorm]
    for it in range(1, maxiter + 1):
        Ap = A(p)
        alpha = rz / float(np.sum(p * Ap))
        x += alpha * p
        r -= alpha * Ap
        rel = math.sqrt(float(np.sum(r * r))) / bnorm
        history.append(rel)
        if rel <= rtol:
            return PoissonResult(_remove_class_means(x, classes), it, history)
        z = _remove_class_means(minv * r, classes)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"pressure CG did not reach {rtol:g} in {maxiter} iterations", history)


def project(grid: Grid, u_star: np.ndarray, rho: np.ndarray, dt: float = 1.0,
            rtol: float = PROJECTION_RTOL, maxiter: int | None = None, Pi0=None,
            return_info: bool = False):
    """Remove the divergence of ``u_star``: ``u = u_star - (dt / rho) grad Pi``.

    ``Pi`` solves ``div((1/rho) grad Pi) = div(u_star) / dt`` and has zero
    mean (on each parity sub-lattice, hence overall).
    """
    _check_periodic(grid)
    if np.min(rho) <= 0:
        raise DomainError("density must be positive")
    beta = 1.0 / rho
    b = -divergence(grid, u_star) / dt
    # a divergence at round-off level of the field itself is already zero
    scale = math.sqrt(float(np.sum(u_star * u_star))) * sum(1.0 / h for h in grid.h) / dt
    if math.sqrt(float(np.sum(b * b))) <= 64 * np.finfo(float).eps * scale:
        res = PoissonResult(np.zeros(grid.shape), 0, [0.0])
    else:
        res = solve_pressure(grid, beta, b, rtol, maxiter, x0=Pi0)
    u = u_star - dt * beta * gradient(grid, res.Pi)
    if return_info:
        return u, res.Pi, res
    return u, res.Pi


# --------------------------------------------------------------------- runs

@dataclass
class LimitTrajectory:
    """Snapshots of the limit solution with linear interpolation in time."""

    times: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    u: list = field(default_factory=list)
    Pi: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    max_div: float = 0.0
    max_idempotence: float = 0.0
    alpha_range: tuple = (math.inf, -math.inf)
    max_alpha_excursion: float = 0.0
    alpha_mass: list = field(default_factory=list)
    steps: int = 0
    projections: int = 0

    def add(self, grid, state: LimitState, params):
        self.times.append(float(state.t))
        self.alpha.append(state.alpha.copy())
        self.u.append(state.u.copy())
        self.Pi.append(state.Pi.copy())
        self.kinetic.append(kinetic_energy(grid, state, params))
        self.alpha_mass.append(integrate(grid, state.alpha))

    def at(self, t: float) -> tuple:
        """``(alpha, u)`` at time ``t`` by linear interpolation between snapshots."""
        ts = self.times
        if not ts:
            raise DomainError("empty trajectory")
        tol = 1e-9 * max(1.0, abs(ts[-1]))
        if t < ts[0] - tol or t > ts[-1] + tol:
            raise DomainError(f"t = {t} outside the trajectory [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t))
        if k < len(ts) and abs(ts[k] - t) <= tol:
            return self.alpha[k], self.u[k]
        if k > 0 and abs(ts[k - 1] - t) <= tol:
            return self.alpha[k - 1], self.u[k - 1]
        k = min(max(k, 1), len(ts) - 1)
        w = (t - ts[k - 1]) / (ts[k] - ts[k - 1])
        return ((1 - w) * self.alpha[k - 1] + w * self.alpha[k],
                (1 - w) * self.u[k - 1] + w * self.u[k])

    def state(self, i: int) -> LimitState:
        return LimitState(self.alpha[i], self.u[i], self.Pi[i], self.times[i])


def kinetic_energy(grid: Grid, state: LimitState, params) -> float:
    rho = mixture_density(state.alpha, params)
    return 0.5 * integrate(grid, rho * np.sum(state.u * state.u, axis=0))


def limit_dt(grid: Grid, state: LimitState, params, cfl: float = 0.4) -> float:
    """Step keeping the transport update convex and the explicit viscous term stable."""
    speed = sum(2.0 * np.max(np.abs(state.u[a])) / grid.h[a] for a in range(grid.dim))
    dt_adv = cfl / speed if speed > 0 else math.inf
    rho_min = float(np.min(mixture_density(state.alpha, params)))
    dt_visc = cfl * grid.h_min ** 2 * rho_min / (2 * grid.dim * params.mu)
    return min(dt_adv, dt_visc)


def prepare_initial(grid: Grid, alpha0, u0, params, check_range=None) -> LimitState:
    """Project ``u0`` once against ``rho(alpha0)`` and build the initial limit state."""
    _check_periodic(grid)
    params.check_limit_hypotheses()
    alpha0 = np.array(np.broadcast_to(alpha0, grid.shape), dtype=float)
    if check_range is not None:
        lo, hi = check_range
        if alpha0.min() < lo or alpha0.max() > hi:
            raise DomainError(f"initial volume fraction leaves [{lo}, {hi}]")
    if alpha0.min() <= 0 or alpha0.max() >= 1:
        raise DomainError("initial volume fraction must lie strictly inside (0, 1)")
    u0 = np.array(np.broadcast_to(u0, (grid.dim,) + grid.shape), dtype=float)
    u, Pi = project(grid, u0, mixture_density(alpha0, params))
    return LimitState(alpha0, u, Pi, 0.0)


def _stage(grid, alpha, u, params, dt):
    a_new = advect_alpha(grid, alpha, u, dt)
    u_star = momentum_step(grid, alpha, a_new, u, params, dt)
    return a_new, u_star


def run_limit(grid: Grid, initial: LimitState, params, t_end: float, cadence: float,
              cfl: float = 0.4, max_dt: float | None = None, project_initial: bool = True) -> LimitTrajectory:
    """SSP-RK3 in time with a projection after every stage.

    The volume fraction is combined with the convex SSP weights, which keeps
    its range; each stage velocity is projected against the density of the
    corresponding stage volume fraction.
    """
    _check_periodic(grid)
    if cadence <= 0 or t_end < 0:
        raise DomainError("need cadence > 0 and t_end >= 0")
    st = initial.copy()
    if project_initial:
        st.u, st.Pi = project(grid, st.u, mixture_density(st.alpha, params))
    traj = LimitTrajectory()
    a0_lo, a0_hi = float(st.alpha.min()), float(st.alpha.max())
    traj.alpha_range = (a0_lo, a0_hi)
    traj.add(grid, st, params)
    traj.max_div = norm_l2(grid, divergence(grid, st.u))
    n = int(math.floor(t_end / cadence + 1e-9))
    targets = [k * cadence for k in range(1, n + 1)]
    if t_end - (targets[-1] if targets else 0.0) > 1e-12:
        targets.append(t_end)
    Pi = st.Pi
    t = 0.0

    def proj(w, alpha, dt_eff):
        nonlocal Pi
        u, Pi = project(grid, w, mixture_density(alpha, params), dt_eff)
        d = norm_l2(grid, divergence(grid, u))
        traj.max_div = max(traj.max_div, d)
        traj.projections += 1
        return u

    for target in targets:
        while t < target - 1e-12 * max(1.0, target):
            dt = limit_dt(grid, st, params, cfl)
            if max_dt is not None:
                dt = min(dt, max_dt)
            hit = t + dt >= target - 1e-12 * max(1.0, target)
            if hit:
                dt = target - t
            a, u = st.alpha, st.u
            a1, w1 = _stage(grid, a, u, params, dt)
            u1 = proj(w1, a1, dt)
            a2s, w2s = _stage(grid, a1, u1, params, dt)
            # increment form of the convex SSP weights: zero increments leave alpha bit-exact
            a2 = a + 0.25 * (a2s - a)
            w2 = (0.75 * mixture_density(a, params) * u + 0.25 * mixture_density(a2s, params) * w2s) \
                / mixture_density(a2, params)
            u2 = proj(w2, a2, 0.25 * dt)
            a3s, w3s = _stage(grid, a2, u2, params, dt)
            a3 = a + (2.0 / 3.0) * ((a3s - a2) + (a2 - a))
            w3 = (mixture_density(a, params) * u / 3.0 + 2.0 * mixture_density(a3s, params) * w3s / 3.0) \
                / mixture_density(a3, params)
            u3 = proj(w3, a3, 2.0 * dt / 3.0)
            lo, hi = traj.alpha_range
            exc = max(lo - float(a3.min()), float(a3.max()) - hi, 0.0)
            traj.max_alpha_excursion = max(traj.max_alpha_excursion, exc)
            if not (np.all(np.isfinite(a3)) and np.all(np.isfinite(u3))):
                raise DomainError(f"limit solution became non-finite at t = {t + dt:.4g}")
            t = target if hit else t + dt
            st = LimitState(a3, u3, Pi, t)
            traj.steps += 1
        traj.add(grid, st, params)
    return traj


def idempotence_residual(grid: Grid, u: np.ndarray, rho: np.ndarray) -> float:
    """``||P(u) - u||_2`` for an already projected field."""
    v, _ = project(grid, u, rho)
    return float(np.sqrt(np.sum((v - u) ** 2) * grid.cell_volume))
