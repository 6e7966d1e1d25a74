"""Equal-pressure closure: volume fractions and phase densities from partial masses.

With ``gamma = gamma_plus / gamma_minus`` and ``d = R_minus / R_plus**gamma``
the volume fraction ``a = alpha_plus`` is the unique root in (0, 1) of

    F(a) = d * a**gamma + a - 1.

``F(0) = -1`` and ``F(1) = d > 0`` so bisection on [0, 1] always brackets it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

BISECT_WIDTH = 1e-8
RESIDUAL_TOL = 1e-12
VACUUM_THRESHOLD = 1e-12
PURE_PHASE_RATIO = 1e-8
_MAX_NEWTON = 60


@dataclass(frozen=True)
class ClosureRoot:
    a: float
    residual: float
    iterations: int


@dataclass
class PrimitiveState:
    """Pointwise primitive variables; every entry has the cell shape except ``u``."""

    rho_plus: np.ndarray
    rho_minus: np.ndarray
    alpha_plus: np.ndarray
    alpha_minus: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    p: np.ndarray

    def pressure_residual(self, gamma_plus, gamma_minus) -> float:
        pp = self.rho_plus ** gamma_plus
        pm = self.rho_minus ** gamma_minus
        return float(np.max(np.abs(pp - pm) / np.maximum(1.0, pp)))


def _log_newton(d, gamma, hi):
    """Safeguarded Newton in ``s = ln a`` for roots below the bisection width.

    ``g(s) = ln d + gamma s - ln(1 - e^s)`` is increasing and convex, and the
    root satisfies ``(d + 1)^(-max(1, 1/gamma)) <= a <= min(hi, d^(-1/gamma))``.
    """
    d = np.asarray(d, dtype=float)
    ln_d = np.log(d)
    s_lo = -np.log1p(d) * max(1.0, 1.0 / gamma)
    s_hi = np.minimum(np.log(hi), -ln_d / gamma)
    s = s_hi.copy()
    for _ in range(200):
        g = ln_d + gamma * s - np.log1p(-np.exp(s))
        s_hi = np.where(g > 0, s, s_hi)
        s_lo = np.where(g > 0, s_lo, s)
        gp = gamma + np.exp(s) / (-np.expm1(s))
        s_new = s - g / gp
        out = ~((s_new > s_lo) & (s_new < s_hi))
        s_new = np.where(out, 0.5 * (s_lo + s_hi), s_new)
        done = np.abs(s_new - s) <= 4e-16 * np.abs(s)
        s = s_new
        if np.all(done):
            break
    return np.exp(s)


def solve_alpha(d: float, gamma: float) -> ClosureRoot:
    """Root of ``d a^gamma + a - 1`` on (0, 1): bisection to width 1e-8, then Newton."""
    d = float(d)
    gamma = float(gamma)
    if not (d > 0) or not math.isfinite(d):
        raise DomainError(f"closure parameter d must be positive and finite, got {d}")
    if not (gamma > 0) or not math.isfinite(gamma):
        raise DomainError(f"exponent ratio must be positive, got {gamma}")
    lo, hi = 0.0, 1.0
    it = 0
    while hi - lo > BISECT_WIDTH:
        mid = 0.5 * (lo + hi)
        if d * mid ** gamma + mid - 1.0 > 0.0:
            hi = mid
        else:
            lo = mid
        it += 1
    if lo == 0.0:
        # root below the bracket width: relative accuracy needs the log variable
        a = float(_log_newton(np.array([d]), gamma, hi)[0])
        return ClosureRoot(a, d * a ** gamma + a - 1.0, it + 1)
    a = 0.5 * (lo + hi)
    f = d * a ** gamma + a - 1.0
    # Newton polish, run until the update stalls at round-off; the
    # residual is far below RESIDUAL_TOL by then
    for _ in range(_MAX_NEWTON):
        if f == 0.0:
            break
        # shrink the bracket first so the bisection fallback always moves
        if f > 0:
            hi = a
        else:
            lo = a
        fp = d * gamma * a ** (gamma - 1.0) + 1.0
        step = f / fp
        a_new = a - step
        if not (lo <= a_new <= hi):
            a_new = 0.5 * (lo + hi)
        it += 1
        if a_new == a or (abs(step) <= 4e-16 * a and abs(f) <= RESIDUAL_TOL):
            a = a_new
            f = d * a ** gamma + a - 1.0
            break
        a = a_new
        f = d * a ** gamma + a - 1.0
    return ClosureRoot(a, f, it)


def solve_alpha_array(d, gamma: float, guess=None) -> np.ndarray:
    """Vectorised :func:`solve_alpha`; returns the roots only.

    With ``guess`` (e.g. the previous time step's fractions) a safeguarded
    Newton iteration runs first and only cells that fail to converge fall
    back to the bracketing path.
    """
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)) or not np.all(np.isfinite(d)):
        raise DomainError("closure parameter d must be positive and finite")
    if not gamma > 0:
        raise DomainError(f"exponent ratio must be positive, got {gamma}")
    if guess is not None:
        a = np.clip(np.asarray(guess, dtype=float), 1e-300, 1.0)
        done = np.zeros(d.shape, dtype=bool)
        for _ in range(12):
            am1 = a ** (gamma - 1.0)
            f = d * a * am1 + a - 1.0
            step = f / (d * gamma * am1 + 1.0)
            a = np.clip(a - step, 1e-300, 1.0)
            done = (np.abs(step) <= 4e-16 * a) & (np.abs(f) <= RESIDUAL_TOL)
            if done.all():
                return a
        rest = ~done
        a[rest] = solve_alpha_array(d[rest], gamma)
        return a
    lo = np.zeros_like(d)
    hi = np.ones_like(d)
    # 27 halvings bring the bracket below 1e-8
    n_bisect = int(math.ceil(math.log2(1.0 / BISECT_WIDTH)))
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        pos = d * mid ** gamma + mid - 1.0 > 0.0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    tiny = lo == 0.0
    a = 0.5 * (lo + hi)
    if np.any(tiny):
        a[tiny] = _log_newton(d[tiny], gamma, hi[tiny])
        lo = np.where(tiny, a, lo)
        hi = np.where(tiny, a, hi)
    for _ in range(_MAX_NEWTON):
        f = d * a ** gamma + a - 1.0
        fp = d * gamma * a ** (gamma - 1.0) + 1.0
        step = f / fp
        if np.all(np.abs(step) <= 4e-16 * a) and np.all(np.abs(f) <= RESIDUAL_TOL):
            break
        a_new = a - step
        bad = ~((a_new >= lo) & (a_new <= hi))
        a_new = np.where(bad, 0.5 * (lo + hi), a_new)
        f_new = d * a_new ** gamma + a_new - 1.0
        hi = np.where(f_new > 0, a_new, hi)
        lo = np.where(f_new > 0, lo, a_new)
        a = a_new
    return a


def _complement_polish(d, gamma, b):
    """Newton on ``b - d (1 - b)^gamma`` for the small fraction ``b = 1 - a``.

    Solving in the complementary variable keeps ``b`` relatively accurate
    when it is tiny, which ``1 - a`` cannot do.
    """
    for _ in range(8):
        q = (1.0 - b) ** (gamma - 1.0)
        g = b - d * (1.0 - b) * q
        step = g / (1.0 + d * gamma * q)
        b = np.clip(b - step, 0.0, 0.5)
        if np.all(np.abs(step) <= 4e-16 * b):
            break
    return b


def companion_density(rho_plus, gamma_plus, gamma_minus):
    """Minus-phase density at equal pressure: ``rho_plus**(gamma_plus/gamma_minus)``."""
    rho_plus = np.asarray(rho_plus, dtype=float)
    if np.any(rho_plus < 0):
        raise DomainError("phase density must be nonnegative")
    out = rho_plus ** (gamma_plus / gamma_minus)
    return out if out.ndim else float(out)


def reconstruct(R_plus, R_minus, m, params, guess=None) -> PrimitiveState:
    """Primitive variables from conserved ``(R_plus, R_minus, m)``.

    ``m`` carries the vector index first: shape ``(dim, *cells)``.
    Branches: vacuum (``R_plus + R_minus < 1e-12``) gets alpha_plus = 1/2 and
    zero velocity; ``R_plus < 1e-8 R_minus`` is treated as pure minus phase;
    ``R_minus == 0`` as pure plus phase. ``guess`` is an optional array of
    alpha_plus values used to warm-start the root solve.
    """
    Rp = np.asarray(R_plus, dtype=float)
    Rm = np.asarray(R_minus, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(Rp < 0) or np.any(Rm < 0):
        raise DomainError("partial masses must be nonnegative")
    if not (np.all(np.isfinite(Rp)) and np.all(np.isfinite(Rm))):
        raise DomainError("partial masses must be finite")
    gp, gm = params.gamma_plus, params.gamma_minus
    gamma = gp / gm
    Rp, Rm = np.broadcast_arrays(Rp, Rm)

    vac = Rp + Rm < VACUUM_THRESHOLD
    pure_m = ~vac & (Rp < PURE_PHASE_RATIO * Rm)
    pure_p = ~vac & ~pure_m & (Rm == 0.0)
    mixed = ~(vac | pure_m | pure_p)

    a_p = np.empty(Rp.shape)
    a_m = np.empty(Rp.shape)
    r_p = np.empty(Rp.shape)
    r_m = np.empty(Rp.shape)

    a_p[vac], a_m[vac] = 0.5, 0.5
    r_p[vac], r_m[vac] = 0.0, 0.0

    a_p[pure_m], a_m[pure_m] = 0.0, 1.0
    r_m[pure_m] = Rm[pure_m]
    r_p[pure_m] = Rm[pure_m] ** (gm / gp)

    a_p[pure_p], a_m[pure_p] = 1.0, 0.0
    r_p[pure_p] = Rp[pure_p]
    r_m[pure_p] = Rp[pure_p] ** gamma

    if np.any(mixed):
        rp, rm = Rp[mixed], Rm[mixed]
        # log form avoids overflow of rp**gamma for large masses
        d = np.exp(np.log(rm) - gamma * np.log(rp))
        g0 = None if guess is None else np.broadcast_to(guess, Rp.shape)[mixed]
        a = solve_alpha_array(d, gamma, g0)
        big = a > 0.5
        b = _complement_polish(d[big], gamma, 1.0 - a[big])
        ap = a.copy()
        am = 1.0 - a
        ap[big] = 1.0 - b
        am[big] = b
        rhop = np.empty_like(a)
        rhom = np.empty_like(a)
        # divide by whichever fraction is known to full relative precision
        rhop[~big] = rp[~big] / ap[~big]
        rhom[~big] = rhop[~big] ** gamma
        rhom[big] = rm[big] / b
        rhop[big] = rhom[big] ** (1.0 / gamma)
        a_p[mixed], a_m[mixed] = ap, am
        r_p[mixed], r_m[mixed] = rhop, rhom

    rho = Rp + Rm
    safe = np.where(rho > 0, rho, 1.0)
    u = np.where(vac | (rho <= 0), 0.0, m / safe)
    p = r_p ** gp
    return PrimitiveState(r_p, r_m, a_p, a_m, rho, u, p)


def limit_alpha(rho, rho_plus: float, rho_minus: float, tol: float = 1e-12):
    """Volume fractions of the incompressible mixture from its density."""
    if rho_plus == rho_minus:
        raise DomainError("limit phase densities coincide; alpha is undefined")
    rho = np.asarray(rho, dtype=float)
    lo, hi = min(rho_plus, rho_minus), max(rho_plus, rho_minus)
    slack = tol * hi
    if np.any(rho < lo - slack) or np.any(rho > hi + slack):
        raise DomainError(f"mixture density outside [{lo}, {hi}]")
    a = np.clip((rho - rho_minus) / (rho_plus - rho_minus), 0.0, 1.0)
    if a.ndim == 0:
        return float(a), float(1.0 - a)
    return a, 1.0 - a


@dataclass(frozen=True)
class LipschitzReport:
    max_ratio: float
    derivative_bound: float
    pairs: int
    argmax: tuple


def implicit_derivative(d, a, gamma):
    """``|da/dd| = a^gamma / (gamma d a^(gamma-1) + 1)`` from differentiating F."""
    return a ** gamma / (gamma * d * a ** (gamma - 1.0) + 1.0)


def lipschitz_probe(gamma: float, d_range, samples: int) -> LipschitzReport:
    """Largest difference quotient of the root map over sampled ``d`` pairs."""
    lo, hi = float(d_range[0]), float(d_range[1])
    if not (0 < lo < hi) or not math.isfinite(hi):
        raise DomainError(f"need 0 < lo < hi < inf, got [{lo}, {hi}]")
    if samples < 2:
        raise DomainError("need at least two samples")
    d = np.linspace(lo, hi, int(samples))
    a = np.array([solve_alpha(x, gamma).a for x in d])
    dd = np.abs(d[:, None] - d[None, :])
    da = np.abs(a[:, None] - a[None, :])
    iu = np.triu_indices(len(d), k=1)
    dd, da = dd[iu], da[iu]
    keep = dd > 0
    ratio = da[keep] / dd[keep]
    k = int(np.argmax(ratio))
    i, j = iu[0][keep][k], iu[1][keep][k]
    bound = float(np.max(implicit_derivative(d, a, gamma)))
    return LipschitzReport(float(ratio[k]), bound, int(keep.sum()), (float(d[i]), float(d[j])))


def lemma_alpha_ratio(Rp_eps, Rm_eps, Rp_lim, Rm_lim, gamma_plus, gamma_minus):
    """Cellwise ``|alpha^eps - alpha| / (|dR_plus| + |dR_minus|)``; zero where the masses agree."""
    gamma = gamma_plus / gamma_minus
    d_eps = Rm_eps / Rp_eps ** gamma
    d_lim = Rm_lim / Rp_lim ** gamma
    a_eps = solve_alpha_array(d_eps, gamma)
    a_lim = solve_alpha_array(d_lim, gamma)
    den = np.abs(Rp_eps - Rp_lim) + np.abs(Rm_eps - Rm_lim)
    num = np.abs(a_eps - a_lim)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
