"""Independent reference implementations used only by the tests."""
import numpy as np


def bisect_alpha(d, gamma, iters=200):
    """Plain vectorised bisection for d a^gamma + a - 1 = 0 on [0, 1]."""
    d = np.asarray(d, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    lo = np.zeros(np.broadcast(d, gamma).shape)
    hi = np.ones_like(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f = d * mid ** gamma + mid - 1.0
        neg = f < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo <= 0):
            break
    return 0.5 * (lo + hi)


def bisect_scalar(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cell_loop_energy(grid, prim, params):
    gp, gm, eps = params.gamma_plus, params.gamma_minus, params.eps
    vol = grid.cell_volume
    total = 0.0
    for idx in np.ndindex(*grid.shape):
        uu = sum(prim.u[(k,) + idx] ** 2 for k in range(grid.dim))
        total += vol * (0.5 * prim.rho[idx] * uu
                        + (prim.alpha_plus[idx] * prim.rho_plus[idx] ** gp / (gp - 1)
                           + prim.alpha_minus[idx] * prim.rho_minus[idx] ** gm / (gm - 1)) / eps ** 2)
    return total


def cell_loop_e1(grid, prim, u_ref, rp, rm, params):
    def H(x, r, g):
        return (x ** g - r ** g - g * r ** (g - 1) * (x - r)) / (g - 1)

    vol = grid.cell_volume
    total = 0.0
    for idx in np.ndindex(*grid.shape):
        du = sum((prim.u[(k,) + idx] - u_ref[(k,) + idx]) ** 2 for k in range(grid.dim))
        total += vol * (0.5 * prim.rho[idx] * du
                        + (prim.alpha_plus[idx] * H(prim.rho_plus[idx], rp, params.gamma_plus)
                           + prim.alpha_minus[idx] * H(prim.rho_minus[idx], rm, params.gamma_minus))
                        / params.eps ** 2)
    return total
