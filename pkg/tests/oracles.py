"""Independent reference computations used by the tests.

None of these share code with the package: the 1-D bounded-Lipschitz value
is a dynamic program over concave piecewise-linear functions, the n-D value
is the dual partial-transport problem solved by cvxpy, and the brute-force
searches only ever evaluate explicit bounded 1-Lipschitz functions.
"""
import math

import cvxpy as cp
import numpy as np


def _net(mu_atoms, mu_w, nu_atoms, nu_w):
    atoms = np.vstack([np.atleast_2d(mu_atoms), np.atleast_2d(nu_atoms)])
    h = np.concatenate([mu_w, -np.asarray(nu_w)])
    uniq, inv = np.unique(atoms, axis=0, return_inverse=True)
    return uniq, np.bincount(inv.ravel(), weights=h, minlength=len(uniq))


def dbl_dp_1d(mu_atoms, mu_w, nu_atoms, nu_w):
    """Exact sup of sum h_k f_k over |f| <= 1, |f_k - f_l| <= |z_k - z_l| on the line."""
    z, h = _net(np.reshape(mu_atoms, (-1, 1)), mu_w, np.reshape(nu_atoms, (-1, 1)), nu_w)
    z = z[:, 0]
    order = np.argsort(z)
    z, h = z[order], h[order]
    xs = np.array([-1.0, 1.0])
    ys = h[0] * xs
    for k in range(1, len(z)):
        d = z[k] - z[k - 1]
        m = int(np.argmax(ys))
        left_x, left_y = xs[: m + 1] - d, ys[: m + 1]
        right_x, right_y = xs[m:] + d, ys[m:]
        ex = np.concatenate([left_x, right_x])
        ey = np.concatenate([left_y, right_y])
        inside = (ex > -1.0) & (ex < 1.0)
        lo = np.interp(-1.0, ex, ey)
        hi = np.interp(1.0, ex, ey)
        xs = np.concatenate([[-1.0], ex[inside], [1.0]])
        ys = np.concatenate([[lo], ey[inside], [hi]])
        ys = ys + h[k] * xs
    return float(max(ys.max(), 0.0))


def dbl_transport(mu_atoms, mu_w, nu_atoms, nu_w):
    """Dual form: cheapest partial matching of the positive and negative parts
    of ``mu - nu`` with cost ``min(d, 2)`` plus 1 per unit of unmatched mass."""
    z, h = _net(mu_atoms, mu_w, nu_atoms, nu_w)
    pos, neg = h > 0, h < 0
    hp, hn = h[pos], -h[neg]
    if len(hp) == 0 or len(hn) == 0:
        return float(hp.sum() + hn.sum())
    C = np.minimum(np.linalg.norm(z[pos][:, None, :] - z[neg][None, :, :], axis=2), 2.0)
    pi = cp.Variable(C.shape, nonneg=True)
    matched = cp.sum(pi)
    obj = cp.Minimize(cp.sum(cp.multiply(C, pi)) + hp.sum() + hn.sum() - 2 * matched)
    cons = [cp.sum(pi, axis=1) <= hp, cp.sum(pi, axis=0) <= hn]
    prob = cp.Problem(obj, cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return float(prob.value)


def dbl_feasible_search(mu_atoms, mu_w, nu_atoms, nu_w, trials=2000, seed=0):
    """Lower bound: best of many explicit bounded 1-Lipschitz test functions
    ``clip(min_j(c_j + |z - a_j|), -1, 1)`` and their negatives."""
    z, h = _net(mu_atoms, mu_w, nu_atoms, nu_w)
    rs = np.random.default_rng(seed)
    D = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=2)
    best = abs(h.sum())
    k = len(z)
    for _ in range(trials):
        active = rs.uniform(size=k) < 0.6
        if not active.any():
            continue
        c = rs.choice([-1.0, 1.0], size=k) * rs.uniform(0.0, 1.0, size=k) ** 0.3
        f = np.clip(np.min(c[active][None, :] + D[:, active], axis=1), -1.0, 1.0)
        v = float(h @ f)
        best = max(best, v, -v)
    return best


def w1_quantile(mu_atoms, mu_w, nu_atoms, nu_w):
    """``int_0^mass |F^-1(s) - G^-1(s)| ds`` on a merged quantile grid."""
    a = np.asarray(mu_atoms, float).ravel()
    b = np.asarray(nu_atoms, float).ravel()
    ia, ib = np.argsort(a), np.argsort(b)
    a, wa = a[ia], np.asarray(mu_w, float)[ia]
    b, wb = b[ib], np.asarray(nu_w, float)[ib]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    cuts = np.unique(np.concatenate([[0.0], ca, cb]))
    cuts = cuts[cuts <= min(ca[-1], cb[-1])]
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        s = 0.5 * (lo + hi)
        qa = a[min(np.searchsorted(ca, s), len(a) - 1)]
        qb = b[min(np.searchsorted(cb, s), len(b) - 1)]
        total += (hi - lo) * abs(qa - qb)
    return total


def uniform_attachment_step_error_sq(N):
    """``||g - g_N||_2^2`` for g = 1 - max(x, y) and its left-point step version.

    Off-diagonal cells contribute ``int_0^{1/N} t^2 dt / N`` each, diagonal
    cells ``int int max(s, t)^2 = h^4 / 2``.
    """
    return (2 * N + 1) / (6.0 * N ** 3)


def normal_two_sided(alpha):
    """Upper ``alpha/2`` quantile of N(0, 1) by bisection on erfc."""
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.erfc(mid / math.sqrt(2)) > alpha:
            lo = mid
        else:
            hi = mid
    return hi


def _project_feasible(v, D):
    """Euclidean projection onto {|f| <= 1, |f_k - f_l| <= D_kl} (small QP)."""
    k = len(v)
    f = cp.Variable(k)
    i, j = np.triu_indices(k, 1)
    cons = [f <= 1, f >= -1]
    if len(i):
        cons.append(cp.abs(f[i] - f[j]) <= D[i, j])
    cp.Problem(cp.Minimize(cp.sum_squares(f - v)), cons).solve(
        solver=cp.CLARABEL, tol_gap_abs=1e-14, tol_gap_rel=1e-14, tol_feas=1e-14)
    return np.asarray(f.value)


def dbl_brute_force(mu_atoms, mu_w, nu_atoms, nu_w, starts=2, steps=(10.0, 1e2, 1e3, 1e4), seed=0):
    """Random feasible starts polished by projected gradient ascent.

    Each iterate is ``P(f + alpha h)`` for a growing step ``alpha``; for a
    linear objective over a polytope a large enough step lands on the
    optimal face, so the polish is exact up to the QP tolerance.
    """
    z, h = _net(mu_atoms, mu_w, nu_atoms, nu_w)
    D = np.linalg.norm(z[:, None, :] - z[None, :, :], axis=2)
    rs = np.random.default_rng(seed)
    best = abs(h.sum())
    for _ in range(starts):
        a = rs.integers(len(z))
        f = np.clip(rs.uniform(-1, 1) + D[:, a], -1.0, 1.0)  # feasible cone
        for alpha in steps:
            f = _project_feasible(f + alpha * h, D)
            # McShane envelope + clipping makes the iterate exactly feasible
            f = np.clip(np.min(f[None, :] + D, axis=1), -1.0, 1.0)
            best = max(best, float(h @ f))
    return best
