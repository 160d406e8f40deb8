"""Compiled numeric primitives.

Every per-type reward CDF used anywhere in the package (true parametric
distributions, kernel estimates, discrete atom sets) is packed into one
``Packed`` tuple of arrays so that the dual solver and the per-period policy
loops can run entirely in nopython mode.

Row ``j`` of a ``Packed`` is interpreted according to ``kind[j]``:

* ``PL``     piecewise-linear density on knots ``px[j, :pk[j]+1]``; piece ``i``
             has density ``pa[j, i]`` at its left end and ``pb[j, i]`` at its right.
* ``KERNEL`` Epanechnikov-smoothed CDF of the sorted samples ``ks[j, :kn[j]]``
             with bandwidth ``kh[j]``; while ``kn[j] == 0`` the PL row (the
             uniform prior) is used instead.
* ``ATOMS``  discrete law with atoms ``px[j, :pk[j]]`` and masses ``pa[j, :pk[j]]``.
"""

from __future__ import annotations

from collections import namedtuple
import math

import numpy as np
from numba import njit

PL = 0
KERNEL = 1
ATOMS = 2

Packed = namedtuple(
    "Packed", ["kind", "lo", "hi", "px", "pa", "pb", "pk", "ks", "kc", "kn", "kh", "kfix"]
)

INV_XTOL = 1e-10
EPAN_TAIL = 0.1875  # integral of u*k(u) over [0, 1] for the Epanechnikov kernel


# --------------------------------------------------------------------------
# piecewise-linear densities


@njit(cache=True)
def pl_cdf(x, xs, fa, fb, k):
    if x <= xs[0]:
        return 0.0
    if x >= xs[k]:
        return 1.0
    acc = 0.0
    for i in range(k):
        x0 = xs[i]
        x1 = xs[i + 1]
        w = x1 - x0
        if x < x1:
            u = x - x0
            s = (fb[i] - fa[i]) / w
            v = acc + fa[i] * u + 0.5 * s * u * u
            return min(max(v, 0.0), 1.0)
        acc += 0.5 * (fa[i] + fb[i]) * w
    return 1.0


@njit(cache=True)
def pl_pdf(x, xs, fa, fb, k):
    if x < xs[0] or x > xs[k]:
        return 0.0
    for i in range(k):
        x1 = xs[i + 1]
        if x < x1 or i == k - 1:
            w = x1 - xs[i]
            return fa[i] + (fb[i] - fa[i]) * (x - xs[i]) / w
    return 0.0


@njit(cache=True)
def pl_inv(p, xs, fa, fb, k):
    if p <= 0.0:
        return xs[0]
    if p >= 1.0:
        return xs[k]
    acc = 0.0
    for i in range(k):
        w = xs[i + 1] - xs[i]
        mass = 0.5 * (fa[i] + fb[i]) * w
        if acc + mass >= p:
            d = p - acc
            if d <= 0.0:
                return xs[i]
            s = (fb[i] - fa[i]) / w
            disc = fa[i] * fa[i] + 2.0 * s * d
            if disc < 0.0:
                disc = 0.0
            den = fa[i] + math.sqrt(disc)
            if den <= 0.0:
                return xs[i + 1]
            return min(xs[i] + 2.0 * d / den, xs[i + 1])
        acc += mass
    return xs[k]


@njit(cache=True)
def _pl_moment(u, x0, fa, s):
    return x0 * (fa * u + 0.5 * s * u * u) + 0.5 * fa * u * u + s * u * u * u / 3.0


@njit(cache=True)
def pl_upper_mean(x, xs, fa, fb, k):
    """Integral of t f(t) over t >= x."""
    tot = 0.0
    for i in range(k):
        x0 = xs[i]
        w = xs[i + 1] - x0
        u0 = x - x0
        if u0 >= w:
            continue
        if u0 < 0.0:
            u0 = 0.0
        s = (fb[i] - fa[i]) / w
        tot += _pl_moment(w, x0, fa[i], s) - _pl_moment(u0, x0, fa[i], s)
    return tot


# --------------------------------------------------------------------------
# Epanechnikov kernel CDF estimate


@njit(cache=True)
def epan_cdf(u):
    if u <= -1.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return 0.5 + 0.75 * u - 0.25 * u * u * u


@njit(cache=True)
def count_le(s, n, v):
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) // 2
        if s[mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def count_lt(s, n, v):
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) // 2
        if s[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def kern_cdf(x, s, n, h):
    i0 = count_le(s, n, x - h)
    i1 = count_lt(s, n, x + h)
    acc = float(i0)
    for i in range(i0, i1):
        acc += epan_cdf((x - s[i]) / h)
    v = acc / n
    return min(max(v, 0.0), 1.0)


@njit(cache=True)
def kern_pdf(x, s, n, h):
    i0 = count_le(s, n, x - h)
    i1 = count_lt(s, n, x + h)
    acc = 0.0
    for i in range(i0, i1):
        u = (x - s[i]) / h
        if -1.0 < u < 1.0:
            acc += 0.75 * (1.0 - u * u)
    return acc / (n * h)


@njit(cache=True)
def kern_upper_mean(x, s, cs, n, h):
    i0 = count_le(s, n, x - h)
    i1 = count_lt(s, n, x + h)
    tot = cs[n] - cs[i1]
    for i in range(i0, i1):
        v = (x - s[i]) / h
        if v < -1.0:
            v = -1.0
        elif v > 1.0:
            v = 1.0
        tot += s[i] * (1.0 - epan_cdf(v)) + h * EPAN_TAIL * (1.0 - v * v) ** 2
    return tot / n


@njit(cache=True)
def kern_cdf_pdf(x, s, n, h):
    """CDF and density in one pass over the kernel window."""
    i0 = count_le(s, n, x - h)
    i1 = count_lt(s, n, x + h)
    acc = float(i0)
    dens = 0.0
    for i in range(i0, i1):
        u = (x - s[i]) / h
        acc += epan_cdf(u)
        if -1.0 < u < 1.0:
            dens += 0.75 * (1.0 - u * u)
    v = acc / n
    return min(max(v, 0.0), 1.0), dens / (n * h)


@njit(cache=True)
def kern_inv(p, s, n, h, lo, hi):
    """Smallest x in [lo - h, hi + h] with F(x) >= p, to INV_XTOL.

    Safeguarded Newton on a shrinking bracket [a, b] with F(a) < p <= F(b),
    started at the empirical quantile. A Newton step that would leave the
    bracket or fails to halve the previous step is replaced by bisection.
    """
    a = lo - h
    b = hi + h
    if p <= 0.0 or kern_cdf(a, s, n, h) >= p:
        return a
    if s[n - 1] + h > b:
        b = s[n - 1] + h
    k = int(p * n)
    if k > n - 1:
        k = n - 1
    x = s[k]
    if not (a < x < b):
        x = 0.5 * (a + b)
    dx_old = b - a
    dx = dx_old
    while b - a > INV_XTOL:
        fx, d = kern_cdf_pdf(x, s, n, h)
        if fx >= p:
            b = x
        else:
            a = x
        if b - a <= INV_XTOL:
            break
        newton = False
        xn = x
        if d > 0.0 and abs(2.0 * (fx - p)) < abs(dx_old * d):
            xn = x - (fx - p) / d
            # lean past the root so the next evaluation closes the other side
            xn += -0.5 * INV_XTOL if fx >= p else 0.5 * INV_XTOL
            newton = a < xn < b
        dx_old = dx
        if newton:
            dx = xn - x
            x = xn
        else:
            dx = 0.5 * (b - a)
            x = a + dx
    return b


# --------------------------------------------------------------------------
# discrete atoms


@njit(cache=True)
def atom_cdf(x, xs, ps, k):
    acc = 0.0
    for i in range(k):
        if xs[i] <= x:
            acc += ps[i]
    return min(acc, 1.0)


@njit(cache=True)
def atom_inv(p, xs, ps, k):
    if p <= 0.0:
        return xs[0]
    acc = 0.0
    for i in range(k):
        acc += ps[i]
        if acc >= p - 1e-12:
            return xs[i]
    return xs[k - 1]


@njit(cache=True)
def atom_excess(price, xs, ps, k):
    tot = 0.0
    for i in range(k):
        if xs[i] > price:
            tot += ps[i] * (xs[i] - price)
    return tot


@njit(cache=True)
def atom_qint(q, xs, ps, k):
    rem = q
    tot = 0.0
    for i in range(k - 1, -1, -1):
        if rem <= 0.0:
            break
        take = min(ps[i], rem)
        tot += take * xs[i]
        rem -= take
    return tot


@njit(cache=True)
def atom_mass_near(price, xs, ps, k, eps):
    tot = 0.0
    for i in range(k):
        if abs(xs[i] - price) <= eps:
            tot += ps[i]
    return tot


# --------------------------------------------------------------------------
# dispatch over a packed row


@njit(cache=True)
def _is_kernel(P, j):
    return P.kind[j] == KERNEL and P.kn[j] > 0


@njit(cache=True)
def prov_cdf(P, j, x):
    if _is_kernel(P, j):
        return kern_cdf(x, P.ks[j], P.kn[j], P.kh[j])
    if P.kind[j] == ATOMS:
        return atom_cdf(x, P.px[j], P.pa[j], P.pk[j])
    return pl_cdf(x, P.px[j], P.pa[j], P.pb[j], P.pk[j])


@njit(cache=True)
def prov_pdf(P, j, x):
    if _is_kernel(P, j):
        return kern_pdf(x, P.ks[j], P.kn[j], P.kh[j])
    if P.kind[j] == ATOMS:
        return 0.0
    return pl_pdf(x, P.px[j], P.pa[j], P.pb[j], P.pk[j])


@njit(cache=True)
def prov_inv(P, j, p):
    if _is_kernel(P, j):
        return kern_inv(p, P.ks[j], P.kn[j], P.kh[j], P.lo[j], P.hi[j])
    if P.kind[j] == ATOMS:
        return atom_inv(p, P.px[j], P.pa[j], P.pk[j])
    return pl_inv(p, P.px[j], P.pa[j], P.pb[j], P.pk[j])


@njit(cache=True)
def prov_excess(P, j, price):
    """E[(R - price)^+]."""
    if P.kind[j] == ATOMS:
        return atom_excess(price, P.px[j], P.pa[j], P.pk[j])
    if _is_kernel(P, j):
        n = P.kn[j]
        up = kern_upper_mean(price, P.ks[j], P.kc[j], n, P.kh[j])
    else:
        up = pl_upper_mean(price, P.px[j], P.pa[j], P.pb[j], P.pk[j])
    v = up - price * (1.0 - prov_cdf(P, j, price))
    return max(v, 0.0)


@njit(cache=True)
def prov_qint(P, j, q):
    """Integral of the inverse CDF over [1 - q, 1]."""
    if q <= 0.0:
        return 0.0
    if q > 1.0:
        q = 1.0
    if P.kind[j] == ATOMS:
        return atom_qint(q, P.px[j], P.pa[j], P.pk[j])
    x = prov_inv(P, j, 1.0 - q)
    if _is_kernel(P, j):
        return kern_upper_mean(x, P.ks[j], P.kc[j], P.kn[j], P.kh[j])
    return pl_upper_mean(x, P.px[j], P.pa[j], P.pb[j], P.pk[j])


@njit(cache=True)
def prov_top(P, j):
    if _is_kernel(P, j):
        return max(P.hi[j], P.ks[j][P.kn[j] - 1]) + P.kh[j]
    return P.hi[j]


@njit(cache=True)
def prov_qf(P, j, price):
    """Service probability 1 - F(price) and density f(price) together."""
    if _is_kernel(P, j):
        F, f = kern_cdf_pdf(price, P.ks[j], P.kn[j], P.kh[j])
    elif P.kind[j] == ATOMS:
        F = atom_cdf(price, P.px[j], P.pa[j], P.pk[j])
        f = 0.0
    else:
        F = pl_cdf(price, P.px[j], P.pa[j], P.pb[j], P.pk[j])
        f = pl_pdf(price, P.px[j], P.pa[j], P.pb[j], P.pk[j])
    return min(max(1.0 - F, 0.0), 1.0), f


@njit(cache=True)
def prov_q(P, j, price):
    v = 1.0 - prov_cdf(P, j, price)
    return min(max(v, 0.0), 1.0)


# --------------------------------------------------------------------------
# vectorised wrappers used from Python


@njit(cache=True)
def vec_cdf(P, j, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = prov_cdf(P, j, xs[i])
    return out


@njit(cache=True)
def vec_pdf(P, j, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = prov_pdf(P, j, xs[i])
    return out


@njit(cache=True)
def vec_inv(P, j, ps):
    out = np.empty(ps.shape[0])
    for i in range(ps.shape[0]):
        out[i] = prov_inv(P, j, ps[i])
    return out


@njit(cache=True)
def vec_qint(P, j, qs):
    out = np.empty(qs.shape[0])
    for i in range(qs.shape[0]):
        out[i] = prov_qint(P, j, qs[i])
    return out


@njit(cache=True)
def vec_excess(P, j, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = prov_excess(P, j, xs[i])
    return out


# --------------------------------------------------------------------------
# fluid dual


@njit(cache=True)
def prices(A, lam, out):
    n, m = A.shape
    for j in range(n):
        p = 0.0
        for i in range(m):
            p += A[j, i] * lam[i]
        out[j] = p


@njit(cache=True)
def primal_q(P, A, lam, q):
    n, m = A.shape
    for j in range(n):
        p = 0.0
        for i in range(m):
            p += A[j, i] * lam[i]
        q[j] = prov_q(P, j, p)


@njit(cache=True)
def dual_value(P, w, A, c, lam):
    n, m = A.shape
    val = 0.0
    for i in range(m):
        val += lam[i] * c[i]
    for j in range(n):
        if w[j] == 0.0:
            continue
        p = 0.0
        for i in range(m):
            p += A[j, i] * lam[i]
        val += w[j] * prov_excess(P, j, p)
    return val


@njit(cache=True)
def usage(w, A, q, out):
    n, m = A.shape
    for i in range(m):
        out[i] = 0.0
    for j in range(n):
        for i in range(m):
            out[i] += w[j] * A[j, i] * q[j]


@njit(cache=True)
def lambda_scale(P, w, A):
    """Upper end of the useful price range for each resource."""
    n, m = A.shape
    top = 0.0
    amin = np.inf
    for j in range(n):
        if w[j] <= 0.0:
            continue
        t = prov_top(P, j)
        if t > top:
            top = t
        for i in range(m):
            if A[j, i] > 0.0 and A[j, i] < amin:
                amin = A[j, i]
    if amin == np.inf or top <= 0.0:
        return 0.0
    return top / amin * (1.0 + 1e-9) + 1e-12


@njit(cache=True)
def _g1(P, w, a, c, lam):
    """Consumption excess at price lam and its derivative."""
    tot = -c
    der = 0.0
    for j in range(a.shape[0]):
        if w[j] > 0.0 and a[j] > 0.0:
            q, f = prov_qf(P, j, lam * a[j])
            tot += w[j] * a[j] * q
            der -= w[j] * a[j] * a[j] * f
    return tot, der


@njit(cache=True)
def _record(trace, k, it, lam, val):
    if k < trace.shape[0]:
        trace[k, 0] = it
        for i in range(lam.shape[0]):
            trace[k, 1 + i] = lam[i]
        trace[k, trace.shape[1] - 1] = val
        return k + 1
    return k


@njit(cache=True)
def solve_bisect(P, w, A, c, lam0, maxit, trace):
    """Single-resource dual: bracketed root of the consumption excess.

    Newton steps are taken whenever they stay strictly inside the current
    bracket and shrink it fast enough; otherwise the bracket is bisected.
    Returns (lam, iterations, converged, n_trace).
    """
    a = np.ascontiguousarray(A[:, 0])
    cap = c[0]
    lam = np.zeros(1)
    nt = 0
    top = lambda_scale(P, w, A)
    if top <= 0.0:
        return lam, 0, True, nt
    g0, _ = _g1(P, w, a, cap, 0.0)
    if g0 <= 0.0:
        if trace.shape[0] > 0:
            nt = _record(trace, nt, 0, lam, dual_value(P, w, A, c, lam))
        return lam, 0, True, nt
    lo = 0.0
    hi = top
    scale = 1.0
    for j in range(a.shape[0]):
        scale += w[j] * a[j]
    gtol = 1e-13 * scale
    xtol = 1e-14 * max(1.0, hi)
    x = lam0[0]
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    dx_old = hi - lo
    dx = dx_old
    conv = False
    it = 0
    for it in range(1, maxit + 1):
        gx, d = _g1(P, w, a, cap, x)
        lam[0] = x
        if trace.shape[0] > 0:
            nt = _record(trace, nt, it, lam, dual_value(P, w, A, c, lam))
        if gx > 0.0:
            lo = x
        else:
            hi = x
        if abs(gx) <= gtol:
            conv = True
            break
        if hi - lo <= xtol:
            x = hi
            conv = True
            break
        use_newton = False
        if d < 0.0:
            xn = x - gx / d
            if lo < xn < hi and abs(2.0 * gx) < abs(dx_old * d):
                use_newton = True
        dx_old = dx
        if use_newton:
            dx = -gx / d
            x = xn
            if abs(dx) <= xtol:
                conv = True
                break
        else:
            dx = 0.5 * (hi - lo)
            x = lo + dx
    lam[0] = x
    return lam, it, conv, nt


@njit(cache=True)
def _solve_small(H, g, free, out):
    """Solve H_ff d_f = -g_f by Gaussian elimination; False if singular."""
    m = g.shape[0]
    idx = np.empty(m, dtype=np.int64)
    k = 0
    for i in range(m):
        out[i] = 0.0
        if free[i]:
            idx[k] = i
            k += 1
    if k == 0:
        return False
    M = np.empty((k, k + 1))
    diag = 0.0
    for r in range(k):
        diag = max(diag, H[idx[r], idx[r]])
    if diag <= 0.0:
        return False
    for r in range(k):
        for s in range(k):
            M[r, s] = H[idx[r], idx[s]]
        M[r, r] += 1e-12 * diag
        M[r, k] = -g[idx[r]]
    for col in range(k):
        piv = col
        for r in range(col + 1, k):
            if abs(M[r, col]) > abs(M[piv, col]):
                piv = r
        if abs(M[piv, col]) <= 1e-14 * diag:
            return False
        if piv != col:
            for s in range(k + 1):
                tmp = M[col, s]
                M[col, s] = M[piv, s]
                M[piv, s] = tmp
        for r in range(col + 1, k):
            f = M[r, col] / M[col, col]
            for s in range(col, k + 1):
                M[r, s] -= f * M[col, s]
    for r in range(k - 1, -1, -1):
        acc = M[r, k]
        for s in range(r + 1, k):
            acc -= M[r, s] * out[idx[s]]
        out[idx[r]] = acc / M[r, r]
    return True


@njit(cache=True)
def _eval_grad(P, w, A, c, lam, pr, q, f, g):
    """Fill prices, service probabilities, densities and the dual gradient."""
    n, m = A.shape
    prices(A, lam, pr)
    for i in range(m):
        g[i] = c[i]
    for j in range(n):
        if w[j] == 0.0:
            q[j] = 0.0
            f[j] = 0.0
            continue
        q[j], f[j] = prov_qf(P, j, pr[j])
        for i in range(m):
            g[i] -= w[j] * A[j, i] * q[j]


@njit(cache=True)
def _kkt(lam, g):
    res = 0.0
    for i in range(lam.shape[0]):
        r = lam[i] - max(lam[i] - g[i], 0.0)
        res = max(res, abs(r))
    return res


@njit(cache=True)
def solve_projected(P, w, A, c, lam0, newton, tol, maxit, trace):
    """Projected Newton (or gradient) descent on the dual.

    A short full Newton step is kept whenever it at least halves the
    projected-gradient residual (the locally quadratic regime). Otherwise an Armijo backtracking search on the dual value is run
    along the Newton or Barzilai-Borwein gradient direction, and if that finds
    no decrease (kinks of a discrete law) a normalised subgradient step of
    decaying length is taken. Returns (lam, iterations, converged, n_trace).
    """
    n, m = A.shape
    lam = np.maximum(lam0.copy(), 0.0)
    q = np.empty(n)
    f = np.empty(n)
    g = np.empty(m)
    q2 = np.empty(n)
    f2 = np.empty(n)
    g2 = np.empty(m)
    H = np.empty((m, m))
    d = np.empty(m)
    trial = np.empty(m)
    pr = np.empty(n)
    free = np.empty(m, dtype=np.bool_)
    scale = 1.0
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += w[j] * A[j, i]
        scale = max(scale, s, c[i])
    gtol = tol * scale
    lscale = lambda_scale(P, w, A)
    if lscale <= 0.0:
        lscale = 1.0
    tracing = trace.shape[0] > 0
    nt = 0
    if tracing:
        nt = _record(trace, nt, 0, lam, dual_value(P, w, A, c, lam))
    _eval_grad(P, w, A, c, lam, pr, q, f, g)
    res = _kkt(lam, g)
    best = lam.copy()
    bestD = np.inf
    conv = False
    n_sub = 0
    bb = 0.0
    it = 0
    for it in range(1, maxit + 1):
        if res <= gtol:
            conv = True
            break
        for i in range(m):
            free[i] = not (lam[i] <= 1e-15 * lscale and g[i] > 0.0)
        ok = False
        if newton:
            for r in range(m):
                for s2 in range(m):
                    H[r, s2] = 0.0
            for j in range(n):
                if w[j] == 0.0 or f[j] <= 0.0:
                    continue
                for r in range(m):
                    for s2 in range(m):
                        H[r, s2] += w[j] * f[j] * A[j, r] * A[j, s2]
            ok = _solve_small(H, g, free, d)
            if ok:
                slope = 0.0
                for i in range(m):
                    slope += g[i] * d[i]
                ok = slope < 0.0
        if ok:
            dmax = 0.0
            for i in range(m):
                trial[i] = max(lam[i] + d[i], 0.0)
                dmax = max(dmax, abs(trial[i] - lam[i]))
            local = dmax <= 0.1 * lscale
            res2 = res
            if local:
                _eval_grad(P, w, A, c, trial, pr, q2, f2, g2)
                res2 = _kkt(trial, g2)
            if local and (res2 <= 0.5 * res or res2 <= gtol):
                for i in range(m):
                    lam[i] = trial[i]
                    g[i] = g2[i]
                for j in range(n):
                    q[j] = q2[j]
                    f[j] = f2[j]
                res = res2
                if tracing:
                    nt = _record(trace, nt, it, lam, dual_value(P, w, A, c, lam))
                continue
        else:
            gn = 0.0
            for i in range(m):
                if free[i]:
                    gn = max(gn, abs(g[i]))
            if gn <= 0.0:
                conv = True
                break
            step = 0.1 * lscale / gn if bb <= 0.0 else bb
            for i in range(m):
                d[i] = -step * g[i] if free[i] else 0.0
        D = dual_value(P, w, A, c, lam)
        if D < bestD:
            bestD = D
            for i in range(m):
                best[i] = lam[i]
        st = 1.0
        accepted = False
        Dn = D
        for _ in range(60):
            dec = 0.0
            for i in range(m):
                trial[i] = max(lam[i] + st * d[i], 0.0)
                dec += g[i] * (trial[i] - lam[i])
            Dn = dual_value(P, w, A, c, trial)
            if Dn <= D + 1e-4 * dec + 1e-15 * abs(D):
                accepted = True
                break
            st *= 0.5
        if not accepted:
            n_sub += 1
            gn = 0.0
            for i in range(m):
                gn += g[i] * g[i]
            gn = math.sqrt(gn)
            step = 0.5 * lscale / math.sqrt(n_sub)
            for i in range(m):
                trial[i] = max(lam[i] - step * g[i] / gn, 0.0)
            Dn = dual_value(P, w, A, c, trial)
        _eval_grad(P, w, A, c, trial, pr, q2, f2, g2)
        # Barzilai-Borwein length for the next gradient direction
        sy = 0.0
        ss = 0.0
        for i in range(m):
            si = trial[i] - lam[i]
            sy += si * (g2[i] - g[i])
            ss += si * si
        bb = ss / sy if sy > 0.0 else 0.0
        for i in range(m):
            lam[i] = trial[i]
            g[i] = g2[i]
        for j in range(n):
            q[j] = q2[j]
            f[j] = f2[j]
        res = _kkt(lam, g)
        if tracing:
            nt = _record(trace, nt, it, lam, Dn)
        if Dn < bestD:
            bestD = Dn
            for i in range(m):
                best[i] = lam[i]
        if accepted and D - Dn <= 1e-16 * max(1.0, abs(D)) and res <= 1e-6 * scale:
            conv = True
            break
    if not conv and bestD < np.inf:
        if bestD < dual_value(P, w, A, c, lam):
            lam = best
    return lam, it, conv, nt


@njit(cache=True)
def scale_to_capacity(w, A, c, q, tmp):
    """Shrink q proportionally on every violated constraint; return the worst violation."""
    n, m = A.shape
    usage(w, A, q, tmp)
    worst = 0.0
    factor = np.ones(n)
    for i in range(m):
        viol = tmp[i] - c[i]
        if viol > worst:
            worst = viol
        if viol > 1e-9 * max(1.0, c[i]) or (c[i] <= 0.0 and tmp[i] > 0.0):
            f = c[i] / tmp[i] if tmp[i] > 0.0 else 0.0
            for j in range(n):
                if A[j, i] > 0.0 and w[j] > 0.0 and f < factor[j]:
                    factor[j] = f
    for j in range(n):
        q[j] *= factor[j]
    return worst


@njit(cache=True)
def solve(P, w, A, c, lam0, method, tol, maxit, trace):
    """method: 0 bisection (m == 1), 1 projected Newton, 2 projected gradient."""
    if method == 0:
        return solve_bisect(P, w, A, c, lam0, maxit, trace)
    return solve_projected(P, w, A, c, lam0, method == 1, tol, maxit, trace)


# --------------------------------------------------------------------------
# online pieces


@njit(cache=True)
def meta_accept(remaining, a, r, threshold):
    if r < threshold:
        return False
    for i in range(a.shape[0]):
        if remaining[i] < a[i]:
            return False
    return True


@njit(cache=True)
def kernel_insert(P, j, r):
    n = P.kn[j]
    s = P.ks[j]
    cs = P.kc[j]
    pos = count_le(s, n, r)
    for i in range(n, pos, -1):
        s[i] = s[i - 1]
    s[pos] = r
    for i in range(pos, n + 1):
        cs[i + 1] = cs[i] + s[i]
    P.kn[j] = n + 1
    if P.kfix[j] > 0.0:
        P.kh[j] = P.kfix[j]
    else:
        P.kh[j] = 1.0 / math.sqrt(n + 1.0)


@njit(cache=True)
def rounding_band(t, T, kappa):
    lt = math.log(T)
    return 2.0 * kappa * (lt / math.sqrt(T - t + 1.0) + lt / math.sqrt(t))


@njit(cache=True)
def adaptive_step(P, A, w, cap, remaining, lam, j, r, t, T, kappa, update, resolve,
                  method, tol, maxit, qbuf, tmp, trace):
    """One period of the partially (kappa <= 0) or fully (kappa > 0) adaptive rule.

    ``t`` is 1-based. Mutates ``P``, ``remaining`` and ``lam``.
    Returns (accepted, threshold, q_j, branch) with branch 0 quantile,
    1 accept-all rounding, 2 reject-all rounding.
    """
    if update:
        tolr = 1e-12 * max(1.0, abs(r))
        if r < P.lo[j] - tolr or r > P.hi[j] + tolr:
            raise ValueError("observed reward outside the type's support bounds")
        kernel_insert(P, j, r)
    if resolve:
        new_lam, _, _, _ = solve(P, w, A, cap, lam, method, tol, maxit, trace)
        for i in range(lam.shape[0]):
            lam[i] = new_lam[i]
    primal_q(P, A, lam, qbuf)
    scale_to_capacity(w, A, cap, qbuf, tmp)
    qj = qbuf[j]
    branch = 0
    if kappa > 0.0:
        band = rounding_band(t, T, kappa)
        if qj >= 1.0 - band:
            threshold = P.lo[j]
            branch = 1
        elif qj <= band:
            threshold = P.hi[j] + 1.0
            branch = 2
        else:
            threshold = prov_inv(P, j, 1.0 - qj)
    else:
        threshold = prov_inv(P, j, 1.0 - qj)
    acc = meta_accept(remaining, A[j], r, threshold)
    if acc:
        for i in range(remaining.shape[0]):
            remaining[i] -= A[j, i]
    return acc, threshold, qj, branch


@njit(cache=True)
def _any_fits(A, remaining):
    for j in range(A.shape[0]):
        ok = True
        for i in range(A.shape[1]):
            if remaining[i] < A[j, i]:
                ok = False
                break
        if ok:
            return True
    return False


@njit(cache=True)
def run_adaptive(P, A, C, types, rewards, weights, kappa, update, resolve_every,
                 method, tol, maxit, out_thr, out_x, out_rem, out_q, out_branch):
    """Whole-horizon loop; ``weights`` has one row (fixed) or one row per period."""
    T = types.shape[0]
    n, m = A.shape
    remaining = C.copy()
    lam = np.zeros(m)
    qbuf = np.empty(n)
    tmp = np.empty(m)
    trace = np.empty((0, m + 2))
    fixed = weights.shape[0] == 1
    for t0 in range(T):
        if not _any_fits(A, remaining):
            # nothing can be accepted any more; no threshold is computed
            for s in range(t0, T):
                out_thr[s] = np.nan
                out_x[s] = False
                out_q[s] = np.nan
                out_branch[s] = -1
                for i in range(m):
                    out_rem[s, i] = remaining[i]
            break
        w = weights[0] if fixed else weights[t0]
        cap = C if kappa <= 0.0 else remaining.copy()
        resolve = (t0 % resolve_every) == 0
        acc, thr, qj, br = adaptive_step(
            P, A, w, cap, remaining, lam, types[t0], rewards[t0], t0 + 1, T, kappa,
            update, resolve, method, tol, maxit, qbuf, tmp, trace,
        )
        out_thr[t0] = thr
        out_x[t0] = acc
        out_q[t0] = qj
        out_branch[t0] = br
        for i in range(m):
            out_rem[t0, i] = remaining[i]


@njit(cache=True)
def run_fixed(A, C, types, rewards, thresholds, out_x, out_rem):
    T = types.shape[0]
    m = A.shape[1]
    remaining = C.copy()
    for t0 in range(T):
        j = types[t0]
        acc = meta_accept(remaining, A[j], rewards[t0], thresholds[j])
        if acc:
            for i in range(m):
                remaining[i] -= A[j, i]
        out_x[t0] = acc
        for i in range(m):
            out_rem[t0, i] = remaining[i]


# --------------------------------------------------------------------------
# offline benchmark


@njit(cache=True)
def exhaustive_knapsack(r, A, C):
    """Best subset by Gray-code enumeration of all 2^T subsets."""
    T, m = A.shape
    use = np.zeros(m)
    inset = np.zeros(T, dtype=np.bool_)
    cur = 0.0
    best = 0.0
    slack = np.empty(m)
    for i in range(m):
        slack[i] = 1e-9 * max(1.0, abs(C[i]))
    total = 1 << T
    for k in range(1, total):
        b = 0
        kk = k
        while (kk & 1) == 0:
            kk >>= 1
            b += 1
        if inset[b]:
            inset[b] = False
            cur -= r[b]
            for i in range(m):
                use[i] -= A[b, i]
        else:
            inset[b] = True
            cur += r[b]
            for i in range(m):
                use[i] += A[b, i]
        if cur > best:
            feas = True
            for i in range(m):
                if use[i] > C[i] + slack[i]:
                    feas = False
                    break
            if feas:
                best = cur
    return best


# --------------------------------------------------------------------------
# construction helpers (plain Python)


def pack(rows, kinds, lo, hi, capacity=0, kfix=None):
    """Build a ``Packed`` from per-type rows.

    ``rows[j]`` is ``(xs, fa, fb)`` for PL/KERNEL rows and ``(xs, ps)`` for
    ATOMS rows. ``capacity`` reserves room for that many kernel samples per type.
    """
    n = len(rows)
    width = max(len(r[0]) for r in rows)
    px = np.zeros((n, width))
    pa = np.zeros((n, width))
    pb = np.zeros((n, width))
    pk = np.zeros(n, dtype=np.int64)
    for j, (row, kind) in enumerate(zip(rows, kinds)):
        xs = np.asarray(row[0], dtype=float)
        if kind == ATOMS:
            px[j, : len(xs)] = xs
            pa[j, : len(xs)] = row[1]
            pk[j] = len(xs)
        else:
            px[j, : len(xs)] = xs
            pa[j, : len(xs) - 1] = row[1]
            pb[j, : len(xs) - 1] = row[2]
            pk[j] = len(xs) - 1
    cap = max(int(capacity), 1)
    fix = np.zeros(n) if kfix is None else np.asarray(kfix, dtype=float).copy()
    return Packed(
        np.asarray(kinds, dtype=np.int64),
        np.asarray(lo, dtype=float).copy(),
        np.asarray(hi, dtype=float).copy(),
        px, pa, pb, pk,
        np.zeros((n, cap)),
        np.zeros((n, cap + 1)),
        np.zeros(n, dtype=np.int64),
        np.ones(n),
        fix,
    )


def fill_kernel(P, j, samples):
    """Load sorted ``samples`` into kernel row ``j`` of ``P`` in place."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.shape[0]
    P.ks[j, :n] = s
    P.kc[j, 0] = 0.0
    P.kc[j, 1 : n + 1] = np.cumsum(s)
    P.kn[j] = n
    if P.kfix[j] > 0.0:
        P.kh[j] = P.kfix[j]
    elif n > 0:
        P.kh[j] = 1.0 / np.sqrt(n)


def copy_packed(P):
    return Packed(*(np.array(a, copy=True) for a in P))
