"""Compiled inner loops of the energy engine.

Two pieces do the work.

``support_mass`` evaluates the propertime integral of one loop at one
center point against plate and body together.  Loop points are grouped
into a fixed-arity tree of bounding balls.  A ball gives a conservative
scale interval for all of its points, so whole subtrees are skipped when
that interval is already covered by the running union, or when it lies
entirely above a cut scale whose remaining tail is at most ``lam_eps`` of
the running total.  Leaves contribute exact per-point quadratic roots.

``integrate_*`` drive the spatial quadrature: a globally adaptive
Genz-Malik 7/5 cubature over ``(rho, t)`` with ``t = z / gap(rho)`` for
sphere and cylinder, an adaptive Gauss-Kronrod rule in ``z`` for the slab.
The integration box grows until closed-form tail bounds certify that the
discarded mass is below ``trunc_tol`` of the value.

All functions release the GIL so loops can be processed by threads.
"""
import numpy as np
from numba import njit

KIND_SLAB = 0
KIND_SPHERE = 1
KIND_CYLINDER = 2

FLAG_QTOL = 1
FLAG_TRUNC = 2
FLAG_DIVERGENT = 4

TREE_ARITY = 8

# config vector layout
C_MASS, C_QTOL, C_TRUNC, C_LAMEPS, C_DEPTH, C_EVALS = 0, 1, 2, 3, 4, 5

_EULER = 0.5772156649015329


@njit(cache=True, nogil=True)
def expn3(x):
    """E_3(x) for x >= 0 (series below 1, continued fraction above)."""
    if x == 0.0:
        return 0.5
    if x > 1.0:
        b = x + 3.0
        c = 1.0e300
        d = 1.0 / b
        h = d
        for i in range(1, 500):
            an = -i * (2.0 + i)
            b += 2.0
            d = 1.0 / (an * d + b)
            c = b + an / c
            de = c * d
            h *= de
            if abs(de - 1.0) < 3e-16:
                break
        return h * np.exp(-x)
    ans = 0.5
    fact = 1.0
    for i in range(1, 500):
        fact *= -x / i
        if i != 2:
            de = -fact / (i - 2.0)
        else:
            de = fact * (-np.log(x) - _EULER + 1.5)
        ans += de
        if abs(de) < abs(ans) * 3e-16:
            break
    return ans


@njit(cache=True, nogil=True)
def tail_mass(lam, m):
    """int_lam^inf 2 s^-5 exp(-m^2 s^2) ds."""
    if lam == np.inf:
        return 0.0
    if m == 0.0:
        return 0.5 / lam**4
    return expn3(m * m * lam * lam) / lam**4


@njit(cache=True, nogil=True)
def interval_mass(lo, hi, m):
    if lo <= 0.0:
        return np.inf
    return tail_mass(lo, m) - tail_mass(hi, m)


@njit(cache=True, nogil=True)
def _insert(ulo, uhi, n, lo, hi):
    # insert [lo, hi] into the sorted disjoint list, merging overlaps
    i = 0
    while i < n and uhi[i] < lo:
        i += 1
    j = i
    while j < n and ulo[j] <= hi:
        j += 1
    if i < j:
        if ulo[i] < lo:
            lo = ulo[i]
        if uhi[j - 1] > hi:
            hi = uhi[j - 1]
    shift = 1 - (j - i)
    if shift > 0:
        for k in range(n - 1, j - 1, -1):
            ulo[k + shift] = ulo[k]
            uhi[k + shift] = uhi[k]
    elif shift < 0:
        for k in range(j, n):
            ulo[k + shift] = ulo[k]
            uhi[k + shift] = uhi[k]
    ulo[i] = lo
    uhi[i] = hi
    return n + shift


@njit(cache=True, nogil=True)
def build_tree(Y, B):
    """Bounding balls over contiguous point ranges, level by level.

    Level 0 nodes hold ``B`` points, level ``l`` nodes hold ``B`` children.
    Returns centers, radii and level offsets into the flat node arrays.
    """
    N = Y.shape[0]
    nlev = 1
    span = B
    while (N + span - 1) // span > B:
        span *= B
        nlev += 1
    off = np.zeros(nlev + 1, np.int64)
    span = B
    for lev in range(nlev):
        off[lev + 1] = off[lev] + (N + span - 1) // span
        span *= B
    tot = off[nlev]
    cen = np.zeros((tot, 3))
    rad = np.zeros(tot)
    span = B
    for lev in range(nlev):
        for j in range(off[lev + 1] - off[lev]):
            s = j * span
            e = min(N, s + span)
            g = off[lev] + j
            for d in range(3):
                lo = Y[s, d]
                hi = Y[s, d]
                for i in range(s, e):
                    v = Y[i, d]
                    if v < lo:
                        lo = v
                    if v > hi:
                        hi = v
                cen[g, d] = 0.5 * (lo + hi)
            r2 = 0.0
            for i in range(s, e):
                q = (Y[i, 0] - cen[g, 0]) ** 2 + (Y[i, 1] - cen[g, 1]) ** 2 + (Y[i, 2] - cen[g, 2]) ** 2
                if q > r2:
                    r2 = q
            rad[g] = np.sqrt(r2) * (1.0 + 1e-12) + 1e-300
        span *= B
    return cen, rad, off


@njit(cache=True, nogil=True)
def _ball_bound(c0, c1, c2, r, dx, dz, R, C, lp):
    # scales at which any point of the ball can be inside the body:
    # |d + lam m| <= R + lam r, squared
    al = c0 * c0 + c1 * c1 + c2 * c2 - r * r
    be = dx * c0 + dz * c2 - R * r
    if al > 0.0:
        disc = be * be - al * C
        if disc <= 0.0:
            return 1.0, 0.0
        s = np.sqrt(disc)
        U = (-be + s) / al
        if U <= lp:
            return 1.0, 0.0
        L = (-be - s) / al
    else:
        L = 0.0
        U = np.inf
    if L < lp:
        L = lp
    return L, U


@njit(cache=True, nogil=True)
def _push_children(lev, j, cen, rad, off, B, dx, dz, R, C, lp, sl, sn, sL, sU, sp, tL, tU, ti):
    # children of node (lev, j) at level lev-1, or the top level when lev < 0
    if lev < 0:
        clev = off.shape[0] - 2
        c0 = 0
        c1 = off[clev + 1] - off[clev]
    else:
        clev = lev - 1
        c0 = j * B
        c1 = min(off[clev + 1] - off[clev], c0 + B)
    nt = 0
    for jj in range(c0, c1):
        g = off[clev] + jj
        L, U = _ball_bound(cen[g, 0], cen[g, 1], cen[g, 2], rad[g], dx, dz, R, C, lp)
        if L < U:
            # insertion sort, descending in L so the smallest L is popped first
            b = nt - 1
            while b >= 0 and tL[b] < L:
                tL[b + 1] = tL[b]
                tU[b + 1] = tU[b]
                ti[b + 1] = ti[b]
                b -= 1
            tL[b + 1] = L
            tU[b + 1] = U
            ti[b + 1] = jj
            nt += 1
    for q in range(nt):
        sl[sp] = clev
        sn[sp] = ti[q]
        sL[sp] = tL[q]
        sU[sp] = tU[q]
        sp += 1
    return sp


@njit(cache=True, nogil=True)
def support_mass(Y, zmin, zmax, cen, rad, off, X, Z, h0, R, m, eps, ulo, uhi, sl, sn, sL, sU, tL, tU, ti):
    """Propertime integral of one loop at ``(X, 0, Z)`` for plate + body.

    The body center is ``(0, 0, h0)``; for a cylinder ``Y`` must carry zero
    ``y`` components.  Scales above the cut ``(2 eps total)^(-1/4)`` are
    discarded, which loses at most ``eps`` of the returned value.
    """
    if Z > 0.0:
        if zmin >= 0.0:
            return 0.0
        lp = Z / (-zmin)
    elif Z < 0.0:
        if zmax <= 0.0:
            return 0.0
        lp = -Z / zmax
    else:
        lp = 0.0
    B = TREE_ARITY
    N = Y.shape[0]
    dx = X
    dz = Z - h0
    C = dx * dx + dz * dz - R * R
    sp = _push_children(-1, 0, cen, rad, off, B, dx, dz, R, C, lp, sl, sn, sL, sU, 0, tL, tU, ti)
    n = 0
    total = 0.0
    while sp > 0:
        sp -= 1
        lev = sl[sp]
        j = sn[sp]
        L = sL[sp]
        U = sU[sp]
        if n > 0 and total > 0.0:
            cut = (2.0 * eps * total) ** -0.25
            if L >= cut:
                continue
            if U > cut:
                U = cut
            covered = False
            for q in range(n):
                if ulo[q] <= L and uhi[q] >= U:
                    covered = True
                    break
            if covered:
                continue
        if lev > 0:
            sp = _push_children(lev, j, cen, rad, off, B, dx, dz, R, C, lp, sl, sn, sL, sU, sp, tL, tU, ti)
            continue
        s0 = j * B
        e0 = min(N, s0 + B)
        changed = False
        for i in range(s0, e0):
            y0 = Y[i, 0]
            y1 = Y[i, 1]
            y2 = Y[i, 2]
            A = y0 * y0 + y1 * y1 + y2 * y2
            Bq = dx * y0 + dz * y2
            if A == 0.0:
                if C <= 0.0:
                    n = _insert(ulo, uhi, n, lp, np.inf)
                    changed = True
                continue
            disc = Bq * Bq - A * C
            if disc <= 0.0:
                continue
            s = np.sqrt(disc)
            if Bq >= 0.0:
                q = -(Bq + s)
            else:
                q = s - Bq
            r1 = q / A
            r2 = C / q
            if r1 < r2:
                lo = r1
                hi = r2
            else:
                lo = r2
                hi = r1
            if hi <= lp:
                continue
            if lo < lp:
                lo = lp
            n = _insert(ulo, uhi, n, lo, hi)
            changed = True
        if changed:
            total = 0.0
            for q in range(n):
                total += interval_mass(ulo[q], uhi[q], m)
    return total


@njit(cache=True, nogil=True)
def gap(rho, a, R):
    q = R * R - rho * rho
    return a + R - (np.sqrt(q) if q > 0.0 else 0.0)


@njit(cache=True, nogil=True)
def _f2(kind, r, t, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i):
    ar = abs(r)
    g = gap(ar, a, R)
    v = support_mass(Y, zmin, zmax, cen, rad, off, r, t * g, a + R, R, m, eps,
                     ws_f[0], ws_f[1], ws_i[0], ws_i[1], ws_f[2], ws_f[3], ws_f[4], ws_f[5], ws_i[2])
    if kind == KIND_SPHERE:
        return 2.0 * np.pi * ar * g * v
    return g * v


_GM_L2 = np.sqrt(9.0 / 70.0)
_GM_L3 = np.sqrt(9.0 / 10.0)
_GM_L5 = np.sqrt(9.0 / 19.0)
_GM_RATIO = (9.0 / 70.0) / (9.0 / 10.0)


@njit(cache=True, nogil=True)
def _gm_cell(kind, c0, c1, h0, h1, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i):
    """Genz-Malik degree 7 rule with embedded degree 5 error estimate.

    Returns (value, error, split axis).
    """
    f0 = _f2(kind, c0, c1, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
    s2 = 0.0
    s3 = 0.0
    d0 = 0.0
    d1 = 0.0
    for ax in range(2):
        p2 = 0.0
        p3 = 0.0
        for sg in (-1.0, 1.0):
            if ax == 0:
                p2 += _f2(kind, c0 + sg * _GM_L2 * h0, c1, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
                p3 += _f2(kind, c0 + sg * _GM_L3 * h0, c1, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
            else:
                p2 += _f2(kind, c0, c1 + sg * _GM_L2 * h1, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
                p3 += _f2(kind, c0, c1 + sg * _GM_L3 * h1, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
        s2 += p2
        s3 += p3
        fd = abs(p2 - 2.0 * f0 - _GM_RATIO * (p3 - 2.0 * f0))
        if ax == 0:
            d0 = fd
        else:
            d1 = fd
    s4 = 0.0
    s5 = 0.0
    for g0 in (-1.0, 1.0):
        for g1 in (-1.0, 1.0):
            s4 += _f2(kind, c0 + g0 * _GM_L3 * h0, c1 + g1 * _GM_L3 * h1, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
            s5 += _f2(kind, c0 + g0 * _GM_L5 * h0, c1 + g1 * _GM_L5 * h1, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
    vol = 4.0 * h0 * h1
    i7 = vol * ((-3816.0 * f0 + 2940.0 * s2 + 1020.0 * s3 + 200.0 * s4) / 19683.0 + 6859.0 / 78732.0 * s5)
    i5 = vol * (-971.0 / 729.0 * f0 + 245.0 / 486.0 * s2 + 65.0 / 1458.0 * s3 + 25.0 / 729.0 * s4)
    return i7, abs(i7 - i5), 0 if d0 >= d1 else 1


@njit(cache=True, nogil=True)
def _heap_push(hp, nh, E, k):
    hp[nh] = k
    i = nh
    while i > 0:
        p = (i - 1) // 2
        if E[hp[p]] >= E[hp[i]]:
            break
        hp[p], hp[i] = hp[i], hp[p]
        i = p
    return nh + 1


@njit(cache=True, nogil=True)
def _heap_pop(hp, nh, E):
    top = hp[0]
    nh -= 1
    hp[0] = hp[nh]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        b = i
        if l < nh and E[hp[l]] > E[hp[b]]:
            b = l
        if r < nh and E[hp[r]] > E[hp[b]]:
            b = r
        if b == i:
            break
        hp[b], hp[i] = hp[i], hp[b]
        i = b
    return top, nh


@njit(cache=True, nogil=True)
def _j(k, lam0):
    # int_lam0^inf 2 lam^(k-5) dlam
    return 2.0 * lam0 ** (k - 4.0) / (4.0 - k)


@njit(cache=True, nogil=True)
def _reach_bound(kind, R, rh, ext, gmin, lam_min_pts, nvol):
    """Bound on the mass of a half-space region at vertical distance ``gmin``.

    The loop must stretch ``ext * lam >= gmin`` vertically and horizontally
    stay within ``R + lam rh`` of the axis.  ``nvol`` is N times the body
    volume (per length for a cylinder) for the point-count bound.
    """
    if ext <= 0.0:
        return 0.0
    l0 = gmin / ext
    if kind == KIND_SPHERE:
        b1 = np.pi * (R * R * (ext * _j(1, l0) - gmin * _j(0, l0))
                      + 2.0 * R * rh * (ext * _j(2, l0) - gmin * _j(1, l0))
                      + rh * rh * (ext * _j(3, l0) - gmin * _j(2, l0)))
    else:
        b1 = 2.0 * (R * (ext * _j(1, l0) - gmin * _j(0, l0))
                    + rh * (ext * _j(2, l0) - gmin * _j(1, l0)))
    lb = max(l0, lam_min_pts)
    b2 = nvol * 0.5 / lb**4
    return min(b1, b2)


@njit(cache=True, nogil=True)
def _side_bound(kind, R, rh, D, P, nvol):
    # centers beyond horizontal distance P (both sides for a cylinder)
    if D <= 0.0:
        return 0.0
    if P <= R:
        return np.inf
    if rh <= 0.0:
        return 0.0
    l3 = (P - R) / rh
    if kind == KIND_SPHERE:
        b1 = np.pi * D * ((R * R - P * P) * _j(1, l3) + 2.0 * R * rh * _j(2, l3) + rh * rh * _j(3, l3))
    else:
        b1 = 2.0 * D * ((R - P) * _j(1, l3) + rh * _j(2, l3))
    b2 = nvol * 0.5 / l3**4
    return min(b1, b2)


@njit(cache=True, nogil=True)
def tail_bounds(kind, a, R, up, dn, rh, N, P, T1, T2):
    """Upper bounds on the integral over ``t < T1``, ``t > T2`` and ``|rho| > P``."""
    if kind == KIND_SPHERE:
        nvol = N * 4.0 / 3.0 * np.pi * R**3
    else:
        nvol = N * np.pi * R * R
    D = up + dn
    # below the plate the loop has to climb to the body; the point bound
    # uses the same minimal scale
    g1 = a - T1 * a
    b_lo = _reach_bound(kind, R, rh, up, g1, g1 / up if up > 0 else np.inf, nvol)
    g2 = T2 * a
    b_hi = _reach_bound(kind, R, rh, dn, g2, g2 / dn if dn > 0 else np.inf, nvol)
    b_side = _side_bound(kind, R, rh, D, P, nvol)
    return b_lo, b_hi, b_side


@njit(cache=True, nogil=True)
def _add_cell(k, c0, c1, h0, h1, dep, C0, C1, H0, H1, V, E, AX, DP, kind, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i):
    v, e, ax = _gm_cell(kind, c0, c1, h0, h1, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
    C0[k] = c0
    C1[k] = c1
    H0[k] = h0
    H1[k] = h1
    V[k] = v
    E[k] = e
    AX[k] = ax
    DP[k] = dep
    return v, e


@njit(cache=True, nogil=True)
def _neumaier(x, n):
    s = 0.0
    c = 0.0
    for i in range(n):
        v = x[i]
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c


@njit(cache=True, nogil=True)
def integrate_body(kind, Y, zmin, zmax, rh, cen, rad, off, a, R, cfg, ws_f, ws_i):
    """Spatial integral of the support mass for sphere or cylinder + plate.

    Returns ``(value, error estimate, evaluations, tail bound, flags)``.
    The sphere result includes the ``2 pi rho`` azimuthal weight; the
    cylinder result is per unit axis length.
    """
    m = cfg[C_MASS]
    qtol = cfg[C_QTOL]
    ttol = cfg[C_TRUNC]
    eps = cfg[C_LAMEPS]
    max_depth = int(cfg[C_DEPTH])
    max_evals = int(cfg[C_EVALS])
    N = Y.shape[0]
    up = zmax
    dn = -zmin
    if up + dn <= 0.0:
        return 0.0, 0.0, 0, 0.0, 0

    cap = max_evals // 17 + 4096
    C0 = np.empty(cap)
    C1 = np.empty(cap)
    H0 = np.empty(cap)
    H1 = np.empty(cap)
    V = np.empty(cap)
    E = np.empty(cap)
    AX = np.empty(cap, np.int64)
    DP = np.empty(cap, np.int64)
    hp = np.empty(cap, np.int64)

    # coarse grid; rb holds the horizontal breaks, tb the t breaks
    s = max(np.sqrt(2.0 * a * R), a)
    rb = np.empty(512)
    tb = np.empty(512)
    nrb = 0
    if kind == KIND_SPHERE:
        base = np.array([0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0])
        for v in base:
            rb[nrb] = v * s
            nrb += 1
    else:
        base = np.array([-4.0, -2.0, -1.0, -0.5, -0.25, -0.125, 0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0])
        for v in base:
            rb[nrb] = v * s
            nrb += 1
    # the gap has a kink where rho reaches R
    for sgn in (1.0, -1.0):
        if kind == KIND_SPHERE and sgn < 0:
            continue
        x = sgn * R
        if abs(x) < abs(rb[nrb - 1]) and abs(x) > 0.0:
            p = 0
            while rb[p] < x:
                p += 1
            if abs(rb[p] - x) > 1e-9 * s:
                for q in range(nrb, p, -1):
                    rb[q] = rb[q - 1]
                rb[p] = x
                nrb += 1
    tbase = np.array([-4.0, -1.0, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0])
    ntb = tbase.shape[0]
    for q in range(ntb):
        tb[q] = tbase[q]

    n = 0
    nh = 0
    evals = 0
    tv = 0.0
    te = 0.0
    for i in range(nrb - 1):
        for jt in range(ntb - 1):
            v, e = _add_cell(n, 0.5 * (rb[i] + rb[i + 1]), 0.5 * (tb[jt] + tb[jt + 1]),
                             0.5 * (rb[i + 1] - rb[i]), 0.5 * (tb[jt + 1] - tb[jt]), 0,
                             C0, C1, H0, H1, V, E, AX, DP, kind, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
            nh = _heap_push(hp, nh, E, n)
            n += 1
            tv += v
            te += e
    evals += 17 * n
    flags = 0
    tail = 0.0
    grows = 0
    while True:
        converged = te <= qtol * abs(tv)
        if converged or nh == 0 or evals >= max_evals or n + 2 >= cap:
            # certify the truncation, growing the box if needed
            P = abs(rb[nrb - 1])
            b_lo, b_hi, b_side = tail_bounds(kind, a, R, up, dn, rh, N, P, tb[0], tb[ntb - 1])
            tail = b_lo + b_hi + b_side
            if tail <= ttol * abs(tv) and tv > 0.0:
                if not converged:
                    flags |= FLAG_QTOL
                break
            if grows >= 100 or n + 64 + 2 * nrb + 2 * ntb >= cap or evals >= max_evals:
                flags |= FLAG_TRUNC
                if not converged:
                    flags |= FLAG_QTOL
                break
            share = ttol * abs(tv) / 3.0
            grown = False
            if b_lo > share or tv <= 0.0:
                lo_new = 2.0 * tb[0]
                for i in range(nrb - 1):
                    v, e = _add_cell(n, 0.5 * (rb[i] + rb[i + 1]), 0.5 * (lo_new + tb[0]),
                                     0.5 * (rb[i + 1] - rb[i]), 0.5 * (tb[0] - lo_new), 0,
                                     C0, C1, H0, H1, V, E, AX, DP, kind, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
                    nh = _heap_push(hp, nh, E, n)
                    n += 1
                    tv += v
                    te += e
                    evals += 17
                for q in range(ntb, 0, -1):
                    tb[q] = tb[q - 1]
                tb[0] = lo_new
                ntb += 1
                grown = True
            if b_hi > share or tv <= 0.0:
                hi_new = 2.0 * tb[ntb - 1]
                for i in range(nrb - 1):
                    v, e = _add_cell(n, 0.5 * (rb[i] + rb[i + 1]), 0.5 * (hi_new + tb[ntb - 1]),
                                     0.5 * (rb[i + 1] - rb[i]), 0.5 * (hi_new - tb[ntb - 1]), 0,
                                     C0, C1, H0, H1, V, E, AX, DP, kind, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
                    nh = _heap_push(hp, nh, E, n)
                    n += 1
                    tv += v
                    te += e
                    evals += 17
                tb[ntb] = hi_new
                ntb += 1
                grown = True
            if b_side > share or tv <= 0.0 or not grown:
                P_new = 2.0 * P
                for jt in range(ntb - 1):
                    c1 = 0.5 * (tb[jt] + tb[jt + 1])
                    h1 = 0.5 * (tb[jt + 1] - tb[jt])
                    v, e = _add_cell(n, 0.5 * (P + P_new), c1, 0.5 * (P_new - P), h1, 0,
                                     C0, C1, H0, H1, V, E, AX, DP, kind, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
                    nh = _heap_push(hp, nh, E, n)
                    n += 1
                    tv += v
                    te += e
                    evals += 17
                    if kind == KIND_CYLINDER:
                        v, e = _add_cell(n, -0.5 * (P + P_new), c1, 0.5 * (P_new - P), h1, 0,
                                         C0, C1, H0, H1, V, E, AX, DP, kind, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
                        nh = _heap_push(hp, nh, E, n)
                        n += 1
                        tv += v
                        te += e
                        evals += 17
                rb[nrb] = P_new
                nrb += 1
                if kind == KIND_CYLINDER:
                    for q in range(nrb, 0, -1):
                        rb[q] = rb[q - 1]
                    rb[0] = -P_new
                    nrb += 1
            grows += 1
            continue
        w, nh = _heap_pop(hp, nh, E)
        c0 = C0[w]
        c1 = C1[w]
        h0 = H0[w]
        h1 = H1[w]
        dep = DP[w] + 1
        ax = AX[w]
        tv -= V[w]
        te -= E[w]
        # the first child overwrites slot w, so nothing of w is read below
        for sg in (-1.0, 1.0):
            if ax == 0:
                nc0 = c0 + sg * 0.5 * h0
                nh0 = 0.5 * h0
                nc1 = c1
                nh1 = h1
            else:
                nc0 = c0
                nh0 = h0
                nc1 = c1 + sg * 0.5 * h1
                nh1 = 0.5 * h1
            k = w if sg < 0 else n
            v, e = _add_cell(k, nc0, nc1, nh0, nh1, dep, C0, C1, H0, H1, V, E, AX, DP,
                             kind, Y, zmin, zmax, cen, rad, off, a, R, m, eps, ws_f, ws_i)
            tv += v
            te += e
            if dep < max_depth:
                nh = _heap_push(hp, nh, E, k)
        n += 1
        evals += 34
    value = _neumaier(V, n)
    err = _neumaier(E, n)
    if not np.isfinite(value):
        flags |= FLAG_DIVERGENT
    return value, err, evals, tail, flags


# 15-point Gauss-Kronrod nodes and weights with the embedded 7-point Gauss rule
_XGK = np.array([0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                 0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                 0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                 0.207784955007898467600689403773245, 0.000000000000000000000000000000000])
_WGK = np.array([0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                 0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                 0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                 0.204432940075298892414161999234649, 0.209482141084727828012999174891714])
_WG = np.array([0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                0.381830050505118944950369775488975, 0.417959183673469387755102040816327])


@njit(cache=True, nogil=True)
def _slab_f(z, a, up, dn, m):
    # smallest scale at which the loop at height z reaches both planes
    lam = 0.0
    for z0 in (0.0, a):
        d = z - z0
        if d > 0.0:
            if dn <= 0.0:
                return 0.0
            l = d / dn
        elif d < 0.0:
            if up <= 0.0:
                return 0.0
            l = -d / up
        else:
            l = 0.0
        if l > lam:
            lam = l
    return tail_mass(lam, m)


@njit(cache=True, nogil=True)
def _gk15(lo, hi, a, up, dn, m):
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    fc = _slab_f(c, a, up, dn, m)
    rk = fc * _WGK[7]
    rg = fc * _WG[3]
    for j in range(7):
        x = h * _XGK[j]
        f = _slab_f(c - x, a, up, dn, m) + _slab_f(c + x, a, up, dn, m)
        rk += _WGK[j] * f
        if j % 2 == 1:
            rg += _WG[j // 2] * f
    return rk * h, abs((rk - rg) * h)


@njit(cache=True, nogil=True)
def integrate_slab(a, zmin, zmax, cfg):
    """z-integral of the support mass between two planes, per unit area."""
    m = cfg[C_MASS]
    qtol = cfg[C_QTOL]
    ttol = cfg[C_TRUNC]
    max_evals = int(cfg[C_EVALS])
    up = zmax
    dn = -zmin
    if up <= 0.0 or dn <= 0.0:
        return 0.0, 0.0, 0, 0.0, 0
    cap = max_evals // 15 + 512
    LO = np.empty(cap)
    HI = np.empty(cap)
    V = np.empty(cap)
    E = np.empty(cap)
    # kink where both planes are reached at the same scale
    zs = a * dn / (up + dn)
    br = np.array([-a, 0.0, 0.5 * zs, zs, 0.5 * (zs + a), a, 2.0 * a])
    n = 0
    tv = 0.0
    te = 0.0
    for i in range(br.shape[0] - 1):
        v, e = _gk15(br[i], br[i + 1], a, up, dn, m)
        LO[n] = br[i]
        HI[n] = br[i + 1]
        V[n] = v
        E[n] = e
        tv += v
        te += e
        n += 1
    z1 = br[0]
    z2 = br[br.shape[0] - 1]
    flags = 0
    tail = 0.0
    while True:
        # the massless tails are exact and bound the massive ones
        t_lo = up**4 / (6.0 * (a - z1) ** 3)
        t_hi = dn**4 / (6.0 * z2**3)
        # without mass the tails are added back exactly
        tail = t_lo + t_hi if m > 0.0 else 0.0
        if te <= qtol * abs(tv) and tail <= ttol * abs(tv):
            break
        if 15 * n >= max_evals or n + 4 >= cap:
            if te > qtol * abs(tv):
                flags |= FLAG_QTOL
            if tail > ttol * abs(tv):
                flags |= FLAG_TRUNC
            break
        if tail > ttol * abs(tv):
            if t_lo > 0.5 * ttol * abs(tv):
                v, e = _gk15(2.0 * z1 - a, z1, a, up, dn, m)
                LO[n] = 2.0 * z1 - a
                HI[n] = z1
                V[n] = v
                E[n] = e
                tv += v
                te += e
                n += 1
                z1 = 2.0 * z1 - a
            if t_hi > 0.5 * ttol * abs(tv):
                v, e = _gk15(z2, 2.0 * z2, a, up, dn, m)
                LO[n] = z2
                HI[n] = 2.0 * z2
                V[n] = v
                E[n] = e
                tv += v
                te += e
                n += 1
                z2 = 2.0 * z2
            continue
        w = 0
        for k in range(1, n):
            if E[k] > E[w]:
                w = k
        lo = LO[w]
        hi = HI[w]
        mid = 0.5 * (lo + hi)
        tv -= V[w]
        te -= E[w]
        v, e = _gk15(lo, mid, a, up, dn, m)
        HI[w] = mid
        V[w] = v
        E[w] = e
        tv += v
        te += e
        v, e = _gk15(mid, hi, a, up, dn, m)
        LO[n] = mid
        HI[n] = hi
        V[n] = v
        E[n] = e
        tv += v
        te += e
        n += 1
    if m == 0.0:
        V[n] = up**4 / (6.0 * (a - z1) ** 3) + dn**4 / (6.0 * z2**3)
        return _neumaier(V, n + 1), _neumaier(E, n), 15 * n, 0.0, flags
    return _neumaier(V, n), _neumaier(E, n), 15 * n, tail, flags


@njit(cache=True, nogil=True)
def make_workspace(N, nlev):
    ns = 2 * TREE_ARITY * (nlev + 2) + 16
    w = max(ns, N + 2)
    ws_f = np.empty((6, w))
    ws_i = np.empty((3, w), np.int64)
    return ws_f, ws_i


@njit(cache=True, nogil=True)
def loop_extent(Y):
    zmin = Y[0, 2]
    zmax = Y[0, 2]
    rs = 0.0
    rc = 0.0
    for i in range(Y.shape[0]):
        z = Y[i, 2]
        if z < zmin:
            zmin = z
        if z > zmax:
            zmax = z
        q = Y[i, 0] * Y[i, 0] + Y[i, 1] * Y[i, 1]
        if q > rs:
            rs = q
        q = abs(Y[i, 0])
        if q > rc:
            rc = q
    return zmin, zmax, np.sqrt(rs), rc


@njit(cache=True, nogil=True)
def _flat(Y):
    Yc = Y.copy()
    for i in range(Yc.shape[0]):
        Yc[i, 1] = 0.0
    return Yc


@njit(cache=True, nogil=True)
def loop_integrals(Y, kinds, geo, cfg, out, flags):
    """All geometries for one loop.

    ``geo[g] = (a, R)``; ``out[g] = (value, error, evaluations, tail)``.
    """
    zmin, zmax, rs, rc = loop_extent(Y)
    need_s = False
    need_c = False
    for g in range(kinds.shape[0]):
        if kinds[g] == KIND_SPHERE:
            need_s = True
        elif kinds[g] == KIND_CYLINDER:
            need_c = True
    N = Y.shape[0]
    cen_s, rad_s, off_s = build_tree(Y[:1], TREE_ARITY)
    cen_c, rad_c, off_c = cen_s, rad_s, off_s
    Yc = Y
    if need_s:
        cen_s, rad_s, off_s = build_tree(Y, TREE_ARITY)
    if need_c:
        Yc = _flat(Y)
        cen_c, rad_c, off_c = build_tree(Yc, TREE_ARITY)
    ws_f, ws_i = make_workspace(N, max(off_s.shape[0], off_c.shape[0]))
    for g in range(kinds.shape[0]):
        a = geo[g, 0]
        R = geo[g, 1]
        if kinds[g] == KIND_SLAB:
            v, e, ne, tl, fl = integrate_slab(a, zmin, zmax, cfg)
        elif kinds[g] == KIND_SPHERE:
            v, e, ne, tl, fl = integrate_body(KIND_SPHERE, Y, zmin, zmax, rs, cen_s, rad_s, off_s, a, R, cfg, ws_f, ws_i)
        else:
            v, e, ne, tl, fl = integrate_body(KIND_CYLINDER, Yc, zmin, zmax, rc, cen_c, rad_c, off_c, a, R, cfg, ws_f, ws_i)
        out[g, 0] = v
        out[g, 1] = e
        out[g, 2] = ne
        out[g, 3] = tl
        flags[g] = fl


@njit(cache=True, nogil=True)
def point_values(Y, kind, a, R, m, eps, X, Z, out):
    """Support mass at centers ``(X[k], 0, Z[k])``; added into ``out``."""
    zmin, zmax, rs, rc = loop_extent(Y)
    if kind == KIND_SLAB:
        for k in range(X.shape[0]):
            out[k] += _slab_f(Z[k], a, zmax, -zmin, m)
        return
    Yk = Y if kind == KIND_SPHERE else _flat(Y)
    cen, rad, off = build_tree(Yk, TREE_ARITY)
    ws_f, ws_i = make_workspace(Y.shape[0], off.shape[0])
    for k in range(X.shape[0]):
        out[k] += support_mass(Yk, zmin, zmax, cen, rad, off, X[k], Z[k], a + R, R, m, eps,
                               ws_f[0], ws_f[1], ws_i[0], ws_i[1], ws_f[2], ws_f[3], ws_f[4], ws_f[5], ws_i[2])
