"""Compiled per-path loops for the transport SDEs.

Matrices are tiny (``D <= 2n+1``), so everything is written as explicit
loops over scratch buffers allocated once per call.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _mm3(a, b, out):
    for i in range(3):
        a0 = a[i, 0]
        a1 = a[i, 1]
        a2 = a[i, 2]
        out[i, 0] = a0 * b[0, 0] + a1 * b[1, 0] + a2 * b[2, 0]
        out[i, 1] = a0 * b[0, 1] + a1 * b[1, 1] + a2 * b[2, 1]
        out[i, 2] = a0 * b[0, 2] + a1 * b[1, 2] + a2 * b[2, 2]


@njit(cache=True, inline="always")
def _matmul(a, b, out):
    n = a.shape[0]
    if n == 3:
        # fully unrolled: the H^1 hot path
        _mm3(a, b, out)
        return
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += a[i, k] * b[k, j]
            out[i, j] = s


@njit(cache=True, inline="always")
def _inv3(m, out):
    c00 = m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1]
    c01 = m[1, 2] * m[2, 0] - m[1, 0] * m[2, 2]
    c02 = m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]
    det = m[0, 0] * c00 + m[0, 1] * c01 + m[0, 2] * c02
    if det == 0.0:
        return False
    r = 1.0 / det
    out[0, 0] = c00 * r
    out[1, 0] = c01 * r
    out[2, 0] = c02 * r
    out[0, 1] = (m[0, 2] * m[2, 1] - m[0, 1] * m[2, 2]) * r
    out[1, 1] = (m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]) * r
    out[2, 1] = (m[0, 1] * m[2, 0] - m[0, 0] * m[2, 1]) * r
    out[0, 2] = (m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]) * r
    out[1, 2] = (m[0, 2] * m[1, 0] - m[0, 0] * m[1, 2]) * r
    out[2, 2] = (m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) * r
    return True


@njit(cache=True)
def _inv(a, out, work):
    """Gauss-Jordan inverse with partial pivoting; returns False if singular."""
    n = a.shape[0]
    if n == 3:
        return _inv3(a, out)
    for i in range(n):
        for j in range(n):
            work[i, j] = a[i, j]
            out[i, j] = 1.0 if i == j else 0.0
    for c in range(n):
        p = c
        best = abs(work[c, c])
        for r in range(c + 1, n):
            if abs(work[r, c]) > best:
                best = abs(work[r, c])
                p = r
        if best == 0.0:
            return False
        if p != c:
            for j in range(n):
                t = work[c, j]
                work[c, j] = work[p, j]
                work[p, j] = t
                t = out[c, j]
                out[c, j] = out[p, j]
                out[p, j] = t
        d = 1.0 / work[c, c]
        for j in range(n):
            work[c, j] *= d
            out[c, j] *= d
        for r in range(n):
            if r != c:
                f = work[r, c]
                if f != 0.0:
                    for j in range(n):
                        work[r, j] -= f * work[c, j]
                        out[r, j] -= f * out[c, j]
    return True


@njit(cache=True)
def _sym3_extreme(s):
    q = (s[0, 0] + s[1, 1] + s[2, 2]) / 3.0
    p1 = s[0, 1] * s[0, 1] + s[0, 2] * s[0, 2] + s[1, 2] * s[1, 2]
    b00 = s[0, 0] - q
    b11 = s[1, 1] - q
    b22 = s[2, 2] - q
    p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * p1
    if p2 <= 1e-300:
        return q, q
    p = np.sqrt(p2 / 6.0)
    det = (b00 * (b11 * b22 - s[1, 2] * s[1, 2])
           - s[0, 1] * (s[0, 1] * b22 - s[1, 2] * s[0, 2])
           + s[0, 2] * (s[0, 1] * s[1, 2] - b11 * s[0, 2]))
    r = det / (2.0 * p * p * p)
    if r <= -1.0:
        phi = np.pi / 3.0
    elif r >= 1.0:
        phi = 0.0
    else:
        phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return lo, hi


@njit(cache=True)
def _sym_extreme_eig(s, work):
    """Min and max eigenvalue of a small symmetric matrix.

    Closed-form trigonometric solution for 3x3, cyclic Jacobi otherwise.
    """
    n = s.shape[0]
    if n == 3:
        return _sym3_extreme(s)
    for i in range(n):
        for j in range(n):
            work[i, j] = s[i, j]
    for _sweep in range(50):
        off = 0.0
        diag = 0.0
        for i in range(n):
            diag += work[i, i] * work[i, i]
            for j in range(i + 1, n):
                off += work[i, j] * work[i, j]
        if off <= 1e-30 * (diag + 1e-300):
            break
        for p in range(n):
            for q in range(p + 1, n):
                apq = work[p, q]
                if apq == 0.0:
                    continue
                theta = (work[q, q] - work[p, p]) / (2.0 * apq)
                sgn = 1.0 if theta >= 0.0 else -1.0
                t = sgn / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                for k in range(n):
                    akp = work[k, p]
                    akq = work[k, q]
                    work[k, p] = c * akp - sn * akq
                    work[k, q] = sn * akp + c * akq
                for k in range(n):
                    apk = work[p, k]
                    aqk = work[q, k]
                    work[p, k] = c * apk - sn * aqk
                    work[q, k] = sn * apk + c * aqk
    lo = work[0, 0]
    hi = work[0, 0]
    for i in range(1, n):
        if work[i, i] < lo:
            lo = work[i, i]
        if work[i, i] > hi:
            hi = work[i, i]
    return lo, hi


@njit(cache=True)
def transport_kernel(dB, dt, gens, C, gdiag, rate, rec_idx, step_win, n_win, gdot,
                     do_q, do_g, do_norm, do_direct):
    """Integrate Theta, M (and optionally tau directly) along each path.

    Theta: Heun step ``Theta <- Theta (I - A + A^2/2)`` with ``A = sum_i dB_i gens[i]``.
    M: midpoint ODE step for ``dM/dt = -1/2 M Theta_mid C Theta_mid^{-1}``.
    tau (direct): Heun step for ``dtau = tau(-A o dB - C dt / 2)``.

    Accumulators over window ``w = step_win[k]`` (left-point rule):
      qint[w] += dt * (tau_k^{-1})^T G tau_k^{-1}
      gint[w] += dt * (tau_k^{-1})^T gdot_k            (gdot padded with zeros)
    Diagnostics per path: max_t ||tau_t||_eps / exp(rate t / 2), and
    max_t ||Theta^T G Theta - G||_2.
    """
    P = dB.shape[0]
    N = dB.shape[1]
    dh = dB.shape[2]
    D = C.shape[0]
    R = rec_idx.shape[0]

    theta_rec = np.empty((P, R, D, D))
    m_rec = np.empty((P, R, D, D))
    taud_rec = np.empty((P, R if do_direct else 0, D, D))
    qint = np.zeros((P, n_win if do_q else 0, D, D))
    gint = np.zeros((P, n_win if do_g else 0, D))
    ratio_max = np.zeros(P)
    iso_max = np.zeros(P)
    ok = np.ones(P, dtype=np.bool_)

    th = np.empty((D, D))
    th_new = np.empty((D, D))
    th_mid = np.empty((D, D))
    th_mid_inv = np.empty((D, D))
    m = np.empty((D, D))
    td = np.empty((D, D))
    a = np.empty((D, D))
    a2 = np.empty((D, D))
    r = np.empty((D, D))
    s = np.empty((D, D))
    s2 = np.empty((D, D))
    t1 = np.empty((D, D))
    t2 = np.empty((D, D))
    tau = np.empty((D, D))
    tau_inv = np.empty((D, D))
    work = np.empty((D, D))
    sym = np.empty((D, D))
    sqg = np.sqrt(gdiag)

    for p in range(P):
        for i in range(D):
            for j in range(D):
                v = 1.0 if i == j else 0.0
                th[i, j] = v
                m[i, j] = v
                td[i, j] = v
        rr = 0
        rmax = 0.0
        imax = 0.0
        for k in range(N + 1):
            if rr < R and rec_idx[rr] == k:
                for i in range(D):
                    for j in range(D):
                        theta_rec[p, rr, i, j] = th[i, j]
                        m_rec[p, rr, i, j] = m[i, j]
                        if do_direct:
                            taud_rec[p, rr, i, j] = td[i, j]
                rr += 1
            need_tau = do_norm or ((do_q or do_g) and k < N and step_win[k] >= 0)
            if need_tau:
                _matmul(m, th, tau)
            if do_norm:
                # ||tau||_eps^2 = lambda_max(G^{-1/2} tau^T G tau G^{-1/2})
                for i in range(D):
                    for j in range(D):
                        acc = 0.0
                        for l in range(D):
                            acc += tau[l, i] * gdiag[l] * tau[l, j]
                        sym[i, j] = acc / (sqg[i] * sqg[j])
                lo, hi = _sym_extreme_eig(sym, work)
                ratio = np.sqrt(max(hi, 0.0)) / np.exp(0.5 * rate * k * dt)
                if ratio > rmax:
                    rmax = ratio
                for i in range(D):
                    for j in range(D):
                        acc = 0.0
                        for l in range(D):
                            acc += th[l, i] * gdiag[l] * th[l, j]
                        sym[i, j] = acc - (gdiag[i] if i == j else 0.0)
                lo, hi = _sym_extreme_eig(sym, work)
                dev = max(abs(lo), abs(hi))
                if dev > imax:
                    imax = dev
            if k == N:
                break
            w = step_win[k]
            if (do_q or do_g) and w >= 0:
                if not _inv(tau, tau_inv, work):
                    ok[p] = False
                if do_q:
                    for i in range(D):
                        for j in range(D):
                            acc = 0.0
                            for l in range(D):
                                acc += tau_inv[l, i] * gdiag[l] * tau_inv[l, j]
                            qint[p, w, i, j] += dt * acc
                if do_g:
                    for i in range(D):
                        acc = 0.0
                        for l in range(dh):
                            acc += tau_inv[l, i] * gdot[k, l]
                        gint[p, w, i] += dt * acc

            # A = sum_i dB_i gens[i]
            for i in range(D):
                for j in range(D):
                    acc = 0.0
                    for l in range(dh):
                        acc += dB[p, k, l] * gens[l, i, j]
                    a[i, j] = acc
            _matmul(a, a, a2)
            for i in range(D):
                for j in range(D):
                    r[i, j] = (1.0 if i == j else 0.0) - a[i, j] + 0.5 * a2[i, j]
            _matmul(th, r, th_new)
            for i in range(D):
                for j in range(D):
                    th_mid[i, j] = 0.5 * (th[i, j] + th_new[i, j])
            if not _inv(th_mid, th_mid_inv, work):
                ok[p] = False
            _matmul(th_mid, C, t1)
            _matmul(t1, th_mid_inv, s)
            for i in range(D):
                for j in range(D):
                    s[i, j] *= -0.5
            _matmul(s, s, s2)
            for i in range(D):
                for j in range(D):
                    r[i, j] = (1.0 if i == j else 0.0) + dt * s[i, j] + 0.5 * dt * dt * s2[i, j]
            _matmul(m, r, t2)
            for i in range(D):
                for j in range(D):
                    m[i, j] = t2[i, j]
                    th[i, j] = th_new[i, j]
            if do_direct:
                # Delta = -A - C dt / 2 ; td <- td (I + Delta + Delta^2 / 2)
                for i in range(D):
                    for j in range(D):
                        t1[i, j] = -a[i, j] - 0.5 * dt * C[i, j]
                _matmul(t1, t1, s2)
                for i in range(D):
                    for j in range(D):
                        r[i, j] = (1.0 if i == j else 0.0) + t1[i, j] + 0.5 * s2[i, j]
                _matmul(td, r, t2)
                for i in range(D):
                    for j in range(D):
                        td[i, j] = t2[i, j]
        ratio_max[p] = rmax
        iso_max[p] = imax
    return theta_rec, m_rec, taud_rec, qint, gint, ratio_max, iso_max, ok


# ---------------------------------------------------------------------------
# Heisenberg distances (horizontal radius r, vertical |z|)
# ---------------------------------------------------------------------------

TWO_PI = 2.0 * np.pi


@njit(cache=True, inline="always")
def _mu(phi):
    s = np.sin(0.5 * phi)
    return (phi - np.sin(phi)) / (8.0 * s * s)


@njit(cache=True)
def _mu_dphi(phi):
    s = np.sin(0.5 * phi)
    c = np.cos(0.5 * phi)
    num = phi - np.sin(phi)
    return ((1.0 - np.cos(phi)) * 8.0 * s * s - num * 8.0 * s * c) / (64.0 * s ** 4)


@njit(cache=True)
def solve_angle(target, lin):
    """Root ``phi`` in ``(0, 2 pi)`` of ``mu(phi) + lin * phi = target`` (``target > 0``, ``lin >= 0``).

    Safeguarded Newton on a shrinking bracket; the left side is increasing
    from 0 to infinity.
    """
    lo = 0.0
    hi = TWO_PI
    # start from the small-angle and near-circle asymptotics
    if target < 0.05:
        x = target / (1.0 / 12.0 + lin)
    else:
        x = TWO_PI - np.sqrt(np.pi / target)
    if not (lo < x < hi):
        x = 0.5 * (lo + hi)
    for _ in range(200):
        if x < 1e-4:
            # series: mu = phi/12 + phi^3/720 + O(phi^5)
            g = x / 12.0 + x ** 3 / 720.0 + lin * x - target
            dg = 1.0 / 12.0 + x * x / 240.0 + lin
        else:
            g = _mu(x) + lin * x - target
            dg = _mu_dphi(x) + lin
        if g > 0.0:
            hi = x
        else:
            lo = x
        step = g / dg
        xn = x - step
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-15 * max(1.0, x) or hi - lo < 1e-15:
            x = xn
            break
        x = xn
    return x


@njit(cache=True)
def cc_length(r, az):
    """``d_cc`` from the identity to a point with horizontal radius ``r`` and ``|z| = az``."""
    if az == 0.0:
        return r
    if r == 0.0:
        return 2.0 * np.sqrt(np.pi * az)
    phi = solve_angle(az / (r * r), 0.0)
    if phi < np.pi:
        if phi < 1e-8:
            return r
        return r * phi / (2.0 * np.sin(0.5 * phi))
    return phi * np.sqrt(2.0 * az / (phi - np.sin(phi)))


@njit(cache=True)
def eps_length(r, az, eps):
    """``d_eps`` from the identity for the canonical variation (closed-form geodesic family).

    The minimizing geodesic turns the horizontal projection by ``phi`` solving
    ``r^2 mu(phi) + eps phi = |z|``; its length is ``sqrt(L_h^2 + eps phi^2)``.
    """
    if az == 0.0:
        return r
    if r == 0.0:
        if az <= TWO_PI * eps:
            return az / np.sqrt(eps)
        return np.sqrt(4.0 * np.pi * az - 4.0 * np.pi * np.pi * eps)
    r2 = r * r
    phi = solve_angle(az / r2, eps / r2)
    if phi < 1e-8:
        lh = r
    elif phi < np.pi:
        lh = r * phi / (2.0 * np.sin(0.5 * phi))
    else:
        area = az - eps * phi
        lh = phi * np.sqrt(2.0 * max(area, 0.0) / (phi - np.sin(phi)))
    return np.sqrt(lh * lh + eps * phi * phi)


@njit(cache=True)
def distance_many(r, az, eps):
    """Vectorized ``d_cc`` (``eps <= 0``) or ``d_eps``."""
    out = np.empty(r.shape[0])
    for k in range(r.shape[0]):
        out[k] = cc_length(r[k], az[k]) if eps <= 0.0 else eps_length(r[k], az[k], eps)
    return out


@njit(cache=True)
def sup_distance_paths(r, az, eps):
    """Per-path ``max_t d(X_t)`` for ``r, az`` of shape ``(P, N+1)``.

    A point is skipped when the explicit competitor length ``r + 2 sqrt(pi |z|)``
    (straight segment, then a circle enclosing area ``|z|``) cannot beat the
    running maximum; it bounds ``d_cc`` and hence ``d_eps <= d_cc``.  Points are
    visited from the end of the path, where the maximum usually sits.
    """
    P, N1 = r.shape
    out = np.empty(P)
    n_exact = 0
    for p in range(P):
        best = 0.0
        for k in range(N1 - 1, -1, -1):
            rr = r[p, k]
            zz = az[p, k]
            loop = 2.0 * np.sqrt(np.pi * zz)
            upper = rr + loop
            if upper <= best:
                continue
            d = cc_length(rr, zz) if eps <= 0.0 else eps_length(rr, zz, eps)
            n_exact += 1
            if d > best:
                best = d
        out[p] = best
    return out, n_exact


# ---------------------------------------------------------------------------
# Hamiltonian flow of g_eps on step-two groups
# ---------------------------------------------------------------------------


@njit(cache=True)
def _ham_rhs(y, omega, eps, n, m, out):
    # y = (q_h, q_v, lam_h, lam_v); u_i = lam_i + 1/2 sum_{a,j} lam_a q_j omega[a, j, i]
    D = n + m
    for i in range(n):
        u = y[D + i]
        for a in range(m):
            la = y[D + n + a]
            for j in range(n):
                u += 0.5 * la * y[j] * omega[a, j, i]
        out[i] = u
    for a in range(m):
        acc = eps * y[D + n + a]
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += y[j] * omega[a, j, i]
            acc += 0.5 * out[i] * s
        out[n + a] = acc
    for j in range(n):
        acc = 0.0
        for i in range(n):
            s = 0.0
            for a in range(m):
                s += y[D + n + a] * omega[a, j, i]
            acc += out[i] * s
        out[D + j] = -0.5 * acc
    for a in range(m):
        out[D + n + a] = 0.0


@njit(cache=True)
def hamiltonian_shoot(lam0, omega, eps, n_steps):
    """Endpoints ``q(1)`` and energies ``2H`` of the flow from the identity, one row per covector."""
    B, D = lam0.shape
    m = omega.shape[0]
    n = D - m
    ends = np.empty((B, D))
    energy = np.empty(B)
    y = np.empty(2 * D)
    k1 = np.empty(2 * D)
    k2 = np.empty(2 * D)
    k3 = np.empty(2 * D)
    k4 = np.empty(2 * D)
    tmp = np.empty(2 * D)
    h = 1.0 / n_steps
    for b in range(B):
        for i in range(D):
            y[i] = 0.0
            y[D + i] = lam0[b, i]
        e = 0.0
        for i in range(n):
            e += lam0[b, i] * lam0[b, i]
        for a in range(m):
            e += eps * lam0[b, n + a] * lam0[b, n + a]
        energy[b] = e
        for _ in range(n_steps):
            _ham_rhs(y, omega, eps, n, m, k1)
            for i in range(2 * D):
                tmp[i] = y[i] + 0.5 * h * k1[i]
            _ham_rhs(tmp, omega, eps, n, m, k2)
            for i in range(2 * D):
                tmp[i] = y[i] + 0.5 * h * k2[i]
            _ham_rhs(tmp, omega, eps, n, m, k3)
            for i in range(2 * D):
                tmp[i] = y[i] + h * k3[i]
            _ham_rhs(tmp, omega, eps, n, m, k4)
            for i in range(2 * D):
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(D):
            ends[b, i] = y[i]
    return ends, energy
