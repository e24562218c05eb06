"""Hot numerical kernels, each in a numba and a pure-numpy flavour.

Public functions dispatch on :func:`epde._accel.backend`.  The two flavours
compute the same quantities with the same operation order where it matters
for symmetry (e.g. ``(left + right) - 2*center`` in the Laplacians), so they
agree to rounding.
"""
import numpy as np

from ._accel import backend, njit

# ---------------------------------------------------------------------------
# pairwise L1 distances


@njit
def _pairwise_l1_nb(X):
    n, m = X.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for k in range(m):
                s += abs(X[i, k] - X[j, k])
            out[i, j] = s
            out[j, i] = s
    return out


def _pairwise_l1_np(X):
    n = X.shape[0]
    out = np.zeros((n, n))
    for i in range(n - 1):
        d = np.abs(X[i + 1:] - X[i]).sum(axis=1)
        out[i, i + 1:] = d
        out[i + 1:, i] = d
    return out


def pairwise_l1(X):
    """All-pairs L1 distances between the rows of ``X`` (N x M)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("pairwise_l1 expects a 2-D array")
    if backend() == "numba":
        return _pairwise_l1_nb(X)
    return _pairwise_l1_np(X)


# ---------------------------------------------------------------------------
# one level of bottom-up questionnaire clustering
#
# Clusters of the current level are indexed 0..m-1 in order of their smallest
# channel.  ``dsum[i, j]`` is the sum of channel distances between clusters i
# and j, ``sizes`` their channel counts.  Each cluster is attempted once; the
# globally closest (fresh cluster, target) pair is attempted first, where a
# target is another fresh cluster or a super-cluster formed on this level.
# Ties prefer fresh-cluster targets, then the lowest cluster index, then the
# lowest target index.  Returns the next-level label of every cluster.


@njit
def _cluster_level_nb(dsum, sizes, thr):
    m = dsum.shape[0]
    state = np.zeros(m, dtype=np.int64)  # 0 fresh, 1 alone, 2 joined
    group = -np.ones(m, dtype=np.int64)
    ssum = np.zeros((m, m))
    ssize = np.zeros(m)
    ns = 0
    n_fresh = m
    while n_fresh > 0:
        best = np.inf
        btype = 2
        bi = -1
        bt = -1
        for i in range(m):
            if state[i] != 0:
                continue
            for j in range(m):
                if j == i or state[j] != 0:
                    continue
                d = dsum[i, j] / (sizes[i] * sizes[j])
                if d < best or (d == best and btype > 0):
                    best = d
                    btype = 0
                    bi = i
                    bt = j
            for s in range(ns):
                d = ssum[i, s] / (sizes[i] * ssize[s])
                if d < best:
                    best = d
                    btype = 1
                    bi = i
                    bt = s
        if bi < 0:
            # lone fresh cluster with nothing to join
            for i in range(m):
                if state[i] == 0:
                    state[i] = 1
            break
        if best <= thr:
            if btype == 0:
                s = ns
                ns += 1
                for r in range(m):
                    ssum[r, s] = dsum[r, bi] + dsum[r, bt]
                ssize[s] = sizes[bi] + sizes[bt]
                group[bi] = s
                group[bt] = s
                state[bi] = 2
                state[bt] = 2
                n_fresh -= 2
            else:
                for r in range(m):
                    ssum[r, bt] += dsum[r, bi]
                ssize[bt] += sizes[bi]
                group[bi] = bt
                state[bi] = 2
                n_fresh -= 1
        else:
            state[bi] = 1
            n_fresh -= 1
    return _relabel_nb(group, state, ns)


@njit
def _relabel_nb(group, state, ns):
    m = group.shape[0]
    labels = -np.ones(m, dtype=np.int64)
    super_label = -np.ones(max(ns, 1), dtype=np.int64)
    nxt = 0
    for i in range(m):
        if state[i] == 2:
            s = group[i]
            if super_label[s] < 0:
                super_label[s] = nxt
                nxt += 1
            labels[i] = super_label[s]
        else:
            labels[i] = nxt
            nxt += 1
    return labels


def _cluster_level_np(dsum, sizes, thr):
    m = dsum.shape[0]
    state = np.zeros(m, dtype=np.int64)
    group = -np.ones(m, dtype=np.int64)
    ssum = np.zeros((m, m))
    ssize = np.zeros(m)
    ns = 0
    avg = dsum / np.outer(sizes, sizes)
    np.fill_diagonal(avg, np.inf)
    while True:
        fresh = state == 0
        if not fresh.any():
            break
        idx = np.flatnonzero(fresh)
        pair = avg[np.ix_(idx, idx)]
        d_ind = np.inf
        if idx.size > 1:
            flat = int(np.argmin(pair))
            d_ind = pair.flat[flat]
            pi, pj = divmod(flat, idx.size)
        d_sup = np.inf
        if ns:
            sup = ssum[idx, :ns] / (sizes[idx, None] * ssize[None, :ns])
            flat_s = int(np.argmin(sup))
            d_sup = sup.flat[flat_s]
            si, ss = divmod(flat_s, ns)
        if not np.isfinite(d_ind) and not np.isfinite(d_sup):
            state[fresh] = 1
            break
        if d_ind <= d_sup:
            bi, bt, btype, best = idx[pi], idx[pj], 0, d_ind
        else:
            bi, bt, btype, best = idx[si], ss, 1, d_sup
        if best <= thr:
            if btype == 0:
                ssum[:, ns] = dsum[:, bi] + dsum[:, bt]
                ssize[ns] = sizes[bi] + sizes[bt]
                group[bi] = group[bt] = ns
                state[bi] = state[bt] = 2
                ns += 1
            else:
                ssum[:, bt] += dsum[:, bi]
                ssize[bt] += sizes[bi]
                group[bi] = bt
                state[bi] = 2
        else:
            state[bi] = 1
    labels = -np.ones(m, dtype=np.int64)
    super_label = {}
    nxt = 0
    for i in range(m):
        if state[i] == 2:
            if group[i] not in super_label:
                super_label[group[i]] = nxt
                nxt += 1
            labels[i] = super_label[group[i]]
        else:
            labels[i] = nxt
            nxt += 1
    return labels


def cluster_level(dsum, sizes, thr):
    dsum = np.ascontiguousarray(dsum, dtype=np.float64)
    sizes = np.ascontiguousarray(sizes, dtype=np.float64)
    if backend() == "numba":
        return _cluster_level_nb(dsum, sizes, float(thr))
    return _cluster_level_np(dsum, sizes, float(thr))


# ---------------------------------------------------------------------------
# ring-of-cells signal ODE, forward Euler, many parameter samples at once


@njit
def _signal_nb(D, dec, ts, k, alpha, G, C0, dt, n_steps, rec_steps):
    n_p = D.shape[0]
    n = G.shape[0]
    n_rec = rec_steps.shape[0]
    out = np.zeros((n_p, n_rec, n))
    bad = -1
    C = np.empty(n)
    Cn = np.empty(n)
    for p in range(n_p):
        for i in range(n):
            C[i] = C0[p, i]
        r_idx = 0
        while r_idx < n_rec and rec_steps[r_idx] == 0:
            for i in range(n):
                out[p, r_idx, i] = C[i]
            r_idx += 1
        for step in range(n_steps):
            t = step * dt
            if t < ts[p]:
                r = k[p] * t * t
            else:
                r = k[p] * ts[p] * ts[p] * np.exp(-alpha[p] * (t - ts[p]))
            for i in range(n):
                left = C[i - 1] if i > 0 else C[n - 1]
                right = C[i + 1] if i < n - 1 else C[0]
                lap = (left + right) - 2.0 * C[i]
                Cn[i] = C[i] + dt * (D[p] * lap + r * G[i] - dec[p] * C[i])
            ok = True
            for i in range(n):
                v = Cn[i]
                if not (v >= -1e-12) or not np.isfinite(v):
                    ok = False
                C[i] = v
            if not ok:
                return out, p
            while r_idx < n_rec and rec_steps[r_idx] == step + 1:
                for i in range(n):
                    out[p, r_idx, i] = C[i]
                r_idx += 1
    return out, bad


def _signal_np(D, dec, ts, k, alpha, G, C0, dt, n_steps, rec_steps):
    n_p, n = C0.shape
    out = np.zeros((n_p, rec_steps.shape[0], n))
    C = C0.copy()
    rec = {int(s): [] for s in rec_steps}
    for j, s in enumerate(rec_steps):
        rec[int(s)].append(j)
    for j in rec.get(0, []):
        out[:, j] = C
    D = D[:, None]
    dec = dec[:, None]
    for step in range(n_steps):
        t = step * dt
        r = np.where(t < ts, k * t * t, k * ts * ts * np.exp(-alpha * (t - ts)))
        lap = (np.roll(C, 1, axis=1) + np.roll(C, -1, axis=1)) - 2.0 * C
        C = C + dt * (D * lap + r[:, None] * G[None, :] - dec * C)
        bad = ~(C >= -1e-12) | ~np.isfinite(C)
        if bad.any():
            return out, int(np.flatnonzero(bad.any(axis=1))[0])
        for j in rec.get(step + 1, []):
            out[:, j] = C
    return out, -1


def signal_ensemble(D, dec, ts, k, alpha, G, C0, dt, n_steps, rec_steps):
    """Integrate the ring ODE for every sample; returns (records, bad_index)."""
    args = (
        np.ascontiguousarray(D, dtype=np.float64),
        np.ascontiguousarray(dec, dtype=np.float64),
        np.ascontiguousarray(ts, dtype=np.float64),
        np.ascontiguousarray(k, dtype=np.float64),
        np.ascontiguousarray(alpha, dtype=np.float64),
        np.ascontiguousarray(G, dtype=np.float64),
        np.ascontiguousarray(C0, dtype=np.float64),
        float(dt),
        int(n_steps),
        np.ascontiguousarray(rec_steps, dtype=np.int64),
    )
    if backend() == "numba":
        out, bad = _signal_nb(*args)
    else:
        out, bad = _signal_np(*args)
    return out, int(bad)


# ---------------------------------------------------------------------------
# Chafee-Infante u_t = u - u^3 + nu u_xx, Dirichlet zero, forward Euler


@njit
def _chafee_nb(u0, nu, dx, dt, n_steps, every):
    n = u0.shape[0]
    n_rec = n_steps // every + 1
    out = np.zeros((n_rec, n))
    u = u0.copy()
    un = u0.copy()
    c = nu / (dx * dx)
    for i in range(n):
        out[0, i] = u[i]
    r = 1
    for step in range(1, n_steps + 1):
        for i in range(1, n - 1):
            lap = (u[i - 1] + u[i + 1]) - 2.0 * u[i]
            un[i] = u[i] + dt * (u[i] - u[i] * u[i] * u[i] + c * lap)
        un[0] = 0.0
        un[n - 1] = 0.0
        for i in range(n):
            if not (abs(un[i]) <= 10.0):
                return out, step
            u[i] = un[i]
        if step % every == 0:
            for i in range(n):
                out[r, i] = u[i]
            r += 1
    return out, -1


def _chafee_np(u0, nu, dx, dt, n_steps, every):
    n_rec = n_steps // every + 1
    out = np.zeros((n_rec, u0.shape[0]))
    u = u0.copy()
    out[0] = u
    c = nu / (dx * dx)
    r = 1
    for step in range(1, n_steps + 1):
        ui = u[1:-1]
        lap = (u[:-2] + u[2:]) - 2.0 * ui
        un = u.copy()
        un[1:-1] = ui + dt * (ui - ui * ui * ui + c * lap)
        un[0] = un[-1] = 0.0
        if not (np.abs(un) <= 10.0).all():
            return out, step
        u = un
        if step % every == 0:
            out[r] = u
            r += 1
    return out, -1


def chafee_infante(u0, nu, dx, dt, n_steps, every):
    u0 = np.ascontiguousarray(u0, dtype=np.float64)
    if backend() == "numba":
        out, bad = _chafee_nb(u0, float(nu), float(dx), float(dt), int(n_steps), int(every))
    else:
        out, bad = _chafee_np(u0, float(nu), float(dx), float(dt), int(n_steps), int(every))
    return out, int(bad)


# ---------------------------------------------------------------------------
# vertex-model energy and analytic gradient
#
# X is (2N, 2): rows 0..N-1 apical vertices a_i, rows N..2N-1 basal b_i.
# Cell i is the quadrilateral (b_i, a_i, a_{i+1}, b_{i+1}), counterclockwise.
# prm = [sigma_a0, sigma_b, sigma_l, B, A_c0, B_Y, A_Y0, eps, n_rep, R_c, P, G]


@njit
def _sigma_a_nb(theta, s0, P, G):
    if abs(theta) < np.pi / 4:
        e = np.exp(-theta * theta / (G * G))
        return s0 * (1.0 + P * e), s0 * P * e * (-2.0 * theta / (G * G))
    return s0, 0.0


@njit
def _vertex_nb(X, prm, want_grad):
    n = X.shape[0] // 2
    s0, sb, sl, B, Ac0, BY, AY0, eps, nrep, Rc, P, G = (
        prm[0], prm[1], prm[2], prm[3], prm[4], prm[5],
        prm[6], prm[7], prm[8], prm[9], prm[10], prm[11])
    g = np.zeros_like(X)
    E = 0.0
    for i in range(n):
        j = (i + 1) % n
        # apical edge, position-dependent tension
        ex = X[j, 0] - X[i, 0]
        ey = X[j, 1] - X[i, 1]
        la = np.sqrt(ex * ex + ey * ey)
        mx = 0.5 * (X[i, 0] + X[j, 0])
        my = 0.5 * (X[i, 1] + X[j, 1])
        th = np.arctan2(my, mx)
        sa, dsa = _sigma_a_nb(th, s0, P, G)
        E += sa * la
        if want_grad:
            ux = ex / la
            uy = ey / la
            g[i, 0] -= sa * ux
            g[i, 1] -= sa * uy
            g[j, 0] += sa * ux
            g[j, 1] += sa * uy
            if dsa != 0.0:
                r2 = mx * mx + my * my
                cx = la * dsa * (-my / r2) * 0.5
                cy = la * dsa * (mx / r2) * 0.5
                g[i, 0] += cx
                g[i, 1] += cy
                g[j, 0] += cx
                g[j, 1] += cy
        # basal edge
        bi = n + i
        bj = n + j
        ex = X[bj, 0] - X[bi, 0]
        ey = X[bj, 1] - X[bi, 1]
        lb = np.sqrt(ex * ex + ey * ey)
        E += sb * lb
        if want_grad:
            g[bi, 0] -= sb * ex / lb
            g[bi, 1] -= sb * ey / lb
            g[bj, 0] += sb * ex / lb
            g[bj, 1] += sb * ey / lb
        # lateral edge between cells i-1 and i
        ex = X[i, 0] - X[bi, 0]
        ey = X[i, 1] - X[bi, 1]
        ll = np.sqrt(ex * ex + ey * ey)
        E += sl * ll
        if want_grad:
            g[i, 0] += sl * ex / ll
            g[i, 1] += sl * ey / ll
            g[bi, 0] -= sl * ex / ll
            g[bi, 1] -= sl * ey / ll
        # cell area, shoelace over (b_i, a_i, a_j, b_j)
        v0, v1, v2, v3 = bi, i, j, bj
        A = 0.5 * ((X[v0, 0] * X[v1, 1] - X[v1, 0] * X[v0, 1])
                   + (X[v1, 0] * X[v2, 1] - X[v2, 0] * X[v1, 1])
                   + (X[v2, 0] * X[v3, 1] - X[v3, 0] * X[v2, 1])
                   + (X[v3, 0] * X[v0, 1] - X[v0, 0] * X[v3, 1]))
        dA = A - Ac0
        E += B * dA * dA
        if want_grad:
            c = 2.0 * B * dA * 0.5
            g[v0, 0] += c * (X[v1, 1] - X[v3, 1])
            g[v0, 1] += c * (X[v3, 0] - X[v1, 0])
            g[v1, 0] += c * (X[v2, 1] - X[v0, 1])
            g[v1, 1] += c * (X[v0, 0] - X[v2, 0])
            g[v2, 0] += c * (X[v3, 1] - X[v1, 1])
            g[v2, 1] += c * (X[v1, 0] - X[v3, 0])
            g[v3, 0] += c * (X[v0, 1] - X[v2, 1])
            g[v3, 1] += c * (X[v2, 0] - X[v0, 0])
    # yolk area enclosed by the basal ring
    AY = 0.0
    for i in range(n):
        bi = n + i
        bj = n + (i + 1) % n
        AY += X[bi, 0] * X[bj, 1] - X[bj, 0] * X[bi, 1]
    AY *= 0.5
    dY = AY - AY0
    E += BY * dY * dY
    if want_grad:
        c = 2.0 * BY * dY * 0.5
        for i in range(n):
            bi = n + i
            bn = n + (i + 1) % n
            bp = n + (i - 1) % n
            g[bi, 0] += c * (X[bn, 1] - X[bp, 1])
            g[bi, 1] += c * (X[bp, 0] - X[bn, 0])
    # confining membrane on apical vertices
    for i in range(n):
        R = np.sqrt(X[i, 0] * X[i, 0] + X[i, 1] * X[i, 1])
        gap = Rc - R
        if gap <= 0.0:
            return np.inf, g
        E += eps / gap ** nrep
        if want_grad:
            c = eps * nrep / gap ** (nrep + 1) / R
            g[i, 0] += c * X[i, 0]
            g[i, 1] += c * X[i, 1]
    return E, g


def _sigma_a_np(theta, s0, P, G):
    inside = np.abs(theta) < np.pi / 4
    e = np.exp(-theta * theta / (G * G))
    sa = np.where(inside, s0 * (1.0 + P * e), s0)
    dsa = np.where(inside, s0 * P * e * (-2.0 * theta / (G * G)), 0.0)
    return sa, dsa


def _shoelace_grad(P0, P1, P2, P3):
    """d(area)/d(vertex) for quads (P0..P3 each (n, 2)), counterclockwise."""
    def d(prev, nxt):
        return 0.5 * np.stack([nxt[:, 1] - prev[:, 1], prev[:, 0] - nxt[:, 0]], axis=1)
    return d(P3, P1), d(P0, P2), d(P1, P3), d(P2, P0)


def _cross(p, q):
    return p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]


def _vertex_np(X, prm, want_grad):
    n = X.shape[0] // 2
    s0, sb, sl, B, Ac0, BY, AY0, eps, nrep, Rc, P, G = prm
    a = X[:n]
    b = X[n:]
    a1 = np.roll(a, -1, axis=0)
    b1 = np.roll(b, -1, axis=0)
    g = np.zeros_like(X)
    ga = g[:n]
    gb = g[n:]

    ea = a1 - a
    la = np.hypot(ea[:, 0], ea[:, 1])
    mid = 0.5 * (a + a1)
    th = np.arctan2(mid[:, 1], mid[:, 0])
    sa, dsa = _sigma_a_np(th, s0, P, G)
    eb = b1 - b
    lb = np.hypot(eb[:, 0], eb[:, 1])
    el = a - b
    ll = np.hypot(el[:, 0], el[:, 1])
    A = 0.5 * (_cross(b, a) + _cross(a, a1) + _cross(a1, b1) + _cross(b1, b))
    AY = 0.5 * _cross(b, b1).sum()
    R = np.hypot(a[:, 0], a[:, 1])
    gap = Rc - R
    if (gap <= 0).any():
        return np.inf, g
    E = ((sa * la).sum() + sb * lb.sum() + sl * ll.sum()
         + B * ((A - Ac0) ** 2).sum() + BY * (AY - AY0) ** 2
         + (eps / gap ** nrep).sum())
    if not want_grad:
        return E, g

    ua = ea / la[:, None]
    fa = sa[:, None] * ua
    ga -= fa
    ga += np.roll(fa, 1, axis=0)
    r2 = (mid ** 2).sum(axis=1)
    corr = (0.5 * la * dsa / r2)[:, None] * np.stack([-mid[:, 1], mid[:, 0]], axis=1)
    ga += corr
    ga += np.roll(corr, 1, axis=0)

    fb = sb * eb / lb[:, None]
    gb -= fb
    gb += np.roll(fb, 1, axis=0)

    fl = sl * el / ll[:, None]
    ga += fl
    gb -= fl

    c = (2.0 * B * (A - Ac0))[:, None]
    d0, d1, d2, d3 = _shoelace_grad(b, a, a1, b1)
    gb += c * d0
    ga += c * d1
    ga += np.roll(c * d2, 1, axis=0)
    gb += np.roll(c * d3, 1, axis=0)

    cy = 2.0 * BY * (AY - AY0) * 0.5
    bn = np.roll(b, -1, axis=0)
    bp = np.roll(b, 1, axis=0)
    gb += cy * np.stack([bn[:, 1] - bp[:, 1], bp[:, 0] - bn[:, 0]], axis=1)

    cm = eps * nrep / gap ** (nrep + 1) / R
    ga += cm[:, None] * a
    return E, g


def vertex_energy_grad(X, prm, want_grad=True):
    """Total vertex-model energy and its gradient w.r.t. ``X`` (2N x 2)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    prm = np.ascontiguousarray(prm, dtype=np.float64)
    if backend() == "numba":
        E, g = _vertex_nb(X, prm, bool(want_grad))
    else:
        E, g = _vertex_np(X, prm, bool(want_grad))
    return float(E), g
