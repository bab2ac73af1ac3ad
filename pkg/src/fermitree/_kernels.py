"""Compiled inner loops shared by the tree sampler, BP and the estimator.

Vertices are 0-based here (vertex 0 is the root). Every random choice consumes
a pre-drawn uniform so that results depend only on the uniforms supplied.

Per-draw uniform layout for order ``s`` (``UNIFORMS_PER_VERTEX * s`` entries)::

    [0, s)      Pruefer symbols (first s-2 used)
    [s, 2s)     imaginary times tau_i / beta
    [2s, 3s)    BP ancestral sampling, indexed by vertex label
    [3s, 4s)    contraction choices, one per edge (first s-1 used)
    [4s, 5s)    growing-path choices (first s-1 used)
    [5s, 6s)    interpolation variables t_i (first s-1 used)
"""
import numpy as np
from numba import njit

UNIFORMS_PER_VERTEX = 6

OK = 0
REJECT_DEGREE = 1
REJECT_EMPTY_MEASURE = 2
REJECT_COLLISION = 3
REJECT_ZERO_EDGE = 4

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def pick(weights, u):
    """Index drawn from unnormalized nonnegative ``weights`` by inverse CDF."""
    total = 0.0
    for w in weights:
        total += w
    target = u * total
    acc = 0.0
    last = -1
    for k in range(weights.shape[0]):
        if weights[k] > 0.0:
            last = k
            acc += weights[k]
            if acc > target:
                return k
    return last


@njit(**_opts)
def decode_prufer(seq, s):
    """Edges ``(lo, hi)`` of the tree with Pruefer code ``seq`` (0-based symbols), sorted."""
    edges = np.empty((max(s - 1, 0), 2), dtype=np.int64)
    if s < 2:
        return edges
    degree = np.ones(s, dtype=np.int64)
    for x in seq:
        degree[x] += 1
    ptr = 0
    while degree[ptr] != 1:
        ptr += 1
    leaf = ptr
    for e in range(s - 2):
        x = seq[e]
        edges[e, 0] = min(leaf, x)
        edges[e, 1] = max(leaf, x)
        degree[leaf] -= 1
        degree[x] -= 1
        if degree[x] == 1 and x < ptr:
            leaf = x
        else:
            ptr += 1
            while degree[ptr] != 1:
                ptr += 1
            leaf = ptr
    edges[s - 2, 0] = min(leaf, s - 1)
    edges[s - 2, 1] = max(leaf, s - 1)
    # lexicographic sort (s is small)
    for i in range(1, s - 1):
        j = i
        while j > 0 and (
            edges[j - 1, 0] > edges[j, 0]
            or (edges[j - 1, 0] == edges[j, 0] and edges[j - 1, 1] > edges[j, 1])
        ):
            a0 = edges[j, 0]
            a1 = edges[j, 1]
            edges[j, 0] = edges[j - 1, 0]
            edges[j, 1] = edges[j - 1, 1]
            edges[j - 1, 0] = a0
            edges[j - 1, 1] = a1
            j -= 1
    return edges


@njit(**_opts)
def prufer_from_uniforms(u, s):
    """Pruefer symbols ``floor(u * s)`` as used by :func:`draw`."""
    seq = np.empty(max(s - 2, 0), dtype=np.int64)
    for k in range(s - 2):
        seq[k] = min(int(u[k] * s), s - 1)
    return seq


@njit(**_opts)
def decode_prufer_many(U, s):
    """Edge arrays ``(n, s - 1, 2)`` for the rows of ``U`` (uniform draws)."""
    n = U.shape[0]
    out = np.empty((n, max(s - 1, 0), 2), dtype=np.int64)
    for r in range(n):
        out[r] = decode_prufer(prufer_from_uniforms(U[r], s), s)
    return out


@njit(**_opts)
def adjacency(edges, s):
    """CSR adjacency with neighbours in increasing label order."""
    deg = np.zeros(s, dtype=np.int64)
    for e in range(edges.shape[0]):
        deg[edges[e, 0]] += 1
        deg[edges[e, 1]] += 1
    ptr = np.zeros(s + 1, dtype=np.int64)
    for v in range(s):
        ptr[v + 1] = ptr[v] + deg[v]
    fill = ptr[:-1].copy()
    idx = np.empty(ptr[s], dtype=np.int64)
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        b = edges[e, 1]
        idx[fill[a]] = b
        fill[a] += 1
        idx[fill[b]] = a
        fill[b] += 1
    for v in range(s):
        idx[ptr[v] : ptr[v + 1]] = np.sort(idx[ptr[v] : ptr[v + 1]])
    return ptr, idx, deg


@njit(**_opts)
def bfs(adj_ptr, adj_idx, s):
    """Breadth-first order from vertex 0 and the parent of each vertex (-1 at the root)."""
    order = np.empty(s, dtype=np.int64)
    parent = np.full(s, -1, dtype=np.int64)
    seen = np.zeros(s, dtype=np.bool_)
    order[0] = 0
    seen[0] = True
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        head += 1
        for k in range(adj_ptr[v], adj_ptr[v + 1]):
            w = adj_idx[k]
            if not seen[w]:
                seen[w] = True
                parent[w] = v
                order[tail] = w
                tail += 1
    return order, parent


@njit(**_opts)
def children_csr(parent, s):
    ptr = np.zeros(s + 1, dtype=np.int64)
    for v in range(s):
        if parent[v] >= 0:
            ptr[parent[v] + 1] += 1
    for v in range(s):
        ptr[v + 1] += ptr[v]
    fill = ptr[:-1].copy()
    idx = np.empty(max(s - 1, 0), dtype=np.int64)
    for v in range(s):
        p = parent[v]
        if p >= 0:
            idx[fill[p]] = v
            fill[p] += 1
    return ptr, idx


@njit(**_opts)
def growing_path(adj_ptr, adj_idx, s, u_omega, u_t):
    """Random growing path from vertex 0 with branch counts and ``t_i = u^(1/b_i)``."""
    omega = np.empty(s, dtype=np.int64)
    b = np.empty(max(s - 1, 0), dtype=np.int64)
    t = np.empty(max(s - 1, 0))
    visited = np.zeros(s, dtype=np.bool_)
    frontier = np.empty(s, dtype=np.int64)
    n_front = 0
    omega[0] = 0
    visited[0] = True
    for k in range(adj_ptr[0], adj_ptr[1]):
        frontier[n_front] = adj_idx[k]
        n_front += 1
    for step in range(s - 1):
        c = min(int(u_omega[step] * n_front), n_front - 1)
        v = frontier[c]
        for r in range(c, n_front - 1):
            frontier[r] = frontier[r + 1]
        n_front -= 1
        b[step] = n_front + 1
        t[step] = u_t[step] ** (1.0 / b[step])
        omega[step + 1] = v
        visited[v] = True
        for k in range(adj_ptr[v], adj_ptr[v + 1]):
            w = adj_idx[k]
            if not visited[w]:
                frontier[n_front] = w
                n_front += 1
    return omega, b, t


@njit(**_opts)
def path_weights(omega, t, s):
    """``a[j, k]``: product of ``t_i`` over the prefixes of ``omega`` separating ``j`` and ``k``."""
    pos = np.empty(s, dtype=np.int64)
    for r in range(s):
        pos[omega[r]] = r
    a = np.ones((s, s))
    for j in range(s):
        for k in range(j + 1, s):
            lo = min(pos[j], pos[k])
            hi = max(pos[j], pos[k])
            w = 1.0
            for r in range(lo, hi):
                w *= t[r]
            a[j, k] = w
            a[k, j] = w
    return a


@njit(**_opts)
def edge_amplitude(G, a, i, p, q, t_m, t_plus, t_minus):
    """Sum of ``|propagator|`` over every way to contract term ``p`` at ``a`` with ``q`` at ``i``."""
    total = 0.0
    for k in range(t_m[p]):
        for l in range(t_m[q]):
            total += abs(G[a, i, t_minus[p, k], t_plus[q, l]])
            total += abs(G[i, a, t_minus[q, l], t_plus[p, k]])
    return total


@njit(**_opts)
def edge_values_from_G(G, parent, s, vf, nbr_ptr, nbr_idx, t_m, t_plus, t_minus):
    """Edge factors aligned with the neighbour CSR, one row per non-root vertex."""
    K = vf.shape[1]
    ev = np.zeros((s, nbr_idx.shape[0]))
    for i in range(1, s):
        a = parent[i]
        for p in range(K):
            if vf[a, p] <= 0.0:
                continue
            for e in range(nbr_ptr[p], nbr_ptr[p + 1]):
                q = nbr_idx[e]
                if vf[i, q] > 0.0:
                    ev[i, e] = edge_amplitude(G, a, i, p, q, t_m, t_plus, t_minus)
    return ev


@njit(**_opts)
def bp_messages(order, parent, ch_ptr, ch_idx, vf, ev, nbr_ptr, nbr_idx):
    """Upward pass. Returns ``(log Z, cprod, root_belief)``; ``log Z = -inf`` for an empty measure.

    ``cprod[i, q]`` is the vertex factor of ``q`` at ``i`` times the
    max-normalized messages of ``i``'s children.
    """
    s, K = vf.shape
    msg = np.zeros((s, K))
    cprod = np.zeros((s, K))
    log_off = 0.0
    for r in range(s - 1, -1, -1):
        i = order[r]
        for q in range(K):
            w = vf[i, q]
            if w > 0.0:
                for c in range(ch_ptr[i], ch_ptr[i + 1]):
                    w *= msg[ch_idx[c], q]
            cprod[i, q] = w
        if r == 0:
            break
        a = parent[i]
        mx = 0.0
        for p in range(K):
            if vf[a, p] <= 0.0:
                continue
            acc = 0.0
            for e in range(nbr_ptr[p], nbr_ptr[p + 1]):
                acc += ev[i, e] * cprod[i, nbr_idx[e]]
            msg[i, p] = acc
            if acc > mx:
                mx = acc
        if mx <= 0.0:
            return -np.inf, cprod, cprod[0]
        for p in range(K):
            msg[i, p] /= mx
        log_off += np.log(mx)
    root = order[0]
    Z = 0.0
    for p in range(K):
        Z += cprod[root, p]
    if Z <= 0.0:
        return -np.inf, cprod, cprod[root]
    return np.log(Z) + log_off, cprod, cprod[root]


@njit(**_opts)
def bp_sample(order, parent, cprod, ev, nbr_ptr, nbr_idx, u, out):
    """Ancestral sampling; ``u[v]`` drives the choice at vertex label ``v``."""
    s = order.shape[0]
    root = order[0]
    out[root] = pick(cprod[root], u[root])
    for r in range(1, s):
        i = order[r]
        p = out[parent[i]]
        lo = nbr_ptr[p]
        hi = nbr_ptr[p + 1]
        w = np.empty(hi - lo)
        for e in range(lo, hi):
            w[e - lo] = ev[i, e] * cprod[i, nbr_idx[e]]
        out[i] = nbr_idx[lo + pick(w, u[i])]


@njit(**_opts)
def bp_sample_many(order, parent, cprod, ev, nbr_ptr, nbr_idx, U):
    n = U.shape[0]
    out = np.empty((n, order.shape[0]), dtype=np.int64)
    for d in range(n):
        bp_sample(order, parent, cprod, ev, nbr_ptr, nbr_idx, U[d], out[d])
    return out


@njit(**_opts)
def assignment(edges, P, G, t_m, t_plus, t_minus, u_chi, choice):
    """Draw one contraction per edge with probability proportional to ``|propagator|``.

    ``choice[e] = (sigma, k, l, row, col)`` with 0-based ``k, l`` and global
    slot indices of the deleted row/column. Returns ``(status, sign,
    amplitude_product)`` where ``sign`` is the product of the signs of the
    chosen Green's function values ``g = -G``.
    """
    s = P.shape[0]
    off = np.zeros(s + 1, dtype=np.int64)
    for v in range(s):
        off[v + 1] = off[v] + t_m[P[v]]
    used_row = np.zeros(off[s], dtype=np.bool_)
    used_col = np.zeros(off[s], dtype=np.bool_)
    sign = 1.0
    amp = 1.0
    status = OK
    for e in range(edges.shape[0]):
        i = edges[e, 0]
        j = edges[e, 1]
        p = P[i]
        q = P[j]
        mi = t_m[p]
        mj = t_m[q]
        w = np.empty(2 * mi * mj)
        for k in range(mi):
            for l in range(mj):
                w[k * mj + l] = abs(G[i, j, t_minus[p, k], t_plus[q, l]])
                w[mi * mj + k * mj + l] = abs(G[j, i, t_minus[q, l], t_plus[p, k]])
        c = pick(w, u_chi[e])
        if c < 0:
            return REJECT_ZERO_EDGE, 0.0, 0.0
        k = (c % (mi * mj)) // mj
        l = c % mj
        if c < mi * mj:
            sigma = -1
            row = off[i] + k
            col = off[j] + l
            val = G[i, j, t_minus[p, k], t_plus[q, l]]
        else:
            sigma = 1
            row = off[j] + l
            col = off[i] + k
            val = G[j, i, t_minus[q, l], t_plus[p, k]]
        choice[e, 0] = sigma
        choice[e, 1] = k
        choice[e, 2] = l
        choice[e, 3] = row
        choice[e, 4] = col
        if used_row[row] or used_col[col]:
            status = REJECT_COLLISION
        used_row[row] = True
        used_col[col] = True
        if val > 0.0:
            sign = -sign
        amp *= abs(val)
    return status, sign, amp


@njit(**_opts)
def alpha_sign(edges, P, t_m, choice):
    """Sign of the tree-determinant term for a valid contraction assignment.

    Product of ``(-1)^(s-1)``, the per-term reordering signs
    ``(-1)^(m(m-1)/2)``, the per-edge slot-position signs, and the parity of
    the permutation pairing the deleted rows with the deleted columns.
    """
    s = P.shape[0]
    off = np.zeros(s + 1, dtype=np.int64)
    for v in range(s):
        off[v + 1] = off[v] + t_m[P[v]]
    parity = s - 1
    for v in range(s):
        m = t_m[P[v]]
        parity += m * (m - 1) // 2
    n_e = edges.shape[0]
    rows = np.empty(n_e, dtype=np.int64)
    cols = np.empty(n_e, dtype=np.int64)
    for e in range(n_e):
        # 1-based k + l has the same parity as the 0-based pair
        parity += off[edges[e, 0]] + off[edges[e, 1]] + choice[e, 1] + choice[e, 2]
        rows[e] = choice[e, 3]
        cols[e] = choice[e, 4]
    perm = cols[np.argsort(rows)]
    for x in range(n_e):
        for y in range(x + 1, n_e):
            if perm[x] > perm[y]:
                parity += 1
    return 1 - 2 * (parity % 2)


@njit(**_opts)
def weighted_matrix(P, G, a, t_m, t_plus, t_minus, choice, n_edges):
    """Block matrix with contracted rows and columns removed, entries scaled by ``a``."""
    s = P.shape[0]
    total = 0
    for v in range(s):
        total += t_m[P[v]]
    del_row = np.zeros(total, dtype=np.bool_)
    del_col = np.zeros(total, dtype=np.bool_)
    for e in range(n_edges):
        del_row[choice[e, 3]] = True
        del_col[choice[e, 4]] = True
    dim = total - n_edges
    r_vert = np.empty(dim, dtype=np.int64)
    r_mode = np.empty(dim, dtype=np.int64)
    c_vert = np.empty(dim, dtype=np.int64)
    c_mode = np.empty(dim, dtype=np.int64)
    nr = 0
    nc = 0
    slot = 0
    for v in range(s):
        p = P[v]
        for k in range(t_m[p]):
            if not del_row[slot]:
                r_vert[nr] = v
                r_mode[nr] = t_minus[p, k]
                nr += 1
            if not del_col[slot]:
                c_vert[nc] = v
                c_mode[nc] = t_plus[p, k]
                nc += 1
            slot += 1
    mat = np.empty((dim, dim))
    for x in range(dim):
        for y in range(dim):
            mat[x, y] = a[r_vert[x], c_vert[y]] * G[r_vert[x], c_vert[y], r_mode[x], c_mode[y]]
    return mat


@njit(**_opts)
def determinant(mat):
    if mat.shape[0] == 0:
        return 1.0
    return np.linalg.det(mat)


@njit(**_opts)
def draw(s, u, G, t_m, t_plus, t_minus, t_v, nbr_ptr, nbr_idx, vf_root, vf_child, max_degree):
    """One draw at order ``s``.

    Returns ``(status, core, log_Z, det, dim)``. The weight is
    ``prefactor * core * exp(log_Z)``; ``core`` collects the sign factors and
    the determinant. ``G`` is the propagator tensor for this draw's times.
    """
    K = vf_root.shape[0]
    edges = decode_prufer(prufer_from_uniforms(u, s), s)
    adj_ptr, adj_idx, deg = adjacency(edges, s)
    for v in range(s):
        if deg[v] > max_degree:
            return REJECT_DEGREE, 0.0, -np.inf, 0.0, 0
    order, parent = bfs(adj_ptr, adj_idx, s)
    ch_ptr, ch_idx = children_csr(parent, s)

    vf = np.empty((s, K))
    vf[0] = vf_root
    for v in range(1, s):
        vf[v] = vf_child
    ev = edge_values_from_G(G, parent, s, vf, nbr_ptr, nbr_idx, t_m, t_plus, t_minus)
    log_Z, cprod, _ = bp_messages(order, parent, ch_ptr, ch_idx, vf, ev, nbr_ptr, nbr_idx)
    if log_Z == -np.inf:
        return REJECT_EMPTY_MEASURE, 0.0, log_Z, 0.0, 0
    P = np.empty(s, dtype=np.int64)
    bp_sample(order, parent, cprod, ev, nbr_ptr, nbr_idx, u[2 * s : 3 * s], P)

    choice = np.zeros((max(s - 1, 0), 5), dtype=np.int64)
    status, sign, _ = assignment(edges, P, G, t_m, t_plus, t_minus, u[3 * s : 4 * s], choice)
    if status != OK:
        return status, 0.0, log_Z, 0.0, 0
    for v in range(s):
        if t_v[P[v]] < 0.0:
            sign = -sign
    alpha = alpha_sign(edges, P, t_m, choice)

    omega, b, t = growing_path(adj_ptr, adj_idx, s, u[4 * s : 5 * s], u[5 * s : 6 * s])
    a = path_weights(omega, t, s)
    mat = weighted_matrix(P, G, a, t_m, t_plus, t_minus, choice, s - 1)
    det = determinant(mat)
    return OK, alpha * sign * det, log_Z, det, mat.shape[0]


@njit(**_opts)
def draw_batch(s, U, G, t_m, t_plus, t_minus, t_v, nbr_ptr, nbr_idx, vf_root, vf_child, max_degree):
    n = U.shape[0]
    status = np.empty(n, dtype=np.int64)
    core = np.empty(n)
    log_Z = np.empty(n)
    det = np.empty(n)
    dim = np.empty(n, dtype=np.int64)
    for d in range(n):
        st, c, lz, dt, dm = draw(
            s, U[d], G[d], t_m, t_plus, t_minus, t_v, nbr_ptr, nbr_idx, vf_root, vf_child, max_degree
        )
        status[d] = st
        core[d] = c
        log_Z[d] = lz
        det[d] = dt
        dim[d] = dm
    return status, core, log_Z, det, dim
