"""Brute-force reference constructions used only by the tests.

Nothing here imports the package's assembly code: geometry, operators and
counting are rebuilt from their definitions.
"""

from itertools import combinations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


# -- lattice gas ---------------------------------------------------------------

def strip_neighbors(L):
    return {i: {(i + d) % L for d in (-2, -1, 1, 2)} for i in range(L)}


def strip_common(L, i, j):
    """Common neighbours of a bond: {i-1, i+2} for (i, i+1), {i+1} for (i, i+2).

    For L >= 8 this equals the intersection of the neighbour sets; on L = 6 the
    intersection would also contain the wrapped-around third leg site.
    """
    d = (j - i) % L
    if d in (1, L - 1):
        a = i if d == 1 else j
        return {(a - 1) % L, (a + 2) % L}
    a = i if d == 2 else j
    return {(a + 1) % L}


def site_operator(op, i, L):
    """Kronecker embedding with site ``i`` as bit ``i`` of the state index."""
    out = np.ones((1, 1))
    for k in reversed(range(L)):
        out = np.kron(out, op if k == i else np.eye(2))
    return out


def dense_gas_hamiltonian(L, lam):
    """Term-by-term operator sum on the full 2**L space.

    Sum over unordered neighbour pairs, with hop amplitude lam and potential
    (1 - lam) per bond, both multiplied by the constraint 1 - prod_k n_k.
    """
    sp_ = np.array([[0, 0], [1, 0]], dtype=float)   # |1><0|
    sm_ = sp_.T
    n_ = np.diag([0.0, 1.0])
    nbr = strip_neighbors(L)
    n = {i: site_operator(n_, i, L) for i in range(L)}
    splus = {i: site_operator(sp_, i, L) for i in range(L)}
    sminus = {i: site_operator(sm_, i, L) for i in range(L)}
    one = np.eye(2 ** L)
    H = np.zeros((2 ** L, 2 ** L))
    for i, j in combinations(range(L), 2):
        if j not in nbr[i]:
            continue
        prod = one.copy()
        for k in strip_common(L, i, j):
            prod = prod @ n[k]
        C = one - prod
        hop = splus[i] @ sminus[j] + splus[j] @ sminus[i]
        pot = n[i] @ (one - n[j]) + n[j] @ (one - n[i])
        H += C @ (-lam * hop + (1 - lam) * pot)
    return H


def gas_component(L, N, seed):
    """Sorted states of the component of ``seed`` in the filling-N move graph."""
    H = dense_gas_hamiltonian(L, 1.0)
    states = np.array([s for s in range(2 ** L) if bin(s).count("1") == N])
    A = sp.csr_matrix(H[np.ix_(states, states)] != 0)
    _, lab = connected_components(A, directed=False)
    k = int(np.flatnonzero(states == seed)[0])
    return states[lab == lab[k]]


# -- dimers ----------------------------------------------------------------------

def torus_biadjacency(Lx, Ly):
    """Multigraph biadjacency between even and odd sublattice sites."""
    even = [(x, y) for y in range(Ly) for x in range(Lx) if (x + y) % 2 == 0]
    odd = [(x, y) for y in range(Ly) for x in range(Lx) if (x + y) % 2 == 1]
    idx = {p: k for k, p in enumerate(odd)}
    B = np.zeros((len(even), len(odd)), dtype=np.int64)
    for a, (x, y) in enumerate(even):
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            B[a, idx[((x + dx) % Lx, (y + dy) % Ly)]] += 1
    return B


def permanent(B):
    """Ryser's formula, vectorised over all column subsets (exact integers)."""
    n = B.shape[0]
    total = 0
    chunk = 1 << 14
    for lo in range(0, 1 << n, chunk):
        sub = np.arange(lo, min(lo + chunk, 1 << n))
        bits = ((sub[:, None] >> np.arange(n)) & 1).astype(np.int64)
        rowsums = bits @ B.T
        prods = np.prod(rowsums, axis=1)
        sign = (-1) ** (n - bits.sum(axis=1))
        total += int((sign * prods).sum())
    return total


def count_matchings(Lx, Ly):
    return permanent(torus_biadjacency(Lx, Ly))


def dense_qdm_hamiltonian(configs, Lx, Ly, V):
    """Apply every plaquette operator to every configuration directly.

    Link of site (x, y) in direction mu has label 2*(x + Lx*y) + mu.
    """
    def lk(x, y, mu):
        return 2 * ((x % Lx) + Lx * (y % Ly)) + mu

    index = {c: k for k, c in enumerate(configs)}
    H = np.zeros((len(configs), len(configs)))
    for k, c in enumerate(configs):
        for y in range(Ly):
            for x in range(Lx):
                bottom, top = lk(x, y, 0), lk(x, y + 1, 0)
                left, right = lk(x, y, 1), lk(x + 1, y, 1)
                horiz = (c >> bottom & 1) and (c >> top & 1)
                vert = (c >> left & 1) and (c >> right & 1)
                if horiz or vert:
                    H[k, k] += V
                    new = c ^ (1 << bottom) ^ (1 << top) ^ (1 << left) ^ (1 << right)
                    H[index[new], k] += -1.0
    return H
