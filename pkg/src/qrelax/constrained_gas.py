"""Constrained quantum lattice gas on a periodic triangular strip.

Sites ``0..L-1`` run along the zigzag of a two-leg triangular ladder, so site
``i`` neighbours ``i±1`` and ``i±2``.  A particle may hop across a bond only if
at least one common neighbour of the two bond sites is empty; the same
constraint switches the bond's interaction energy on and off.

Basis states are plain integers (bit ``i`` is the occupation of site ``i``).
The Hamiltonian restricted to a connected sector is

    H = sum over active bonds of  -lam * (hop)  +  (1 - lam) * (diag),

i.e. every allowed hop has amplitude ``-lam`` and every bond on which a hop is
allowed contributes ``+(1 - lam)`` to the diagonal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np
import scipy.sparse as sp

__all__ = [
    "FrozenStateError",
    "StripGeometry",
    "GasSectorBasis",
    "RegionHamiltonian",
    "build_strip",
    "occupation",
    "sites_of",
    "constraint_value",
    "allowed_moves",
    "is_frozen",
    "has_vacancy_pair",
    "enumerate_sector",
    "build_gas_hamiltonian",
    "restrict_hamiltonian",
    "translate",
    "translation_permutation",
]


class FrozenStateError(ValueError):
    """Raised when a seed configuration admits no allowed move."""


@dataclass(frozen=True)
class StripGeometry:
    """Periodic two-leg triangular strip with ``L`` sites.

    ``bonds[b]`` is an ordered pair ``(i, j)`` and ``common[b]`` the set of
    sites adjacent to both ``i`` and ``j``.  Zigzag bonds ``(i, i+1)`` come
    first, leg bonds ``(i, i+2)`` second.
    """

    L: int
    bonds: tuple[tuple[int, int], ...]
    common: tuple[frozenset[int], ...]
    periodic: bool = True

    def __post_init__(self):
        if len(self.bonds) != len(self.common):
            raise ValueError("bonds and common-neighbour sets differ in length")

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def neighbors(self, i: int) -> tuple[int, ...]:
        L = self.L
        return tuple(sorted({(i + d) % L for d in (-2, -1, 1, 2)}))

    def bond_index(self, i: int, j: int) -> int:
        key = frozenset((i % self.L, j % self.L))
        try:
            return self._bond_lookup[key]
        except KeyError:
            raise ValueError(f"({i}, {j}) is not a bond of the L={self.L} strip") from None

    @cached_property
    def _bond_lookup(self) -> dict:
        return {frozenset(b): k for k, b in enumerate(self.bonds)}

    @cached_property
    def pair_masks(self) -> np.ndarray:
        """Bitmask with both bond endpoints set, one entry per bond."""
        return np.array([(1 << i) | (1 << j) for i, j in self.bonds], dtype=np.uint64)

    @cached_property
    def common_masks(self) -> np.ndarray:
        return np.array([sum(1 << k for k in c) for c in self.common], dtype=np.uint64)

    @property
    def full_mask(self) -> int:
        return (1 << self.L) - 1


def build_strip(L: int) -> StripGeometry:
    """Build the periodic strip geometry for an even ``L >= 6``."""
    if not isinstance(L, (int, np.integer)) or L < 6 or L % 2:
        raise ValueError(f"strip length must be an even integer >= 6, got {L!r}")
    L = int(L)
    bonds, common = [], []
    for i in range(L):
        bonds.append((i, (i + 1) % L))
        common.append(frozenset({(i - 1) % L, (i + 2) % L}))
    for i in range(L):
        bonds.append((i, (i + 2) % L))
        common.append(frozenset({(i + 1) % L}))
    return StripGeometry(L=L, bonds=tuple(bonds), common=tuple(common))


def occupation(L: int, occupied=None, *, vacant=None) -> int:
    """Bitmask from a list of occupied sites, or (keyword) of vacant sites."""
    if (occupied is None) == (vacant is None):
        raise ValueError("give exactly one of occupied / vacant")
    if occupied is not None:
        return sum(1 << (i % L) for i in set(occupied))
    return ((1 << L) - 1) ^ sum(1 << (i % L) for i in set(vacant))


def sites_of(bits: int, L: int) -> list[int]:
    return [i for i in range(L) if bits >> i & 1]


def constraint_value(geom: StripGeometry, occ: int, bond) -> int:
    """Return 0 if every common neighbour of ``bond`` is occupied, else 1.

    ``bond`` is either a bond index or a pair of sites (in any order).
    """
    b = bond if isinstance(bond, (int, np.integer)) else geom.bond_index(*bond)
    cm = int(geom.common_masks[b])
    return 0 if (occ & cm) == cm else 1


def allowed_moves(geom: StripGeometry, occ: int) -> list[int]:
    """Configurations reachable from ``occ`` by one constrained hop."""
    out = []
    for b, (i, j) in enumerate(geom.bonds):
        if (occ >> i & 1) != (occ >> j & 1) and constraint_value(geom, occ, b):
            out.append(occ ^ ((1 << i) | (1 << j)))
    return out


def is_frozen(geom: StripGeometry, occ: int) -> bool:
    return not allowed_moves(geom, occ)


def has_vacancy_pair(geom: StripGeometry, occ: int) -> bool:
    """True if two neighbouring sites are both empty."""
    holes = [i for i in range(geom.L) if not occ >> i & 1]
    return any((j - i) % geom.L in (1, 2, geom.L - 1, geom.L - 2)
               for a, i in enumerate(holes) for j in holes[a + 1:])


@dataclass(frozen=True)
class GasSectorBasis:
    """Connected component of the constrained move graph at fixed filling.

    ``states`` is sorted ascending; the rank of a state is its position.
    """

    geometry: StripGeometry
    N: int
    states: np.ndarray = field(repr=False)

    @property
    def L(self) -> int:
        return self.geometry.L

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def filling(self) -> float:
        return self.N / self.L

    def __len__(self):
        return len(self.states)

    def __contains__(self, occ) -> bool:
        k = np.searchsorted(self.states, np.uint64(occ))
        return bool(k < len(self.states) and self.states[k] == occ)

    def rank(self, occ) -> int:
        k = int(np.searchsorted(self.states, np.uint64(occ)))
        if k >= len(self.states) or int(self.states[k]) != int(occ):
            raise KeyError(f"configuration {int(occ):#x} is not in the sector")
        return k

    def ranks(self, occs) -> np.ndarray:
        occs = np.asarray(occs, dtype=np.uint64)
        k = np.searchsorted(self.states, occs)
        k = np.minimum(k, len(self.states) - 1)
        if np.any(self.states[k] != occs):
            raise KeyError("some configurations are not in the sector")
        return k

    @cached_property
    def modes(self) -> np.ndarray:
        """Occupation matrix, shape ``(dim, L)``, entries 0/1 (``uint8``)."""
        shifts = np.arange(self.L, dtype=np.uint64)
        return ((self.states[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)

    def basis_vector(self, occ) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.rank(occ)] = 1.0
        return v

    def uniform_vector(self) -> np.ndarray:
        return np.full(self.dim, 1.0 / np.sqrt(self.dim), dtype=complex)

    def missing_ergodic_states(self) -> list[int]:
        """Fillings-``N`` states with a vacancy pair that BFS did not reach."""
        from itertools import combinations

        missing = []
        for holes in combinations(range(self.L), self.L - self.N):
            occ = occupation(self.L, vacant=holes)
            if has_vacancy_pair(self.geometry, occ) and occ not in self:
                missing.append(occ)
        return missing


def enumerate_sector(geom: StripGeometry, N: int, seed: int) -> GasSectorBasis:
    """Breadth-first closure of ``seed`` under constrained hops."""
    seed = int(seed)
    if bin(seed).count("1") != N or seed >> geom.L:
        raise ValueError(f"seed {seed:#x} does not hold {N} particles on {geom.L} sites")
    if is_frozen(geom, seed):
        raise FrozenStateError(f"seed {seed:#x} is frozen: no constrained hop is allowed")
    seen = {seed}
    queue = deque([seed])
    while queue:
        occ = queue.popleft()
        for nxt in allowed_moves(geom, occ):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    states = np.array(sorted(seen), dtype=np.uint64)
    return GasSectorBasis(geometry=geom, N=N, states=states)


def default_seed(L: int, N: int) -> int:
    """Configuration with all vacancies packed at the highest sites."""
    if not 0 < N <= L - 2:
        raise ValueError("need at least two vacancies and one particle")
    return (1 << N) - 1


def _active_bonds(geom: StripGeometry, states: np.ndarray):
    """Per-bond boolean arrays flagging states where a hop across the bond is allowed."""
    one = np.uint64(1)
    for b, (i, j) in enumerate(geom.bonds):
        ni = (states >> np.uint64(i)) & one
        nj = (states >> np.uint64(j)) & one
        cm = geom.common_masks[b]
        yield b, (ni != nj) & ((states & cm) != cm)


def build_gas_hamiltonian(basis: GasSectorBasis, lam: float) -> sp.csr_matrix:
    """Sparse Hamiltonian on the sector; real symmetric CSR."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"hopping parameter must lie in [0, 1], got {lam}")
    geom, states = basis.geometry, basis.states
    dim = len(states)
    diag = np.zeros(dim)
    rows, cols = [], []
    for b, active in _active_bonds(geom, states):
        diag[active] += 1.0
        src = np.flatnonzero(active)
        tgt = states[src] ^ geom.pair_masks[b]
        k = np.minimum(np.searchsorted(states, tgt), dim - 1)
        if np.any(states[k] != tgt):
            raise AssertionError("constrained hop leaves the sector basis")
        rows.append(src)
        cols.append(k)
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.intp)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.intp)
    if len(rows):
        pop = np.bitwise_count(states)
        assert np.all(pop[rows] == pop[cols]), "hop changed the particle number"
    idx = np.arange(dim)
    data = [np.full(len(rows), -lam), (1.0 - lam) * diag]
    H = sp.coo_matrix((np.concatenate(data), (np.concatenate([rows, idx]),
                                              np.concatenate([cols, idx]))),
                      shape=(dim, dim)).tocsr()
    H.eliminate_zeros()
    H.sort_indices()
    return H


@dataclass(frozen=True)
class RegionHamiltonian:
    """Hamiltonian acting on region-A patterns with the complement frozen.

    ``embedding[a]`` is the sector rank of the full configuration built from
    pattern ``patterns[a]`` and the frozen complement.
    """

    matrix: sp.csr_matrix
    patterns: np.ndarray
    embedding: np.ndarray
    region: tuple[int, ...]
    frozen: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def embed(self, psi_a: np.ndarray, dim: int) -> np.ndarray:
        """Lift region amplitudes (last axis) into the full sector space."""
        psi_a = np.asarray(psi_a)
        out = np.zeros(psi_a.shape[:-1] + (dim,), dtype=np.result_type(psi_a, complex))
        out[..., self.embedding] = psi_a
        return out


def restrict_hamiltonian(basis: GasSectorBasis, lam: float, region, frozen: int,
                         *, include_boundary: bool = True) -> RegionHamiltonian:
    """Hamiltonian of region ``A`` with the complement pinned to ``frozen``.

    The basis is every A-pattern ``a`` such that ``a`` combined with the frozen
    complement lies in the sector.  Hops that would change the complement are
    dropped.  With ``include_boundary=True`` (default) the result is the exact
    compression of the full Hamiltonian onto that subspace, so bonds touching
    the complement keep their potential energy.  With ``include_boundary=False``
    only bonds with both ends inside A contribute; their constraint still reads
    the frozen complement.
    """
    geom = basis.geometry
    L = geom.L
    region = tuple(sorted({int(i) % L for i in region}))
    if not region or len(region) == L:
        raise ValueError("region must be a nonempty proper subset of the sites")
    mask_a = sum(1 << i for i in region)
    mask_b = geom.full_mask ^ mask_a
    frozen_b = int(frozen) & mask_b
    states = basis.states
    emb = np.flatnonzero((states & np.uint64(mask_b)) == np.uint64(frozen_b))
    if len(emb) == 0:
        raise ValueError(f"no sector state has complement pattern {frozen_b:#x}")
    sub = states[emb]
    patterns = sub & np.uint64(mask_a)
    if include_boundary:
        H = build_gas_hamiltonian(basis, lam)[emb][:, emb].tocsr()
    else:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"hopping parameter must lie in [0, 1], got {lam}")
        dim = len(sub)
        diag = np.zeros(dim)
        rows, cols = [], []
        for b, active in _active_bonds(geom, sub):
            i, j = geom.bonds[b]
            if not (mask_a >> i & 1 and mask_a >> j & 1):
                continue
            diag[active] += 1.0
            src = np.flatnonzero(active)
            tgt = sub[src] ^ geom.pair_masks[b]
            k = np.minimum(np.searchsorted(sub, tgt), dim - 1)
            if np.any(sub[k] != tgt):
                raise AssertionError("hop inside A leaves the restricted basis")
            rows.append(src)
            cols.append(k)
        rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.intp)
        cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.intp)
        idx = np.arange(dim)
        H = sp.coo_matrix((np.concatenate([np.full(len(rows), -lam), (1.0 - lam) * diag]),
                           (np.concatenate([rows, idx]), np.concatenate([cols, idx]))),
                          shape=(dim, dim)).tocsr()
    H.eliminate_zeros()
    H.sort_indices()
    return RegionHamiltonian(matrix=H, patterns=patterns, embedding=emb,
                             region=region, frozen=frozen_b)


def translate(occ: int, L: int, shift: int = 1) -> int:
    """Cyclic shift of a configuration by ``shift`` sites."""
    shift %= L
    full = (1 << L) - 1
    return ((occ << shift) | (occ >> (L - shift))) & full


def translation_permutation(basis: GasSectorBasis) -> np.ndarray:
    """Sector ranks of the states translated by one site.

    Raises ``ValueError`` if the sector is not translation invariant.
    """
    L = basis.L
    s = basis.states
    full = np.uint64((1 << L) - 1)
    t = ((s << np.uint64(1)) | (s >> np.uint64(L - 1))) & full
    try:
        return basis.ranks(t)
    except KeyError:
        raise ValueError("sector is not closed under translation") from None


def count_fillings(L: int, N: int) -> int:
    return comb(L, N)
