"""Quantum dimer model on the periodic square lattice.

Links are labelled ``2*s + mu`` where ``s = x + Lx*y`` is the site the link
starts from and ``mu`` is 0 for the +x direction and 1 for +y.  A dimer
configuration is an integer whose set bits are the occupied links.

The Hamiltonian on a flux sector is

    H = sum_p [ -(flip_p + h.c.) + V * (number of flippable plaquettes) ],

so neighbouring coverings (one plaquette flip apart) couple with amplitude -1
and the diagonal counts flippable plaquettes times ``V``.
"""

from __future__ import annotations

import sys
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

__all__ = [
    "EmptySectorError",
    "FluxVector",
    "DimerLattice",
    "DimerSectorBasis",
    "enumerate_coverings",
    "flux_of",
    "flux_partition",
    "build_flux_sector",
    "build_qdm_hamiltonian",
    "columnar_covering",
    "staggered_covering",
    "flip",
    "flippable_plaquettes",
    "translation_permutations",
]


class EmptySectorError(ValueError):
    pass


class FluxVector(NamedTuple):
    x: Fraction
    y: Fraction

    def __str__(self):
        return f"({self.x}, {self.y})"


@dataclass(frozen=True)
class DimerLattice:
    """Link and plaquette bookkeeping for an ``Lx`` x ``Ly`` torus."""

    Lx: int
    Ly: int

    def __post_init__(self):
        for n in (self.Lx, self.Ly):
            if not isinstance(n, (int, np.integer)) or n < 2 or n % 2:
                raise ValueError(f"torus dimensions must be even integers >= 2, got "
                                 f"{self.Lx}x{self.Ly}")

    @property
    def n_sites(self) -> int:
        return self.Lx * self.Ly

    @property
    def n_links(self) -> int:
        return 2 * self.n_sites

    def site(self, x: int, y: int) -> int:
        return (x % self.Lx) + self.Lx * (y % self.Ly)

    def coords(self, s: int) -> tuple[int, int]:
        return s % self.Lx, s // self.Lx

    def link(self, x: int, y: int, mu: int) -> int:
        return 2 * self.site(x, y) + mu

    def link_endpoints(self, l: int) -> tuple[int, int]:
        s, mu = divmod(l, 2)
        x, y = self.coords(s)
        return s, self.site(x + 1, y) if mu == 0 else self.site(x, y + 1)

    @cached_property
    def incident(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """For every site: ``(link, other endpoint)`` for its four links."""
        out = []
        for s in range(self.n_sites):
            x, y = self.coords(s)
            out.append(((self.link(x, y, 0), self.site(x + 1, y)),
                        (self.link(x - 1, y, 0), self.site(x - 1, y)),
                        (self.link(x, y, 1), self.site(x, y + 1)),
                        (self.link(x, y - 1, 1), self.site(x, y - 1))))
        return tuple(out)

    @cached_property
    def plaquettes(self) -> tuple[tuple[int, int], ...]:
        """``(horizontal pair mask, vertical pair mask)`` per plaquette.

        Plaquette ``p`` has its lower-left corner at site ``p``.
        """
        out = []
        for s in range(self.n_sites):
            x, y = self.coords(s)
            h = (1 << self.link(x, y, 0)) | (1 << self.link(x, y + 1, 0))
            v = (1 << self.link(x, y, 1)) | (1 << self.link(x + 1, y, 1))
            out.append((h, v))
        return tuple(out)

    @cached_property
    def link_signs(self) -> np.ndarray:
        """Staggered sign (-1)**(x+y) of the starting site of every link."""
        sg = np.empty(self.n_links, dtype=np.int64)
        for l in range(self.n_links):
            x, y = self.coords(l // 2)
            sg[l] = -1 if (x + y) % 2 else 1
        return sg

    @cached_property
    def plaquette_link_matrix(self) -> np.ndarray:
        """Boolean ``(n_plaquettes, n_links)`` incidence of plaquette edges."""
        m = np.zeros((self.n_sites, self.n_links), dtype=bool)
        for p, (h, v) in enumerate(self.plaquettes):
            for l in range(self.n_links):
                if (h | v) >> l & 1:
                    m[p, l] = True
        return m

    def translate_link(self, l: int, dx: int, dy: int) -> int:
        s, mu = divmod(l, 2)
        x, y = self.coords(s)
        return self.link(x + dx, y + dy, mu)

    def to_modes(self, configs) -> np.ndarray:
        """Link occupation matrix ``(len(configs), n_links)`` of 0/1 (``uint8``)."""
        nbytes = (self.n_links + 7) // 8
        raw = np.frombuffer(b"".join(int(c).to_bytes(nbytes, "little") for c in configs),
                            dtype=np.uint8).reshape(len(configs), nbytes)
        return np.unpackbits(raw, axis=1, bitorder="little")[:, :self.n_links]

    def from_modes(self, modes: np.ndarray) -> list[int]:
        packed = np.packbits(np.asarray(modes, dtype=np.uint8), axis=1, bitorder="little")
        return [int.from_bytes(row.tobytes(), "little") for row in packed]

    def is_close_packed(self, config: int) -> bool:
        return all(sum(config >> l & 1 for l, _ in inc) == 1 for inc in self.incident)


def enumerate_coverings(Lx: int, Ly: int) -> list[int]:
    """All close-packed dimer coverings of the torus, by raster backtracking.

    The lowest uncovered site is always paired next, trying its four links in
    the fixed order +x, -x, +y, -y; the output order is therefore deterministic.
    """
    lat = DimerLattice(Lx, Ly)
    n = lat.n_sites
    inc = lat.incident
    covered = [False] * n
    out: list[int] = []
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, n + 100))

    def place(start: int, config: int):
        s = start
        while s < n and covered[s]:
            s += 1
        if s == n:
            out.append(config)
            return
        covered[s] = True
        for l, t in inc[s]:
            if not covered[t]:
                covered[t] = True
                place(s + 1, config | (1 << l))
                covered[t] = False
        covered[s] = False

    try:
        place(0, 0)
    finally:
        sys.setrecursionlimit(limit)
    return out


def flux_of(config: int, Lx: int, Ly: int) -> FluxVector:
    """Staggered winding flux ``(1/L_mu) sum_r (-1)**(x+y) d_{r,mu}``."""
    lat = DimerLattice(Lx, Ly)
    tot = [0, 0]
    for l in range(lat.n_links):
        if config >> l & 1:
            tot[l % 2] += int(lat.link_signs[l])
    return FluxVector(Fraction(tot[0], Lx), Fraction(tot[1], Ly))


def _fluxes(lat: DimerLattice, modes: np.ndarray) -> np.ndarray:
    """Integer numerators ``(n, 2)`` of the flux; checks integrality."""
    w = modes.astype(np.int64) * lat.link_signs
    num = np.stack([w[:, 0::2].sum(axis=1), w[:, 1::2].sum(axis=1)], axis=1)
    if np.any(num[:, 0] % lat.Lx) or np.any(num[:, 1] % lat.Ly):
        raise AssertionError("non-integer flux found for a close-packed covering")
    return np.stack([num[:, 0] // lat.Lx, num[:, 1] // lat.Ly], axis=1)


def flux_partition(coverings, Lx: int, Ly: int) -> dict[FluxVector, int]:
    """Number of coverings in each flux sector."""
    lat = DimerLattice(Lx, Ly)
    fl = _fluxes(lat, lat.to_modes(coverings))
    keys, counts = np.unique(fl, axis=0, return_counts=True)
    return {FluxVector(Fraction(int(a)), Fraction(int(b))): int(c)
            for (a, b), c in zip(keys, counts)}


def flippable_plaquettes(config: int, lat: DimerLattice) -> list[int]:
    return [p for p, (h, v) in enumerate(lat.plaquettes)
            if config & h == h or config & v == v]


def flip(config: int, p: int, lat: DimerLattice) -> int:
    """Rotate the dimer pair on plaquette ``p``; it must be flippable."""
    h, v = lat.plaquettes[p]
    if config & h != h and config & v != v:
        raise ValueError(f"plaquette {p} is not flippable")
    return config ^ h ^ v


def columnar_covering(Lx: int, Ly: int, direction: int = 0, offset: int = 0) -> int:
    """Columnar state: parallel dimers stacked in columns (``direction`` 0=x, 1=y)."""
    lat = DimerLattice(Lx, Ly)
    c = 0
    for y in range(Ly):
        for x in range(Lx):
            if direction == 0 and (x + offset) % 2 == 0:
                c |= 1 << lat.link(x, y, 0)
            if direction == 1 and (y + offset) % 2 == 0:
                c |= 1 << lat.link(x, y, 1)
    return c


def staggered_covering(Lx: int, Ly: int, direction: int = 0) -> int:
    """Staggered state: no two dimers share a plaquette."""
    lat = DimerLattice(Lx, Ly)
    c = 0
    for y in range(Ly):
        for x in range(Lx):
            if direction == 0 and (x + y) % 2 == 0:
                c |= 1 << lat.link(x, y, 0)
            if direction == 1 and (x + y) % 2 == 0:
                c |= 1 << lat.link(x, y, 1)
    return c


@dataclass(frozen=True)
class DimerSectorBasis:
    """Coverings with a fixed flux, sorted by their integer encoding."""

    lattice: DimerLattice
    flux: FluxVector
    states: tuple[int, ...] = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self):
        return len(self.states)

    @cached_property
    def _rank(self) -> dict[int, int]:
        return {c: k for k, c in enumerate(self.states)}

    def __contains__(self, config) -> bool:
        return int(config) in self._rank

    def rank(self, config) -> int:
        try:
            return self._rank[int(config)]
        except KeyError:
            raise KeyError(f"configuration {int(config):#x} is not in flux sector "
                           f"{self.flux}") from None

    @cached_property
    def modes(self) -> np.ndarray:
        """Link occupations ``(dim, n_links)``, 0/1 ``uint8``."""
        return self.lattice.to_modes(self.states)

    @cached_property
    def flippable(self) -> np.ndarray:
        """Boolean ``(dim, n_plaquettes)``: plaquette carries a parallel pair."""
        out = np.zeros((self.dim, self.lattice.n_sites), dtype=bool)
        for k, c in enumerate(self.states):
            for p, (h, v) in enumerate(self.lattice.plaquettes):
                out[k, p] = c & h == h or c & v == v
        return out

    @cached_property
    def flip_graph(self) -> sp.csr_matrix:
        """Adjacency (0/1) of coverings related by one plaquette flip."""
        rows, cols = [], []
        pl = self.lattice.plaquettes
        for k, c in enumerate(self.states):
            for p in np.flatnonzero(self.flippable[k]):
                h, v = pl[p]
                t = c ^ h ^ v
                j = self._rank.get(t)
                if j is None:
                    raise AssertionError("plaquette flip left the flux sector")
                rows.append(k)
                cols.append(j)
        n = self.dim
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    @cached_property
    def components(self) -> np.ndarray:
        """Connected-component label of every state under plaquette flips."""
        _, labels = connected_components(self.flip_graph, directed=False)
        return labels

    @property
    def n_components(self) -> int:
        return int(self.components.max()) + 1

    def component_sizes(self) -> np.ndarray:
        return np.bincount(self.components)

    def basis_vector(self, config) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.rank(config)] = 1.0
        return v

    def uniform_vector(self, component: int | None = None) -> np.ndarray:
        mask = np.ones(self.dim, bool) if component is None else self.components == component
        v = np.zeros(self.dim, dtype=complex)
        v[mask] = 1.0 / np.sqrt(mask.sum())
        return v


def build_flux_sector(coverings, Lx: int, Ly: int, flux) -> DimerSectorBasis:
    """Select the coverings carrying ``flux`` and verify flip closure."""
    lat = DimerLattice(Lx, Ly)
    fx, fy = (Fraction(f) for f in flux)
    coverings = list(coverings)
    fl = _fluxes(lat, lat.to_modes(coverings))
    keep = (fl[:, 0] == fx) & (fl[:, 1] == fy)
    states = tuple(sorted(c for c, k in zip(coverings, keep) if k))
    if not states:
        raise EmptySectorError(f"flux sector ({fx}, {fy}) is empty on the "
                               f"{Lx}x{Ly} torus")
    basis = DimerSectorBasis(lattice=lat, flux=FluxVector(fx, fy), states=states)
    basis.flip_graph  # closure check
    return basis


def build_qdm_hamiltonian(basis: DimerSectorBasis, V: float) -> sp.csr_matrix:
    """Sparse QDM Hamiltonian: -1 per plaquette flip, +V per flippable plaquette."""
    A = basis.flip_graph
    diag = V * basis.flippable.sum(axis=1).astype(float)
    H = (sp.diags(diag) - A).tocsr()
    H.eliminate_zeros()
    H.sort_indices()
    return H


def translation_permutations(basis: DimerSectorBasis) -> list[np.ndarray]:
    """Rank permutations for every lattice translation that preserves the sector."""
    lat = basis.lattice
    modes = basis.modes
    perms = []
    for dy in range(lat.Ly):
        for dx in range(lat.Lx):
            target = np.array([lat.translate_link(l, dx, dy) for l in range(lat.n_links)])
            moved = np.zeros_like(modes)
            moved[:, target] = modes
            keys = lat.from_modes(moved)
            if all(k in basis for k in keys):
                perms.append(np.array([basis.rank(k) for k in keys]))
    return perms


def bfs_component(basis: DimerSectorBasis, config: int) -> list[int]:
    """Ranks reachable from ``config`` by plaquette flips."""
    A = basis.flip_graph
    start = basis.rank(config)
    seen = {start}
    queue = deque([start])
    while queue:
        k = queue.popleft()
        for j in A.indices[A.indptr[k]:A.indptr[k + 1]]:
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return sorted(seen)
