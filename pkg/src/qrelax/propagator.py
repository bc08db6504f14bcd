"""Spectral and Krylov time evolution for real symmetric sector Hamiltonians.

Two propagation paths share one duck-typed interface, ``evolve(psi0, times)``:

* :class:`Eigensystem` stores the spectrum either densely or split into
  translation (momentum) blocks and evolves exactly at arbitrary times.
* :class:`KrylovPropagator` steps a state through a time grid with short
  Lanczos recurrences, for sectors beyond the dense cap.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

__all__ = [
    "DenseCapExceeded",
    "KrylovConvergenceError",
    "dense_cap",
    "log_time_grid",
    "SpectralBlock",
    "Eigensystem",
    "full_diagonalize",
    "momentum_diagonalize",
    "diagonalize",
    "evolve_spectral",
    "krylov_step",
    "KrylovPropagator",
    "lanczos_ground_state",
    "diagonal_ensemble",
    "EnsembleState",
    "trapezoid_weights",
    "time_integrated_ensemble",
    "orbits",
    "symmetric_projector",
]

DEFAULT_DENSE_CAP = 20_000


class DenseCapExceeded(RuntimeError):
    """Sector too large for dense diagonalisation; use the Krylov path."""


class KrylovConvergenceError(RuntimeError):
    pass


def dense_cap() -> int:
    """Largest dimension diagonalised densely (``QRELAX_DENSE_CAP`` overrides)."""
    return int(os.environ.get("QRELAX_DENSE_CAP", DEFAULT_DENSE_CAP))


def log_time_grid(t_min: float = 1e-1, t_max: float = 1e8, per_decade: int = 24) -> np.ndarray:
    """Log-spaced times from ``t_min`` to ``t_max`` inclusive."""
    if not 0 < t_min < t_max:
        raise ValueError("need 0 < t_min < t_max")
    decades = np.log10(t_max / t_min)
    n = int(round(decades * per_decade)) + 1
    return np.logspace(np.log10(t_min), np.log10(t_max), n)


@dataclass(frozen=True)
class SpectralBlock:
    """Eigenpairs of one symmetry block.

    ``embedding`` is a ``(dim, d)`` isometry from block coordinates into the
    configuration basis, or ``None`` when the block is the whole space.
    """

    energies: np.ndarray
    vectors: np.ndarray
    embedding: sp.csr_matrix | None = None
    label: int = 0

    @property
    def size(self) -> int:
        return len(self.energies)

    def to_block(self, psi: np.ndarray) -> np.ndarray:
        if self.embedding is None:
            return psi
        return self.embedding.conj().T @ psi

    def from_block(self, x: np.ndarray) -> np.ndarray:
        if self.embedding is None:
            return x
        return self.embedding @ x

    def full_vectors(self) -> np.ndarray:
        return self.from_block(self.vectors)


@dataclass
class Eigensystem:
    """Complete spectral decomposition of a sector Hamiltonian."""

    dim: int
    blocks: list[SpectralBlock]
    norm: float = 1.0

    def __post_init__(self):
        if sum(b.size for b in self.blocks) != self.dim:
            raise ValueError("blocks do not span the space")

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.concatenate([b.energies for b in self.blocks]))

    @cached_property
    def eigenvectors(self) -> np.ndarray:
        """Dense ``(dim, dim)`` eigenvector matrix, columns ordered as ``eigenvalues``."""
        E = np.concatenate([b.energies for b in self.blocks])
        Q = np.concatenate([b.full_vectors() for b in self.blocks], axis=1)
        return Q[:, np.argsort(E, kind="stable")]

    @property
    def is_real(self) -> bool:
        return len(self.blocks) == 1 and not np.iscomplexobj(self.blocks[0].vectors)

    def coefficients(self, psi: np.ndarray) -> list[np.ndarray]:
        """Eigenbasis amplitudes, one array per block (leading axis = eigenvalue)."""
        return [b.vectors.conj().T @ b.to_block(psi) for b in self.blocks]

    def evolve(self, psi0: np.ndarray, times) -> np.ndarray:
        """States ``exp(-iHt) psi0`` for every ``t``, shape ``(len(times), dim)``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        psi0 = np.asarray(psi0, dtype=complex)
        out = np.zeros((len(times), self.dim), dtype=complex)
        for b, a in zip(self.blocks, self.coefficients(psi0)):
            ph = np.exp(-1j * np.outer(times, b.energies)) * a
            y = ph @ b.vectors.T
            out += y if b.embedding is None else (b.embedding @ y.T).T
        out[times == 0] = psi0
        return out

    def evolve_columns(self, coeffs: list[np.ndarray], t: float) -> np.ndarray:
        """Evolve many states at once from precomputed ``coefficients``.

        Returns ``(dim, n_states)``.
        """
        out = None
        for b, a in zip(self.blocks, coeffs):
            y = b.vectors @ (np.exp(-1j * t * b.energies)[:, None] * a)
            y = b.from_block(y)
            out = y if out is None else out + y
        return out

    def degenerate_groups(self, tol: float = 1e-10) -> list[list[tuple[int, int]]]:
        """Groups of ``(block, index)`` whose energies differ by < ``tol * norm``."""
        E = np.concatenate([b.energies for b in self.blocks])
        owner = np.concatenate([np.full(b.size, k) for k, b in enumerate(self.blocks)])
        local = np.concatenate([np.arange(b.size) for b in self.blocks])
        order = np.argsort(E, kind="stable")
        gaps = np.diff(E[order]) >= tol * self.norm
        starts = np.concatenate([[0], np.flatnonzero(gaps) + 1, [len(E)]])
        return [[(int(owner[i]), int(local[i])) for i in order[a:b]]
                for a, b in zip(starts[:-1], starts[1:])]


def _matrix_norm(H) -> float:
    """Max-abs entry; a cheap stand-in for the operator scale."""
    data = H.data if sp.issparse(H) else np.asarray(H).ravel()
    return float(np.max(np.abs(data))) if data.size else 1.0


def full_diagonalize(H, cap: int | None = None) -> Eigensystem:
    """Dense eigendecomposition of a real symmetric matrix."""
    dim = H.shape[0]
    cap = dense_cap() if cap is None else cap
    if dim > cap:
        raise DenseCapExceeded(f"dimension {dim} exceeds the dense cap {cap}")
    A = H.toarray() if sp.issparse(H) else np.asarray(H, dtype=float)
    E, Q = np.linalg.eigh(A)
    return Eigensystem(dim=dim, blocks=[SpectralBlock(E, Q)], norm=max(_matrix_norm(H), 1e-300))


def orbits(perms, dim: int) -> list[np.ndarray]:
    """Orbits of ``range(dim)`` under the group generated by ``perms``.

    Each orbit is returned sorted; orbits are ordered by their smallest member.
    """
    perms = [np.asarray(p) for p in perms]
    label = np.full(dim, -1)
    out = []
    for i in range(dim):
        if label[i] >= 0:
            continue
        members = {i}
        frontier = [i]
        while frontier:
            j = frontier.pop()
            for p in perms:
                k = int(p[j])
                if k not in members:
                    members.add(k)
                    frontier.append(k)
        orb = np.array(sorted(members))
        label[orb] = len(out)
        out.append(orb)
    return out


def momentum_diagonalize(H, perm: np.ndarray, cap: int | None = None) -> Eigensystem:
    """Diagonalise ``H`` block by block in the eigenbases of a cyclic symmetry.

    ``perm[i]`` is the index of the configuration obtained by applying the
    symmetry to configuration ``i``; ``H`` must commute with it.
    """
    perm = np.asarray(perm)
    dim = H.shape[0]
    H = sp.csr_matrix(H)
    P = sp.csr_matrix((np.ones(dim), (perm, np.arange(dim))), shape=(dim, dim))
    if abs(P @ H - H @ P).max() > 0:
        raise ValueError("Hamiltonian does not commute with the symmetry")
    # orbit of each representative, in application order
    seen = np.zeros(dim, bool)
    cycles = []
    for r in range(dim):
        if seen[r]:
            continue
        cyc = [r]
        j = perm[r]
        while j != r:
            cyc.append(int(j))
            j = perm[j]
        seen[cyc] = True
        cycles.append(np.array(cyc))
    n = int(np.lcm.reduce([len(c) for c in cycles]))
    cap = dense_cap() if cap is None else cap
    blocks = []
    for k in range(n):
        rows, cols, vals = [], [], []
        col = 0
        for cyc in cycles:
            R = len(cyc)
            if (k * R) % n:
                continue
            l = np.arange(R)
            rows.append(cyc)
            cols.append(np.full(R, col))
            vals.append(np.exp(-2j * np.pi * k * l / n) / np.sqrt(R))
            col += 1
        if col == 0:
            continue
        if col > cap:
            raise DenseCapExceeded(f"momentum block {k} has dimension {col} > cap {cap}")
        emb = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(dim, col))
        Hk = (emb.conj().T @ H @ emb).toarray()
        Hk = 0.5 * (Hk + Hk.conj().T)
        E, U = np.linalg.eigh(Hk)
        blocks.append(SpectralBlock(E, U, emb, label=k))
    return Eigensystem(dim=dim, blocks=blocks, norm=max(_matrix_norm(H), 1e-300))


def diagonalize(H, perm: np.ndarray | None = None, cap: int | None = None) -> Eigensystem:
    """Momentum-block diagonalisation when a symmetry is given, dense otherwise."""
    if perm is None:
        return full_diagonalize(H, cap)
    return momentum_diagonalize(H, perm, cap)


def evolve_spectral(eig: Eigensystem, psi0: np.ndarray, times) -> np.ndarray:
    return eig.evolve(psi0, times)


def _lanczos(H, v: np.ndarray, m: int):
    """Orthonormal Krylov basis with full reorthogonalisation.

    Returns ``(V, alpha, beta)`` with ``V`` of shape ``(dim, j)``, ``alpha`` of
    length ``j`` and ``beta`` of length ``j`` (the last entry couples to the
    first discarded vector; zero on invariant-subspace breakdown).
    """
    dim = v.shape[0]
    m = min(m, dim)
    V = np.zeros((dim, m), dtype=np.result_type(v, H.dtype, float))
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[:, 0] = v / np.linalg.norm(v)
    for j in range(m):
        w = H @ V[:, j]
        alpha[j] = np.real(np.vdot(V[:, j], w))
        w = w - V[:, :j + 1] @ (V[:, :j + 1].conj().T @ w)
        w = w - V[:, :j + 1] @ (V[:, :j + 1].conj().T @ w)
        b = np.linalg.norm(w)
        beta[j] = b
        if j + 1 == m:
            break
        if b < 1e-13 * max(1.0, abs(alpha[j])):
            beta[j] = 0.0
            return V[:, :j + 1], alpha[:j + 1], beta[:j + 1]
        V[:, j + 1] = w / b
    return V, alpha, beta


def _tridiag_expm_e1(alpha, beta, dt):
    j = len(alpha)
    if j == 1:
        return np.array([np.exp(-1j * dt * alpha[0])])
    theta, S = sla.eigh_tridiagonal(alpha, beta[:j - 1])
    return S @ (np.exp(-1j * dt * theta) * S[0].conj())


def krylov_step(H, psi: np.ndarray, dt: float, m: int = 30, tol: float = 1e-12,
                max_halvings: int = 30) -> np.ndarray:
    """Approximate ``exp(-i H dt) psi`` in a Lanczos subspace of size ``m``.

    The a posteriori error estimate ``beta_m |(exp(-i T dt) e1)_m|`` must stay
    below ``tol``; otherwise the step is split into two halves, recursively.
    """
    psi = np.asarray(psi, dtype=complex)
    if dt == 0:
        return psi.copy()
    nrm = np.linalg.norm(psi)
    V, alpha, beta = _lanczos(H, psi / nrm, m)

    def advance(depth, tau, vec, basis=None):
        if basis is None:
            basis = _lanczos(H, vec / np.linalg.norm(vec), m)
        Vb, a, b = basis
        y = _tridiag_expm_e1(a, b, tau)
        err = abs(b[-1] * y[-1])
        if err <= tol:
            return np.linalg.norm(vec) * (Vb @ y)
        if depth >= max_halvings:
            raise KrylovConvergenceError(
                f"Krylov step dt={dt} failed after {depth} halvings "
                f"(m={m}, last error estimate {err:.3e}, tol {tol:.1e})")
        half = advance(depth + 1, tau / 2, vec, basis)
        return advance(depth + 1, tau / 2, half)

    return advance(0, dt, psi, (V, alpha, beta))


class KrylovPropagator:
    """Sequential Krylov evolution through an increasing set of times."""

    def __init__(self, H, m: int = 30, tol: float = 1e-12, max_step: float | None = None):
        self.H = sp.csr_matrix(H)
        self.m = m
        self.tol = tol
        self.max_step = max_step
        self.dim = self.H.shape[0]

    def evolve(self, psi0: np.ndarray, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(np.diff(times) < 0) or times[0] < 0:
            raise ValueError("times must be nonnegative and increasing")
        out = np.empty((len(times), self.dim), dtype=complex)
        psi = np.asarray(psi0, dtype=complex).copy()
        t = 0.0
        for k, target in enumerate(times):
            while t < target:
                dt = target - t
                if self.max_step is not None:
                    dt = min(dt, self.max_step)
                psi = krylov_step(self.H, psi, dt, self.m, self.tol)
                psi /= np.linalg.norm(psi)
                t += dt
            out[k] = psi
        return out


def symmetric_projector(perms, dim: int) -> sp.csr_matrix:
    """Isometry onto the states invariant under ``perms`` (one column per orbit)."""
    orbs = orbits(perms, dim)
    rows = np.concatenate(orbs)
    cols = np.repeat(np.arange(len(orbs)), [len(o) for o in orbs])
    vals = np.concatenate([np.full(len(o), 1 / np.sqrt(len(o))) for o in orbs])
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, len(orbs)))


def lanczos_ground_state(H, tol: float = 1e-10, m: int = 60, max_restarts: int = 500,
                         v0: np.ndarray | None = None, perms=None):
    """Lowest eigenpair by explicitly restarted Lanczos.

    Each restart begins from the current lowest Ritz vector; iteration stops
    once ``||H v - E v|| <= tol``.  The returned vector is real for real ``H``
    and has a nonnegative component sum.

    With ``perms`` (symmetries of ``H``) the search runs in the invariant
    subspace.  That is where the ground state lives whenever the off-diagonal
    elements are nonpositive and the sector is connected, and it removes the
    nearly degenerate partners at other momenta that stall a single-vector
    restart.
    """
    H = sp.csr_matrix(H)
    if perms:
        P = symmetric_projector(perms, H.shape[0])
        w0 = None if v0 is None else P.T @ np.asarray(v0, dtype=float)
        E, w = lanczos_ground_state((P.T @ H @ P).tocsr(), tol, m, max_restarts, w0)
        return E, P @ w
    dim = H.shape[0]
    if v0 is None:
        rng = np.random.default_rng(12345)
        v0 = 1.0 + 0.1 * rng.standard_normal(dim)
    v = np.asarray(v0, dtype=float)
    v /= np.linalg.norm(v)
    res = np.inf
    for _ in range(max_restarts):
        V, a, b = _lanczos(H, v, m)
        j = len(a)
        if j == 1:
            theta, S = np.array([a[0]]), np.ones((1, 1))
        else:
            theta, S = sla.eigh_tridiagonal(a, b[:j - 1])
        v = V @ S[:, 0]
        v /= np.linalg.norm(v)
        E = float(np.real(np.vdot(v, H @ v)))
        res = np.linalg.norm(H @ v - E * v)
        if res <= tol:
            if v.sum() < 0:
                v = -v
            return E, v
    raise KrylovConvergenceError(f"Lanczos did not converge: residual {res:.3e} > {tol:.1e} "
                                 f"after {max_restarts} restarts of size {m}")


def diagonal_ensemble(eig: Eigensystem, psi0: np.ndarray, observable: np.ndarray,
                      tol: float = 1e-10):
    """Infinite-time average of a configuration-diagonal observable.

    ``observable`` holds diagonal entries, shape ``(dim,)`` or ``(dim, k)``.
    Degenerate eigenvalues (gap below ``tol * ||H||``) are treated together
    through the projector onto their eigenspace.
    """
    A = np.asarray(observable, dtype=float)
    single = A.ndim == 1
    A = A.reshape(eig.dim, -1)
    psi0 = np.asarray(psi0, dtype=complex)
    groups = eig.degenerate_groups(tol)
    gid = {}
    for g, members in enumerate(groups):
        if len(members) > 1:
            for m in members:
                gid[m] = g
    remaining = {g: len(groups[g]) for g in set(gid.values())}
    open_groups: dict[int, np.ndarray] = {}
    total = np.zeros(A.shape[1])
    # pair blocks k and n-k so cross-block degenerate groups close quickly
    n = len(eig.blocks)
    order = []
    for k in range(n):
        for c in (k, (n - k) % n):
            if c not in order:
                order.append(c)
    coeffs = eig.coefficients(psi0)
    for bk in order:
        b = eig.blocks[bk]
        F = b.from_block(b.vectors * coeffs[bk])
        single_cols = np.array([(bk, i) not in gid for i in range(b.size)], dtype=bool)
        if single_cols.any():
            total += (np.abs(F[:, single_cols]) ** 2).sum(axis=1) @ A
        for i in np.flatnonzero(~single_cols):
            g = gid[(bk, int(i))]
            open_groups[g] = open_groups.get(g, 0) + F[:, i]
            remaining[g] -= 1
            if remaining[g] == 0:
                total += np.abs(open_groups.pop(g)) ** 2 @ A
    return float(total[0]) if single else total


@dataclass
class EnsembleState:
    """Mixed state ``sum_k w_k |psi_k><psi_k|`` kept as its pure components."""

    weights: np.ndarray
    states: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=complex))
        if len(self.weights) != len(self.states):
            raise ValueError("one weight per state required")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-12):
            raise ValueError("weights must sum to 1")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def overlap(self, other: "EnsembleState") -> float:
        """``Tr[rho sigma]`` from the pairwise overlap matrix."""
        G = np.abs(self.states.conj() @ other.states.T) ** 2
        return float(self.weights @ G @ other.weights)

    def purity(self) -> float:
        return self.overlap(self)

    def to_dense(self) -> np.ndarray:
        return (self.states.T * self.weights) @ self.states.conj()


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    """Quadrature weights for ``int_0^T f dt`` from samples at ``times``.

    ``f`` is held at its first sample on ``[0, times[0]]`` and interpolated
    linearly between samples; ``T = times[-1]``.
    """
    t = np.asarray(times, dtype=float)
    w = np.zeros(len(t))
    w[0] = t[0]
    if len(t) > 1:
        dt = np.diff(t)
        w[:-1] += dt / 2
        w[1:] += dt / 2
    return w


def time_integrated_ensemble(states: np.ndarray, times, t_max: float,
                             initial: np.ndarray | None = None) -> EnsembleState:
    """Ensemble representing ``t_max**-1 int_0^t_max rho(t) dt``.

    ``states[k]`` is the pure state at ``times[k]``; ``initial`` (if given) is
    the state at ``t = 0``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=complex))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if len(states) != len(times):
        raise ValueError(f"{len(states)} states for {len(times)} sample times")
    if len(states) == 1 and initial is None:
        return EnsembleState(np.ones(1), states)
    keep = times <= t_max * (1 + 1e-12)
    if not keep.any():
        raise ValueError(f"t_max={t_max} precedes the first sample at {times[0]}")
    times, states = times[keep], states[keep]
    if initial is not None:
        times = np.concatenate([[0.0], times])
        states = np.vstack([np.asarray(initial, dtype=complex)[None], states])
    w = trapezoid_weights(times)
    if w.sum() == 0:
        w = np.ones(len(w))
    return EnsembleState(w / w.sum(), states)
