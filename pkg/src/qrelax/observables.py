"""Measured quantities: correlators, relaxation times, entanglement, maps.

Both models expose a ``modes`` matrix on their sector basis: one row per basis
configuration, one 0/1 column per site (lattice gas) or link (dimers).  Every
observable here is built from that matrix, so the same code serves both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .propagator import (
    Eigensystem,
    EnsembleState,
    diagonal_ensemble,
    lanczos_ground_state,
    trapezoid_weights,
)

__all__ = [
    "TimeSeries",
    "RelaxationTime",
    "Bipartition",
    "gas_autocorrelator",
    "gas_autocorrelators",
    "general_autocorrelator",
    "running_average",
    "infinite_temperature_average",
    "relaxation_time",
    "reduced_density_matrix",
    "entanglement_entropy",
    "entanglement_entropies",
    "projection_weight",
    "frobenius_distance",
    "frobenius_distance_series",
    "occupation_map",
    "dimer_autocorrelator",
    "dimer_autocorrelators",
    "flippability_map",
    "connected_dimer_correlator",
    "correlation_length",
    "lattice_distance_sq",
    "energy_scan",
    "second_difference",
]

ENTROPY_FLOOR = 1e-14


@dataclass
class TimeSeries:
    """Samples of an observable on a time grid.

    ``initial`` is the value at ``t = 0`` when known; it is not part of
    ``times``/``values``.
    """

    times: np.ndarray
    values: np.ndarray
    initial: float | None = None
    label: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")
        if np.isnan(self.values).any():
            raise ValueError(f"NaN in time series {self.label!r}")

    def __len__(self):
        return len(self.times)

    def at(self, t: float) -> float:
        """Value interpolated linearly in log time."""
        return float(np.interp(np.log(t), np.log(self.times), self.values))


class RelaxationTime(NamedTuple):
    tau: float
    censored: bool


# -- correlators -------------------------------------------------------------

def _filling_factor(N: int, L: int) -> float:
    phi = N / L
    if phi <= 0 or phi >= 1:
        raise ValueError(f"filling {N}/{L} makes the correlator normalisation singular")
    return phi


def _as_basis_rank(basis, psi0) -> int:
    """Rank of a configuration given as an integer or a basis vector."""
    if isinstance(psi0, (int, np.integer)):
        return basis.rank(int(psi0))
    v = np.asarray(psi0)
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if len(nz) != 1 or not np.isclose(abs(v[nz[0]]), 1.0):
        raise ValueError("initial state must be a single configuration")
    return int(nz[0])


def _normalise_gas(raw, L, N):
    phi = _filling_factor(N, L)
    return raw / L / (phi * (1 - phi)) - phi / (1 - phi)


def gas_autocorrelator(prop, basis, psi0, times) -> TimeSeries:
    """Normalised density autocorrelator for a product initial state.

    For a configuration ``s`` the two-time correlator reduces to
    ``sum_i n_i(s) <n_i(t)>``.
    """
    r = _as_basis_rank(basis, psi0)
    times = np.asarray(times, dtype=float)
    v0 = np.zeros(basis.dim, dtype=complex)
    v0[r] = 1.0
    states = prop.evolve(v0, times)
    overlap = basis.modes.astype(float) @ basis.modes[r].astype(float)
    raw = (np.abs(states) ** 2) @ overlap
    return TimeSeries(times, _normalise_gas(raw, basis.L, basis.N),
                      initial=float(_normalise_gas(basis.N, basis.L, basis.N)),
                      label=f"c[{int(basis.states[r]):#x}]")


def _overlap_series(eig: Eigensystem, modes: np.ndarray, ranks, times,
                    chunk: int = 256) -> np.ndarray:
    """``sum_m n_m(s) <n_m(t)>_s`` for many configurations ``s`` at once.

    Returns an array ``(len(ranks), len(times))``.
    """
    ranks = np.asarray(ranks)
    X = modes.astype(float)
    out = np.empty((len(ranks), len(times)))
    for lo in range(0, len(ranks), chunk):
        rs = ranks[lo:lo + chunk]
        E0 = np.zeros((eig.dim, len(rs)), dtype=complex)
        E0[rs, np.arange(len(rs))] = 1.0
        coeffs = eig.coefficients(E0)
        O = X @ X[rs].T
        for k, t in enumerate(times):
            psi = eig.evolve_columns(coeffs, t)
            out[lo:lo + len(rs), k] = np.einsum("cs,cs->s", np.abs(psi) ** 2, O)
    return out


def gas_autocorrelators(eig: Eigensystem, basis, ranks, times) -> list[TimeSeries]:
    """Batch version of :func:`gas_autocorrelator` for many configurations."""
    times = np.asarray(times, dtype=float)
    raw = _overlap_series(eig, basis.modes, ranks, times)
    c0 = float(_normalise_gas(basis.N, basis.L, basis.N))
    return [TimeSeries(times, _normalise_gas(row, basis.L, basis.N), initial=c0,
                       label=f"c[{int(basis.states[r]):#x}]")
            for r, row in zip(ranks, raw)]


def general_autocorrelator(prop, basis, psi0, times) -> TimeSeries:
    """Density autocorrelator for an arbitrary normalised initial state.

    Uses ``Re <psi0| n_i(t) n_i(0) |psi0>``, obtained by evolving ``psi0``
    and every ``n_i psi0``.
    """
    times = np.asarray(times, dtype=float)
    psi0 = np.asarray(psi0, dtype=complex)
    X = basis.modes.astype(float)
    psi_t = prop.evolve(psi0, times)
    raw = np.zeros(len(times))
    for i in range(X.shape[1]):
        phi_t = prop.evolve(X[:, i] * psi0, times)
        raw += np.real(np.einsum("tc,tc->t", psi_t.conj() * X[:, i], phi_t))
    raw0 = float(np.real(np.vdot(psi0, (X.sum(axis=1)) * psi0)))
    return TimeSeries(times, _normalise_gas(raw, basis.L, basis.N),
                      initial=float(_normalise_gas(raw0, basis.L, basis.N)), label="c[general]")


def running_average(series: TimeSeries) -> TimeSeries:
    """Time average ``t**-1 int_0^t c(t') dt'`` by the trapezoidal rule.

    The integrand is anchored at ``(0, series.initial)``, falling back to the
    first sample when the initial value is unknown.
    """
    t, c = series.times, series.values
    c0 = series.initial if series.initial is not None else c[0]
    tt = np.concatenate([[0.0], t])
    cc = np.concatenate([[c0], c])
    cum = np.concatenate([[0.0], np.cumsum(np.diff(tt) * (cc[1:] + cc[:-1]) / 2)])
    return TimeSeries(t, cum[1:] / t, initial=c0, label=f"avg {series.label}".strip())


def infinite_temperature_average(collection: Sequence[TimeSeries],
                                 weights=None) -> TimeSeries:
    """Mean over initial states (optionally weighted, e.g. by orbit size)."""
    collection = list(collection)
    if not collection:
        raise ValueError("cannot average an empty collection")
    t = collection[0].times
    for s in collection[1:]:
        if s.times.shape != t.shape or not np.allclose(s.times, t, rtol=1e-14):
            raise ValueError("all series must share one time grid")
    w = np.ones(len(collection)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    vals = np.array([s.values for s in collection])
    inits = [s.initial for s in collection]
    init = None if any(i is None for i in inits) else float(w @ np.array(inits))
    return TimeSeries(t, w @ vals, initial=init, label="T=inf average")


def relaxation_time(series: TimeSeries, eps: float) -> RelaxationTime:
    """First time the series reaches ``eps``, interpolated linearly in ``log t``.

    If the series never gets there the final grid time is returned with
    ``censored=True``.
    """
    t, v = series.times, series.values
    below = np.flatnonzero(v <= eps)
    if len(below) == 0:
        return RelaxationTime(float(t[-1]), True)
    k = int(below[0])
    if k == 0:
        return RelaxationTime(float(t[0]), False)
    v1, v2 = v[k - 1], v[k]
    frac = (v1 - eps) / (v1 - v2)
    lt = np.log(t[k - 1]) + frac * (np.log(t[k]) - np.log(t[k - 1]))
    return RelaxationTime(float(np.exp(lt)), False)


# -- bipartitions and entanglement -------------------------------------------

@dataclass
class Bipartition:
    """Split of the modes (sites or links) into ``region`` and its complement."""

    region: tuple[int, ...]
    n_modes: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.region = tuple(sorted({int(i) % self.n_modes for i in self.region}))
        if not self.region or len(self.region) == self.n_modes:
            raise ValueError("both sides of a bipartition must be nonempty")

    @classmethod
    def window(cls, start: int, length: int, n_modes: int) -> "Bipartition":
        """Periodic window of ``length`` consecutive sites starting at ``start``."""
        return cls(tuple((start + k) % n_modes for k in range(length)), n_modes)

    @property
    def complement(self) -> tuple[int, ...]:
        a = set(self.region)
        return tuple(i for i in range(self.n_modes) if i not in a)

    def swapped(self) -> "Bipartition":
        return Bipartition(self.complement, self.n_modes)

    def split(self, modes: np.ndarray):
        """Row indices into (A-pattern, B-pattern) tables; cached per basis."""
        key = id(modes)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is modes:
            return hit[1]
        pa, ia = np.unique(np.packbits(modes[:, list(self.region)], axis=1),
                           axis=0, return_inverse=True)
        pb, ib = np.unique(np.packbits(modes[:, list(self.complement)], axis=1),
                           axis=0, return_inverse=True)
        res = (ia.ravel(), ib.ravel(), len(pa), len(pb))
        self._cache[key] = (modes, res)
        return res


def _coefficient_matrix(psi, part: Bipartition, basis) -> np.ndarray:
    ia, ib, na, nb = part.split(basis.modes)
    M = np.zeros((na, nb), dtype=complex)
    M[ia, ib] = psi
    return M


def reduced_density_matrix(psi, part: Bipartition, basis) -> np.ndarray:
    """``rho_A`` over the region patterns that occur in the sector."""
    M = _coefficient_matrix(np.asarray(psi, dtype=complex), part, basis)
    return M @ M.conj().T


def _vn_entropy(p: np.ndarray) -> float:
    p = p[p > ENTROPY_FLOOR]
    return float(-(p * np.log(p)).sum())


def entanglement_entropy(psi, part: Bipartition, basis) -> float:
    """Von Neumann entropy of the region; computed from the smaller Gram matrix."""
    M = _coefficient_matrix(np.asarray(psi, dtype=complex), part, basis)
    G = M @ M.conj().T if M.shape[0] <= M.shape[1] else M.conj().T @ M
    S = _vn_entropy(np.linalg.eigvalsh(G))
    bound = np.log(min(M.shape))
    assert S <= bound + 1e-9, f"entropy {S} above the dimension bound {bound}"
    return S


def entanglement_entropies(psi, part: Bipartition, basis) -> tuple[float, float]:
    """``(S_A, S_B)`` from the two reduced density matrices separately."""
    psi = np.asarray(psi, dtype=complex)
    rho_a = reduced_density_matrix(psi, part, basis)
    rho_b = reduced_density_matrix(psi, part.swapped(), basis)
    return _vn_entropy(np.linalg.eigvalsh(rho_a)), _vn_entropy(np.linalg.eigvalsh(rho_b))


def projection_weight(psi, basis, region, frozen: int):
    """Weight of ``psi`` on configurations whose complement of ``region`` equals ``frozen``.

    ``frozen`` is a bitmask over modes; only its bits outside ``region`` are
    read.  Accepts a single state or a stack ``(n, dim)``.
    """
    modes = basis.modes
    n = modes.shape[1]
    reg = {int(i) % n for i in region}
    comp = [i for i in range(n) if i not in reg]
    target = np.array([(int(frozen) >> i) & 1 for i in comp], dtype=modes.dtype)
    mask = np.all(modes[:, comp] == target, axis=1)
    p = np.abs(np.asarray(psi)) ** 2
    return p[..., mask].sum(axis=-1)


def frobenius_distance(rho: EnsembleState, sigma: EnsembleState) -> float:
    """Normalised Frobenius distance ``sqrt(Tr(rho-sigma)^2 / (Tr rho^2 + Tr sigma^2))``."""
    rr, ss, rs = rho.purity(), sigma.purity(), rho.overlap(sigma)
    return float(np.sqrt(max(rr + ss - 2 * rs, 0.0) / (rr + ss)))


def frobenius_distance_series(rho_states, sigma_states, times,
                              rho_initial=None, sigma_initial=None) -> np.ndarray:
    """Distance between the two time-integrated ensembles at every sample time.

    Pairwise overlaps are computed once, so the cost is one Gram matrix per
    pair of trajectories rather than one per time.
    """
    R = np.atleast_2d(np.asarray(rho_states, dtype=complex))
    S = np.atleast_2d(np.asarray(sigma_states, dtype=complex))
    t = np.asarray(times, dtype=float)
    if (rho_initial is None) != (sigma_initial is None):
        raise ValueError("give both initial states or neither")
    if rho_initial is not None:
        R = np.vstack([np.asarray(rho_initial, dtype=complex)[None], R])
        S = np.vstack([np.asarray(sigma_initial, dtype=complex)[None], S])
        t = np.concatenate([[0.0], t])
    Grr = np.abs(R.conj() @ R.T) ** 2
    Gss = np.abs(S.conj() @ S.T) ** 2
    Grs = np.abs(R.conj() @ S.T) ** 2
    start = 1 if rho_initial is not None else 0
    out = np.empty(len(t) - start)
    for k in range(start, len(t)):
        w = trapezoid_weights(t[:k + 1])
        w = w / w.sum() if w.sum() > 0 else np.ones(k + 1) / (k + 1)
        rr = w @ Grr[:k + 1, :k + 1] @ w
        ss = w @ Gss[:k + 1, :k + 1] @ w
        rs = w @ Grs[:k + 1, :k + 1] @ w
        out[k - start] = np.sqrt(max(rr + ss - 2 * rs, 0.0) / (rr + ss))
    return out


def occupation_map(psi, basis) -> np.ndarray:
    """``<n_m>`` for every mode (site or link); works on stacks of states."""
    return (np.abs(np.asarray(psi)) ** 2) @ basis.modes.astype(float)


# -- dimer observables -------------------------------------------------------

def _normalise_dimer(raw, c0, cinf):
    return (raw - cinf) / (c0 - cinf)


def _dimer_long_time(eig, basis, r) -> float:
    X = basis.modes.astype(float)
    v0 = np.zeros(basis.dim, dtype=complex)
    v0[r] = 1.0
    return diagonal_ensemble(eig, v0, X @ X[r])


def dimer_autocorrelator(eig: Eigensystem, basis, psi0, times) -> TimeSeries:
    """Dimer autocorrelator rescaled to 1 at ``t = 0`` and 0 at long times."""
    r = _as_basis_rank(basis, psi0)
    return dimer_autocorrelators(eig, basis, [r], times)[0]


def dimer_autocorrelators(eig: Eigensystem, basis, ranks, times) -> list[TimeSeries]:
    times = np.asarray(times, dtype=float)
    c0 = basis.lattice.n_sites / 2
    cinf = np.array([_dimer_long_time(eig, basis, r) for r in ranks])
    frozen = np.abs(c0 - cinf) < 1e-9 * c0
    if frozen.any():
        bad = [hex(basis.states[r]) for r, f in zip(ranks, frozen) if f]
        raise ValueError(f"frozen configuration(s) {bad}: correlator cannot be normalised")
    raw = _overlap_series(eig, basis.modes, ranks, times)
    return [TimeSeries(times, _normalise_dimer(row, c0, ci), initial=1.0,
                       label=f"c[{basis.states[r]:#x}]")
            for r, row, ci in zip(ranks, raw, cinf)]


def flippability_map(psi, basis) -> np.ndarray:
    """Probability that each plaquette is flippable."""
    return (np.abs(np.asarray(psi)) ** 2) @ basis.flippable.astype(float)


def connected_dimer_correlator(psi, basis) -> np.ndarray:
    """Equal-time ``G_c(r, r')`` summed over the two link directions."""
    p = np.abs(np.asarray(psi)) ** 2
    X = basis.modes.astype(float)
    G = np.zeros((basis.lattice.n_sites,) * 2)
    for mu in (0, 1):
        Xm = X[:, mu::2]
        m = p @ Xm
        G += Xm.T @ (p[:, None] * Xm) - np.outer(m, m)
    return G


def lattice_distance_sq(dx, dy, Lx: int, Ly: int):
    """Periodic lattice distance ``sum_j L_j^2/pi^2 sin^2(pi r_j / L_j)``."""
    return ((Lx / np.pi) ** 2 * np.sin(np.pi * np.asarray(dx) / Lx) ** 2
            + (Ly / np.pi) ** 2 * np.sin(np.pi * np.asarray(dy) / Ly) ** 2)


def correlation_length(psi, basis) -> tuple[float, bool]:
    """Dimer correlation length ``xi``; flag is True when ``G_c`` vanishes."""
    lat = basis.lattice
    G = connected_dimer_correlator(psi, basis)
    xy = np.array([lat.coords(s) for s in range(lat.n_sites)])
    dx = xy[:, None, 0] - xy[None, :, 0]
    dy = xy[:, None, 1] - xy[None, :, 1]
    D2 = lattice_distance_sq(dx, dy, lat.Lx, lat.Ly)
    G2 = G ** 2
    den = G2.sum()
    if den < 1e-28:
        return 0.0, True
    return float(np.sqrt((D2 * G2).sum() / den)), False


# -- ground-state scan -------------------------------------------------------

def second_difference(x, y) -> np.ndarray:
    """Centred second difference on a uniform grid, NaN at the end points."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    h = np.diff(x)
    if not np.allclose(h, h[0], rtol=1e-9):
        raise ValueError("second difference needs a uniform grid")
    out = np.full(len(y), np.nan)
    out[1:-1] = (y[2:] - 2 * y[1:-1] + y[:-2]) / h[0] ** 2
    return out


def energy_scan(sizes, lams, vacancies: int = 4, tol: float = 1e-10) -> dict:
    """Ground-state energy ``E0(lam)`` of the ergodic sector for each size.

    Returns ``{"lams", "sizes", "E0": (n_sizes, n_lams), "d2": same shape}``.
    """
    from .constrained_gas import (build_gas_hamiltonian, build_strip, default_seed,
                                  enumerate_sector, translation_permutation)

    lams = np.asarray(lams, dtype=float)
    E0 = np.empty((len(sizes), len(lams)))
    for a, L in enumerate(sizes):
        N = L - vacancies
        basis = enumerate_sector(build_strip(L), N, default_seed(L, N))
        perms = [translation_permutation(basis)]
        v = None
        for b, lam in enumerate(lams):
            E0[a, b], v = lanczos_ground_state(build_gas_hamiltonian(basis, lam), tol=tol,
                                               v0=v, perms=perms)
    d2 = np.array([second_difference(lams, row) for row in E0])
    return {"lams": lams, "sizes": list(sizes), "E0": E0, "d2": d2}
