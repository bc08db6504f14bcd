"""Acceptance checks for the physics reproduced by the package.

Each test records a one-line verdict (see ``conftest.py``) that is printed in
the terminal summary.  The heavy inputs are computed once per module:
the L=24 lattice gas (momentum blocks, about 3 s per coupling) and the
6x6 flux-(1,1) dimer sector (dense, about 5 s per coupling).
"""

from functools import lru_cache

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.stats import spearmanr

from oracles import count_matchings, dense_gas_hamiltonian, dense_qdm_hamiltonian
from qrelax.constrained_gas import (
    build_gas_hamiltonian,
    build_strip,
    default_seed,
    enumerate_sector,
    occupation,
    restrict_hamiltonian,
    translation_permutation,
)
from qrelax.harness import RunConfig, run_experiment
from qrelax.observables import (
    Bipartition,
    TimeSeries,
    correlation_length,
    dimer_autocorrelators,
    energy_scan,
    entanglement_entropies,
    entanglement_entropy,
    frobenius_distance_series,
    gas_autocorrelator,
    gas_autocorrelators,
    infinite_temperature_average,
    projection_weight,
    relaxation_time,
    running_average,
)
from qrelax.propagator import (
    diagonal_ensemble,
    full_diagonalize,
    log_time_grid,
    momentum_diagonalize,
    orbits,
)
from qrelax.quantum_dimers import (
    build_flux_sector,
    build_qdm_hamiltonian,
    enumerate_coverings,
    flux_partition,
    translation_permutations,
)

GRID = log_time_grid(0.1, 1e8, 24)
REF_VACANCIES = [2, 7, 9, 15]
REF_DIMERS = {"I": 0x84a0648421184012a, "II": 0x18a06484211844112}


# -- shared helpers --------------------------------------------------------------


def gas_sector(L, N):
    return enumerate_sector(build_strip(L), N, default_seed(L, N))


def plateau(t, y, ratio=10.0, flat=0.05, lo=0.1, hi=0.9):
    """Widest window ``(i, j)`` with ``t_j/t_i >= ratio``, spread < flat, level in (lo, hi)."""
    best = None
    for i in range(len(t)):
        ymin = ymax = y[i]
        for j in range(i + 1, len(t)):
            ymin, ymax = min(ymin, y[j]), max(ymax, y[j])
            if ymax - ymin >= flat or not lo < ymin or not ymax < hi:
                break
            if t[j] / t[i] >= ratio and (best is None or t[j] / t[i] > t[best[1]] / t[best[0]]):
                best = (i, j)
    return best


def band_residence(t, y, lo, hi, per_decade=200):
    """Longest contiguous stay inside ``[lo, hi]``, in decades (log-time interpolation)."""
    lt = np.log10(t)
    fine = np.arange(lt[0], lt[-1], 1 / per_decade)
    inside = (np.interp(fine, lt, y) >= lo) & (np.interp(fine, lt, y) <= hi)
    best = run = 0
    for v in inside:
        run = run + 1 if v else 0
        best = max(best, run)
    return best / per_decade


def final_upward_crossing(t, y, level):
    """Last time at which ``y`` rises through ``level``."""
    up = np.flatnonzero((y[:-1] < level) & (y[1:] >= level))
    return float(t[up[-1] + 1]) if len(up) else float(t[0])


# -- heavy shared inputs -------------------------------------------------------------


@lru_cache(maxsize=None)
def gas24():
    basis = gas_sector(24, 20)
    return basis, translation_permutation(basis)


@lru_cache(maxsize=None)
def gas24_eig(lam):
    basis, perm = gas24()
    return momentum_diagonalize(build_gas_hamiltonian(basis, lam), perm)


@lru_cache(maxsize=None)
def gas24_reference(lam):
    basis, _ = gas24()
    ref = occupation(24, vacant=REF_VACANCIES)
    return running_average(gas_autocorrelator(gas24_eig(lam), basis, ref, GRID))


@lru_cache(maxsize=None)
def gas24_average(lam):
    basis, perm = gas24()
    orbs = orbits([perm], basis.dim)
    reps = [int(o[0]) for o in orbs]
    cs = gas_autocorrelators(gas24_eig(lam), basis, reps, GRID)
    return infinite_temperature_average([running_average(c) for c in cs],
                                        weights=[len(o) for o in orbs])


@lru_cache(maxsize=None)
def qdm66():
    basis = build_flux_sector(enumerate_coverings(6, 6), 6, 6, (1, 1))
    orbs = orbits(translation_permutations(basis), basis.dim)
    return basis, orbs


@lru_cache(maxsize=None)
def qdm66_run(V):
    basis, orbs = qdm66()
    eig = full_diagonalize(build_qdm_hamiltonian(basis, V))
    reps = [int(o[0]) for o in orbs]
    cbars = [running_average(c) for c in dimer_autocorrelators(eig, basis, reps, GRID)]
    avg = infinite_temperature_average(cbars, weights=[len(o) for o in orbs])
    return eig, cbars, avg


# -- 1. Rokhsar-Kivelson zero modes --------------------------------------------------


def test_criterion_01_rk_zero_modes(verdict):
    worst = []
    for L in (8, 12, 16):
        b = gas_sector(L, L - 4)
        u = b.uniform_vector()
        worst.append(np.linalg.norm(build_gas_hamiltonian(b, 0.5) @ u) / b.dim)
    cov = enumerate_coverings(4, 4)
    n_components = 0
    for flux in flux_partition(cov, 4, 4):
        b = build_flux_sector(cov, 4, 4, flux)
        H = build_qdm_hamiltonian(b, 1.0)
        for comp in range(b.n_components):
            u = b.uniform_vector(comp)
            worst.append(np.linalg.norm(H @ u) / b.dim)
            n_components += 1
    m = max(worst)
    verdict(1, m <= 1e-10,
            f"max |H u|/dim = {m:.2e} over gas L=8,12,16 and {n_components} 4x4 dimer components")


# -- 2. oracle equivalence -------------------------------------------------------------


def test_criterion_02_oracle_equivalence(verdict):
    exact, ulp = True, 0.0
    for L in (6, 8):
        for N in range(1, L - 1):
            b = gas_sector(L, N)
            idx = b.states.astype(np.int64)
            for lam in (0.25, 0.5, 0.75, 0.2, 0.8):
                H = build_gas_hamiltonian(b, lam).toarray()
                d = np.max(np.abs(H - dense_gas_hamiltonian(L, lam)[np.ix_(idx, idx)]))
                if lam in (0.25, 0.5, 0.75):
                    exact &= d == 0.0   # dyadic couplings: every sum is exact
                else:
                    # otherwise summation order may flip the last bit
                    ulp = max(ulp, d / (np.finfo(float).eps * np.abs(H).max()))
    cov = enumerate_coverings(4, 4)
    for flux in flux_partition(cov, 4, 4):
        b = build_flux_sector(cov, 4, 4, flux)
        for V in (0.5, 1.0, 10.0, -2.0):
            exact &= np.array_equal(build_qdm_hamiltonian(b, V).toarray(),
                                    dense_qdm_hamiltonian(list(b.states), 4, 4, V))
    # spectral evolution against the matrix exponential
    sup = 0.0
    cases = [(gas_sector(12, 9), 0.3, build_gas_hamiltonian),
             (build_flux_sector(cov, 4, 4, (0, 0)), 2.0, build_qdm_hamiltonian)]
    times = [0.1, 1.0, 10.0, 100.0]
    for b, g, build in cases:
        assert b.dim <= 300
        H = build(b, g)
        eig = full_diagonalize(H)
        psi0 = b.basis_vector(b.states[b.dim // 3])
        states = eig.evolve(psi0, times)
        for t, psi in zip(times, states):
            sup = max(sup, np.max(np.abs(psi - sla.expm(-1j * t * H.toarray()) @ psi0)))
    ok = exact and ulp <= 4 and sup <= 1e-8
    verdict(2, ok, f"sparse == dense exactly: {exact} (non-dyadic lambda within {ulp:.1f} ulp); "
                   f"evolution vs expm sup-norm {sup:.1e}")


# -- 3. dimer counts -------------------------------------------------------------------


def test_criterion_03_dimer_counts(verdict):
    rows, ok = [], True
    for n, expected in ((2, 8), (4, 272), (6, 90176)):
        cov = enumerate_coverings(n, n)
        oracle = count_matchings(n, n)
        parts = flux_partition(cov, n, n)
        ok &= len(cov) == oracle == expected and sum(parts.values()) == len(cov)
        rows.append(f"{n}x{n}: {len(cov)} (oracle {oracle}, {len(parts)} flux sectors)")
    verdict(3, ok, "; ".join(rows))


# -- 4. normalisation ----------------------------------------------------------------


def test_criterion_04_normalisation(verdict):
    dev0, devinf, n_states = 0.0, 0.0, 0
    zero = np.array([0.0])
    for L, N in ((12, 8), (12, 9), (16, 12)):
        b = gas_sector(L, N)
        X = b.modes.astype(float)
        phi = N / L
        for lam in (0.2, 0.8):
            eig = full_diagonalize(build_gas_hamiltonian(b, lam))
            ranks = np.arange(b.dim)
            c0 = gas_autocorrelators(eig, b, ranks, zero)
            dev0 = max(dev0, max(abs(c.values[0] - 1) for c in c0))
            n_states += b.dim
            if L == 16:
                continue
            cbar = gas_autocorrelators(eig, b, ranks, GRID)
            for r, c in zip(ranks, cbar):
                raw = diagonal_ensemble(eig, b.basis_vector(b.states[r]), X @ X[r])
                pred = raw / L / (phi * (1 - phi)) - phi / (1 - phi)
                devinf = max(devinf, abs(running_average(c).values[-1] - pred))
    cov = enumerate_coverings(4, 4)
    for flux in flux_partition(cov, 4, 4):
        b = build_flux_sector(cov, 4, 4, flux)
        eig = full_diagonalize(build_qdm_hamiltonian(b, 1.0))
        live = [r for r in range(b.dim) if b.flippable[r].any()]
        if not live:
            continue
        for c in dimer_autocorrelators(eig, b, live, zero):
            dev0 = max(dev0, abs(c.values[0] - 1))
        n_states += len(live)
    eig, cbars, _ = qdm66_run(10.0)
    # dimer correlators are normalised to a zero diagonal-ensemble limit
    devinf = max(devinf, max(abs(cb.values[-1]) for cb in cbars))
    ok = dev0 <= 1e-12 and devinf <= 1e-2
    verdict(4, ok, f"max |c(0)-1| = {dev0:.1e} over {n_states} product states; "
                   f"max |cbar(1e8) - diagonal ensemble| = {devinf:.1e}")


# -- 5. two-step relaxation ---------------------------------------------------------------


def test_criterion_05_two_step_relaxation(verdict):
    slow = gas24_reference(0.2)
    w = plateau(slow.times, slow.values)
    decays = w is not None and np.any(slow.values[w[1]:] < 0.1)
    fast = gas24_reference(0.8)
    early = fast.values[fast.times < 100]
    fast_ok = bool(np.any(early < 0.1))
    tau_fast = relaxation_time(fast, 0.1)
    part_a = ("no plateau" if w is None else
              f"plateau [{slow.times[w[0]]:.3g}, {slow.times[w[1]]:.3g}] "
              f"at {slow.values[w[0]:w[1] + 1].mean():.2f}, "
              f"tau(0.1) = {relaxation_time(slow, 0.1).tau:.2g}")
    part_b = f"lambda=0.8: min cbar before t=100 is {early.min():.3f}, tau(0.1) = {tau_fast.tau:.3g}"
    verdict(5, w is not None and decays and fast_ok, f"L=24 reference state, lambda=0.2: "
                                                     f"{part_a}; {part_b}")


# -- 6. timescale separation --------------------------------------------------------------


def test_criterion_06_timescale_separation(verdict, tmp_path):
    lams = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
    cfg = RunConfig(name="scan", experiment="relaxation_scan",
                    sectors=[{"L": L, "N": L - 4} for L in (12, 16, 20)], couplings=lams,
                    time_grid={"t_min": 0.1, "t_max": 1e8, "per_decade": 12})
    m = run_experiment(cfg, tmp_path)
    assert m.ok
    ok, rows = True, []
    for L in (12, 16, 20):
        data = np.loadtxt(tmp_path / f"L{L}N{L - 4}/tau_scan.txt")
        tau, cens = data[:, 2], data[:, 3].astype(bool)
        ratio = tau[0] / tau[-1]
        mono = all(tau[k + 1] <= tau[k] or (cens[k] and cens[k + 1]) for k in range(len(tau) - 1))
        ok &= ratio >= 100 and mono
        rows.append(f"L={L}: ratio {ratio:.0f}{' (censored)' if cens[0] else ''}, "
                    f"monotone {mono}")
    verdict(6, ok, "; ".join(rows))


# -- 7. lambda^2 collapse ---------------------------------------------------------------------


def _rescaled_distance(a, b):
    """Sup-distance of curve ``a`` from ``b`` on the t*lambda^2 axis, per point of ``a``."""
    (la, ya), (lb, yb) = a, b
    xa, xb = np.log(GRID * la ** 2), np.log(GRID * lb ** 2)
    m = (xa >= xb[0]) & (xa <= xb[-1])
    return m, np.abs(ya[m] - np.interp(xa[m], xb, yb))


def test_criterion_07_lambda_squared_collapse(verdict):
    curves = {lam: gas24_average(lam).values for lam in (0.2, 0.5, 0.6, 0.8)}
    sup = 0.0
    for a in (0.5, 0.6, 0.8):
        for b in (0.5, 0.6, 0.8):
            if a != b:
                m, d = _rescaled_distance((a, curves[a]), (b, curves[b]))
                sup = max(sup, d[curves[a][m] >= 0.1].max())
    # lambda = 0.2: plateau level = where its average decays slowest inside (0.1, 0.9)
    y = curves[0.2]
    slope = np.abs(np.gradient(y, np.log10(GRID)))
    inside = (y > 0.1) & (y < 0.9)
    level = y[inside][np.argmin(slope[inside])]
    m, d = _rescaled_distance((0.2, y), (0.5, curves[0.5]))
    above, below = d[y[m] >= level], d[y[m] < level]
    holds_above = above.max() <= 0.05
    breaks_below = below.size > 0 and below.max() > 0.05
    verdict(7, sup <= 0.05 and holds_above and breaks_below,
            f"L=24 average: sup-distance among lambda=0.5,0.6,0.8 down to cbar=0.1 is "
            f"{sup:.3f}; lambda=0.2 vs 0.5 deviates {above.max():.3f} above its plateau "
            f"level {level:.2f} and {below.max() if below.size else 0:.3f} below it")


# -- 8. dimer plateau ----------------------------------------------------------------------


def test_criterion_08_dimer_plateau(verdict):
    _, _, hi = qdm66_run(10.0)
    _, _, lo = qdm66_run(0.5)
    r_hi = band_residence(hi.times, hi.values, 0.29, 0.39)
    r_lo = band_residence(lo.times, lo.values, 0.29, 0.39)
    band = (lo.values >= 0.29) & (lo.values <= 0.39)
    k = np.flatnonzero(band)
    seg = lo.values[k[0] - 1:k[-1] + 2] if len(k) else lo.values[:0]
    monotone = len(k) > 0 and bool(np.all(np.diff(seg) <= 1e-3))
    verdict(8, r_hi >= 1.0 and r_lo < 1.0 and monotone,
            f"6x6 flux (1,1): V=10 average stays in 0.34+-0.05 for {r_hi:.2f} decades; "
            f"V=0.5 for {r_lo:.2f} decades (monotone through the band: {monotone})")


# -- 9. fast/slow spread ---------------------------------------------------------------------


def test_criterion_09_relaxation_spread(verdict):
    spreads = {}
    for V in (10.0, 0.5):
        _, cbars, _ = qdm66_run(V)
        taus = [relaxation_time(cb, 0.1) for cb in cbars]
        t = np.array([x.tau for x in taus])
        spreads[V] = (np.log10(t.max() / t.min()), sum(x.censored for x in taus))
    ok = spreads[10.0][0] >= 3 and spreads[0.5][0] < 1 and spreads[0.5][1] == 0
    verdict(9, ok, f"tau(0.1) spread over 72 orbit representatives: V=10 {spreads[10.0][0]:.2f} "
                   f"decades ({spreads[10.0][1]} censored), V=0.5 {spreads[0.5][0]:.2f} decades")


# -- 10. entanglement heterogeneity ------------------------------------------------------------


def test_criterion_10_entanglement(verdict):
    basis, _ = gas24()
    ref = occupation(24, vacant=REF_VACANCIES)
    psi = gas24_eig(0.2).evolve(basis.basis_vector(ref), [100.0])[0]
    windows = [Bipartition.window(i, 12, 24) for i in range(24)]
    S = [entanglement_entropy(psi, w, basis) for w in windows]
    asym = max(abs(a - b) for a, b in (entanglement_entropies(psi, w, basis) for w in windows))
    # product states carry no entanglement: every state of a smaller sector, every window
    s0 = max(entanglement_entropy(basis.basis_vector(ref), w, basis) for w in windows)
    small = gas_sector(12, 8)
    for r in range(small.dim):
        v = small.basis_vector(small.states[r])
        for i in range(12):
            s0 = max(s0, entanglement_entropy(v, Bipartition.window(i, 6, 12), small))
    ok = S[10] > S[3] and asym <= 1e-9 and s0 <= 1e-12
    verdict(10, ok, f"t=100, lambda=0.2: S(window 10) = {S[10]:.3f} vs S(window 3) = {S[3]:.3f}; "
                    f"max |S_A - S_B| = {asym:.1e}; max S of product states = {s0:.1e}")


# -- 11. metastable factorisation ---------------------------------------------------------------


def test_criterion_11_factorisation(verdict):
    basis, _ = gas24()
    ref = occupation(24, vacant=REF_VACANCIES)
    cbar = gas24_reference(0.2)
    w = plateau(cbar.times, cbar.values)
    assert w is not None
    psi0 = basis.basis_vector(ref)
    states = gas24_eig(0.2).evolve(psi0, GRID)
    region = list(range(3, 15))
    weight = projection_weight(states, basis, region, ref)
    on_plateau = weight[w[0]:w[1] + 1].min()
    tau = relaxation_time(cbar, 0.1).tau
    after = weight[GRID >= tau].max()

    r = restrict_hamiltonian(basis, 0.2, region, ref)
    sub = full_diagonalize(r.matrix)
    a0 = np.zeros(r.dim, complex)
    a0[int(np.flatnonzero(r.embedding == basis.rank(ref))[0])] = 1
    sigma = r.embed(sub.evolve(a0, GRID), basis.dim)
    D = frobenius_distance_series(states, sigma, GRID, psi0, psi0)
    rho = spearmanr(D, 1 - cbar.values).statistic
    ok = on_plateau >= 0.9 and after < 0.5 and rho >= 0.8
    verdict(11, ok, f"projection weight >= {on_plateau:.3f} on the plateau, <= {after:.3f} after "
                    f"tau(0.1) = {tau:.2g}; Spearman(D_Fr, 1 - cbar) = {rho:.3f}")


# -- 12. transition sharpening --------------------------------------------------------------------


def test_criterion_12_second_difference(verdict):
    res = energy_scan([12, 16, 20], [0.48, 0.5, 0.52])
    d2 = np.abs(res["d2"][:, 1])
    e_rk = np.abs(res["E0"][:, 1]).max()
    ok = bool(np.all(np.diff(d2) > 0)) and e_rk <= 1e-8
    verdict(12, ok, "|d2 E0| at lambda=1/2 for L=12,16,20: "
                    + ", ".join(f"{x:.1f}" for x in d2) + f"; max |E0(1/2)| = {e_rk:.1e}")


# -- 13. dimer correlation length ------------------------------------------------------------------


def test_criterion_13_correlation_length(verdict):
    basis, _ = qdm66()
    eig, _, _ = qdm66_run(10.0)
    ok, rows = True, []
    for name, cfg in REF_DIMERS.items():
        psi0 = basis.basis_vector(cfg)
        xi = np.array([correlation_length(s, basis)[0] for s in eig.evolve(psi0, GRID)])
        cbar = running_average(dimer_autocorrelators(eig, basis, [basis.rank(cfg)], GRID)[0])
        late = xi[GRID >= 1e7].mean()
        half = xi[0] + 0.5 * (late - xi[0])
        rise = final_upward_crossing(GRID, xi, half)
        decay = relaxation_time(cbar, 0.5).tau
        sep = abs(np.log10(rise / decay))
        ok &= xi[-1] > 1 and sep <= 1
        rows.append(f"{name}: xi(final) = {xi[-1]:.2f}, rise {rise:.3g} vs cbar decay {decay:.3g}")
    verdict(13, ok, "V=10, " + "; ".join(rows))
