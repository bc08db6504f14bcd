from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrelax.propagator import full_diagonalize
from qrelax.quantum_dimers import (
    DimerLattice,
    EmptySectorError,
    build_flux_sector,
    build_qdm_hamiltonian,
    columnar_covering,
    enumerate_coverings,
    flip,
    flippable_plaquettes,
    flux_of,
    flux_partition,
    staggered_covering,
    translation_permutations,
)

from oracles import count_matchings, dense_qdm_hamiltonian


@pytest.fixture(scope="module")
def cov44():
    return enumerate_coverings(4, 4)


@pytest.mark.parametrize("Lx,Ly", [(3, 4), (4, 5), (0, 2), (1, 1)])
def test_odd_or_small_tori_rejected(Lx, Ly):
    with pytest.raises(ValueError):
        enumerate_coverings(Lx, Ly)


@pytest.mark.parametrize("Lx,Ly,expected", [(2, 2, 8), (4, 4, 272), (2, 4, None), (6, 6, 90176)])
def test_counts_match_permanent_oracle(Lx, Ly, expected):
    cov = enumerate_coverings(Lx, Ly)
    ref = count_matchings(Lx, Ly)
    assert len(cov) == ref
    if expected is not None:
        assert ref == expected
    assert len(set(cov)) == len(cov)


def test_enumeration_deterministic_and_close_packed(cov44):
    assert enumerate_coverings(4, 4) == cov44
    lat = DimerLattice(4, 4)
    assert all(lat.is_close_packed(c) for c in cov44)
    assert all(bin(c).count("1") == 8 for c in cov44)


def test_modes_round_trip(cov44):
    lat = DimerLattice(4, 4)
    assert lat.from_modes(lat.to_modes(cov44)) == cov44


def test_flux_partition_sums_to_total(cov44):
    part = flux_partition(cov44, 4, 4)
    assert sum(part.values()) == 272
    # brute-force recount with the scalar formula
    recount = {}
    for c in cov44:
        f = flux_of(c, 4, 4)
        recount[f] = recount.get(f, 0) + 1
    assert recount == part
    assert all(f.x.denominator == 1 and f.y.denominator == 1 for f in part)


def test_columnar_flux_zero():
    c = columnar_covering(4, 4)
    assert DimerLattice(4, 4).is_close_packed(c)
    assert flux_of(c, 4, 4) == (0, 0)
    assert flux_of(columnar_covering(4, 4, direction=1), 4, 4) == (0, 0)


def test_staggered_flux_extremal(cov44):
    c = staggered_covering(4, 4)
    lat = DimerLattice(4, 4)
    assert lat.is_close_packed(c)
    assert flippable_plaquettes(c, lat) == []
    # 8 horizontal dimers all on even sites: Phi_x = 8 / 4 = 2
    f = flux_of(c, 4, 4)
    assert f == (Fraction(2), Fraction(0))
    assert max(abs(flux_of(x, 4, 4).x) + abs(flux_of(x, 4, 4).y) for x in cov44) == 2


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_flip_is_involution_and_preserves_flux(data):
    cov = enumerate_coverings(4, 4)
    lat = DimerLattice(4, 4)
    c = data.draw(st.sampled_from(cov))
    fl = flippable_plaquettes(c, lat)
    if not fl:
        return
    p = data.draw(st.sampled_from(fl))
    d = flip(c, p, lat)
    assert d != c
    assert lat.is_close_packed(d)
    assert flip(d, p, lat) == c
    assert flux_of(d, 4, 4) == flux_of(c, 4, 4)


def test_flip_rejects_unflippable():
    lat = DimerLattice(4, 4)
    with pytest.raises(ValueError):
        flip(staggered_covering(4, 4), 0, lat)


def test_sector_contains_columnar_states(cov44):
    b = build_flux_sector(cov44, 4, 4, (0, 0))
    for d in (0, 1):
        for off in (0, 1):
            assert columnar_covering(4, 4, d, off) in b
    assert all(flux_of(c, 4, 4) == (0, 0) for c in b.states)
    assert list(b.states) == sorted(b.states)


def test_empty_sector_named(cov44):
    with pytest.raises(EmptySectorError, match=r"\(5, 0\)"):
        build_flux_sector(cov44, 4, 4, (5, 0))


def test_maximal_flux_sector_frozen(cov44):
    b = build_flux_sector(cov44, 4, 4, (2, 0))
    assert b.states == (staggered_covering(4, 4),)
    assert not b.flippable.any()
    H = build_qdm_hamiltonian(b, 3.7)
    assert H.nnz == 0
    eig = full_diagonalize(H)
    assert np.array_equal(eig.eigenvalues, np.zeros(1))


@pytest.mark.parametrize("V", [0.0, 1.0, 0.5, 10.0])
def test_hamiltonian_matches_dense_oracle(cov44, V):
    b = build_flux_sector(cov44, 4, 4, (0, 0))
    H = build_qdm_hamiltonian(b, V).toarray()
    ref = dense_qdm_hamiltonian(list(b.states), 4, 4, V)
    assert np.max(np.abs(H - ref)) == 0.0


def test_hamiltonian_symmetric_and_flux_conserving(cov44):
    for f in flux_partition(cov44, 4, 4):
        b = build_flux_sector(cov44, 4, 4, f)
        H = build_qdm_hamiltonian(b, 2.0)
        assert (H != H.T).nnz == 0
        coo = H.tocoo()
        for r, c in zip(coo.row, coo.col):
            assert flux_of(b.states[r], 4, 4) == flux_of(b.states[c], 4, 4)


def test_rk_zero_mode_every_component(cov44):
    for f in flux_partition(cov44, 4, 4):
        b = build_flux_sector(cov44, 4, 4, f)
        H = build_qdm_hamiltonian(b, 1.0)
        for comp in range(b.n_components):
            u = b.uniform_vector(comp)
            assert np.linalg.norm(H @ u) <= 1e-10 * b.dim


def test_six_by_six_unit_flux_sector():
    cov = enumerate_coverings(6, 6)
    b = build_flux_sector(cov, 6, 6, (1, 1))
    brute = sum(1 for c in cov if flux_of(c, 6, 6) == (1, 1))
    assert b.dim == brute == 1272
    assert b.n_components == 1


def test_translations_commute_with_hamiltonian(cov44):
    b = build_flux_sector(cov44, 4, 4, (0, 0))
    H = build_qdm_hamiltonian(b, 1.3).toarray()
    perms = translation_permutations(b)
    assert len(perms) == 16
    for p in perms:
        assert np.array_equal(H[np.ix_(p, p)], H)
