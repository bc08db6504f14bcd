"""Entanglement of every 12-site window after the lambda=0.2 quench (L=24).

Windows covering the mobile vacancy pair entangle quickly; windows away from
it stay nearly product-like on the plateau.  Takes ~15 s.
"""

from qrelax.constrained_gas import (build_gas_hamiltonian, build_strip, default_seed,
                                    enumerate_sector, occupation, translation_permutation)
from qrelax.observables import Bipartition, entanglement_entropy
from qrelax.propagator import momentum_diagonalize

L, N = 24, 20
basis = enumerate_sector(build_strip(L), N, default_seed(L, N))
eig = momentum_diagonalize(build_gas_hamiltonian(basis, 0.2), translation_permutation(basis))
psi0 = basis.basis_vector(occupation(L, vacant=[2, 7, 9, 15]))
times = [1.0, 100.0, 1e4, 1e7]
states = eig.evolve(psi0, times)

print("window " + " ".join(f"{t:>8g}" for t in times))
for i in range(L):
    part = Bipartition.window(i, 12, L)
    print(f"{i:6d} " + " ".join(f"{entanglement_entropy(s, part, basis):8.3f}" for s in states))
