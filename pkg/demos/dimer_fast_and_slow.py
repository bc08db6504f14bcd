"""Fast and slow dimer coverings on the 6x6 torus, flux (1,1), at V=10.

Prints the relaxation time of each translation-orbit representative and the
correlation length of the two extreme configurations.  Takes ~30 s.
"""

import numpy as np

from qrelax.observables import (correlation_length, dimer_autocorrelators, relaxation_time,
                                running_average)
from qrelax.propagator import full_diagonalize, log_time_grid, orbits
from qrelax.quantum_dimers import (build_flux_sector, build_qdm_hamiltonian, enumerate_coverings,
                                   translation_permutations)

basis = build_flux_sector(enumerate_coverings(6, 6), 6, 6, (1, 1))
reps = [int(o[0]) for o in orbits(translation_permutations(basis), basis.dim)]
grid = log_time_grid(0.1, 1e8, 12)
eig = full_diagonalize(build_qdm_hamiltonian(basis, 10.0))
cbars = [running_average(c) for c in dimer_autocorrelators(eig, basis, reps, grid)]
taus = np.array([relaxation_time(cb, 0.1).tau for cb in cbars])
print(f"{basis.dim} coverings, {len(reps)} orbits; tau(0.1) from {taus.min():.3g} "
      f"to {taus.max():.3g} ({np.log10(taus.max() / taus.min()):.1f} decades)")

for name, k in (("fastest", taus.argmin()), ("slowest", taus.argmax())):
    cfg = basis.states[reps[k]]
    xi = [correlation_length(s, basis)[0] for s in eig.evolve(basis.basis_vector(cfg), grid)]
    print(f"{name} {cfg:x}: tau = {taus[k]:.3g}")
    print("   xi(t): " + " ".join(f"{t:.0e}:{x:.2f}" for t, x in zip(grid[::12], xi[::12])))
