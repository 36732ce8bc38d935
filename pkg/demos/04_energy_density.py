"""Where does the sphere-plate energy live?

Prints a coarse map of the interaction energy density on a vertical
section through the sphere centre.  It is concentrated in the gap and
decays away from the symmetry axis.
"""
import numpy as np

from wlcasimir import EnsembleMeta, Plate, Sphere, energy_density, generate_ensemble

ens = generate_ensemble(EnsembleMeta(n_loops=200, n_points=2000, seed=9))
rho = np.linspace(-3.0, 3.0, 13)
z = np.linspace(0.1, 0.9, 5)
g = energy_density((Plate(), Sphere(2.0, 1.0)), ens, rho, z)

print("z \\ rho " + " ".join(f"{r:7.1f}" for r in rho))
for j, zz in enumerate(z[::-1]):
    row = g.values[:, len(z) - 1 - j]
    print(f"{zz:7.2f} " + " ".join(f"{v:7.4f}" for v in row))
