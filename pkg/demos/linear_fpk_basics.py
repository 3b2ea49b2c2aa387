"""Walk through the core objects on a 1D Ornstein-Uhlenbeck problem.

Builds a lattice, projects a Gaussian initial law, propagates it with the
Semi-Lagrangian scheme, and compares the terminal slice against the exact
Gaussian marginal -- both in a plot and with the 1-Wasserstein distance.
"""

import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from slfpk import Boundary, Lattice, constant_field, density_measure, propagate, wasserstein1
from slfpk.measure import GridMeasure

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# dX = -X dt + sigma dW on [-4, 4] with reflecting walls
rho, h, t_final = 0.05, 0.05, 1.0
mean0, var0, sigma = 0.5, 0.25, 0.5

lattice = Lattice(rho, [-4.0], [4.0], Boundary.REFLECT)
m0 = density_measure(lattice, lambda p: np.exp(-(p[:, 0] - mean0) ** 2 / (2 * var0)))
field = constant_field(1, sigma_columns=np.array([[sigma]]), drift_matrix=[[-1.0]])

n_steps = int(round(t_final / h))
path = propagate(m0, field, n_steps, h)
print(f"propagated {n_steps} steps; terminal mass = {path[n_steps].mass:.12f}")

# exact Gaussian marginal of the OU process
mean_t = mean0 * np.exp(-t_final)
var_t = var0 * np.exp(-2 * t_final) + sigma**2 / 2 * (1 - np.exp(-2 * t_final))
x = lattice.axis_coords(0)
exact = np.exp(-(x - mean_t) ** 2 / (2 * var_t)) / np.sqrt(2 * np.pi * var_t)
exact_measure = GridMeasure(lattice, exact * rho / np.sum(exact * rho))

print(f"W1(scheme, exact Gaussian) = {wasserstein1(path[n_steps], exact_measure):.5f}")

fig, ax = plt.subplots(figsize=(7, 4))
for k in (0, n_steps // 2, n_steps):
    ax.plot(x, path[k].density(), label=f"t = {k * h:.2f}")
ax.plot(x, exact, "k--", label="exact marginal at T")
ax.set_xlim(-2, 3)
ax.set_xlabel("x")
ax.set_ylabel("density")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "ou_density_evolution.png", dpi=150)
print(f"wrote {OUT / 'ou_density_evolution.png'}")
