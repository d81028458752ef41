"""Approach to a free wave.

The residual || Phi(T) - L(T - T1) Phi(T1) || compares the nonlinear
solution at time T with the free Dirichlet evolution of its state at T1.
Above the energy-scattering threshold it decays as T1 grows; below it the
decay is slower.
"""
import numpy as np

from extwave import functionals as F
from extwave import geometry as G
from extwave import solver as S

T, T1s, h = 40.0, (5.0, 10.0, 20.0), 0.25
spec = S.Gaussian((3.0, 0.0), 1.0, 1.0)
L = np.ceil((spec.support_radius() + T + 2 * h) / h) * h
grid = G.GridSpec.make(h, L)
mask = G.build_mask(G.disk(1.0), grid)

for p in (4.0, 2.5):
    s0 = S.make_initial(spec, grid, mask, p, T_final=T)
    traj = S.evolve(s0, T, snapshot_times=list(T1s) + [T])
    res = [F.scattering_residual(traj, t1, T) for t1 in T1s]
    slope = np.polyfit(np.log(T1s), np.log(res), 1)[0]
    print(f"p = {p}: energy scattering regime {s0.exponents.energy_scattering}; residuals "
          + ", ".join(f"{r:.3e}" for r in res) + f"; slope {slope:.2f}")
