"""Pointwise decay of the solution in the interior and in the wave zone.

Records sup |phi| over r <= t/2 and over t/2 <= r <= 3t/2 on a geometric
time grid, fits log-log slopes and compares them with the predicted rates
-(p5 - 1)/4 and -(p5 - 1)/8.  A short run; the full study uses T = 100.
"""
import numpy as np

from extwave import functionals as F
from extwave import geometry as G
from extwave import solver as S

p, h, T = 4.0, 0.25, 40.0
spec = S.Gaussian((3.0, 0.0), 1.0, 1.0)
L = np.ceil((spec.support_radius() + T + 2 * h) / h) * h
grid = G.GridSpec.make(h, L)
state = S.make_initial(spec, grid, G.build_mask(G.disk(1.0), grid), p, T_final=T)
ex = state.exponents
print(f"p = {p}: p5 = {ex.p5}, energy scattering {ex.energy_scattering}, "
      f"critical scattering {ex.critical_scattering}")

rec = F.SeriesRecorder({"interior": lambda s: F.sup_by_region(s).interior,
                        "wave zone": lambda s: F.sup_by_region(s).wave_zone,
                        "weighted potential": F.weighted_potential},
                       F.geometric_times(2.0, T, 30))
S.evolve(state, T, observers=[rec])
series = {s.name: s for s in rec.series()}

for name, predicted in (("interior", -(ex.p5 - 1) / 4), ("wave zone", -(ex.p5 - 1) / 8)):
    fit = F.fit_decay(series[name], (8.0, 0.8 * T))
    print(f"{name:10s} slope {fit.slope:7.3f}  r2 {fit.r_squared:.3f}  (predicted {predicted:.3f} or faster)")

wp = series["weighted potential"]
print(f"weighted potential: start {wp.values[0]:.4e}, max {wp.values.max():.4e}, end {wp.values[-1]:.4e}")
