"""The multiplier fields behind the decay estimate.

1. Sign of the radial component of the rotation-averaged field where
   t + R >= r, on a (t, r) sweep.
2. The averaged field is purely radial.
3. A finite-difference divergence of the current of the first field on a
   simulated solution, against its closed form.
"""
import numpy as np

from extwave import geometry as G
from extwave import multiplier as M
from extwave import solver as S

sweep = M.flux_sweep((2, 3, 4, 5), R=1.0, t_max=50.0, n_t=40, n_r=40)
print(f"flux sweep: {sweep['t'].size} points, min Xr = {sweep['Xr_value'].min():.3e}, "
      f"all non-negative: {bool(sweep['sign_ok'].all())}")

for t, r in ((0.0, 0.5), (5.0, 3.0), (20.0, 20.5)):
    ev = M.spherical_X(t, r, 3.0, 1.0)
    print(f"averaged field at t={t:4.1f} r={r:4.1f}: Xt={float(ev.Xt):10.4f} Xr={float(ev.Xr):10.4f} "
          f"Xth={float(ev.Xth):.1e}")

for h in (0.2, 0.1, 0.05):
    spec = S.Gaussian((4.0, 0.0), 2.0, 4.0)
    t_c = 1.0
    L = np.ceil((spec.support_radius() + t_c + 4 * h) / h) * h
    grid = G.GridSpec.make(h, L)
    s0 = S.make_initial(spec, grid, G.build_mask(G.disk(1.0), grid), 3.0, T_final=t_c + 2 * h)
    times = [t_c - grid.dt, t_c, t_c + grid.dt]
    rep = M.divergence_check(S.evolve(s0, t_c + grid.dt, snapshot_times=times), "X1", times=[t_c])
    print(f"h = {h:5.3f}: relative L1 gap between FD and closed-form divergence {rep.rel_l1:.3f}")
