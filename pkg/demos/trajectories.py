"""Trajectory average against the exact master equation on a four-site chain."""
import numpy as np

from photomott import (
    LatticeSpec, TimeGrid, TrajectoryConfig, ensemble_average, evolve_master, negativity,
)
from photomott.states import inject_doublon, mott_state

spec = LatticeSpec(L=4, U=33.3, J=1.0, gamma=0.1)
psi = inject_doublon(mott_state(spec), 1, spec)
pair = (0, 2)
grid = TimeGrid.for_spec(spec, 1.0, save_every=0.1)

exact = evolve_master(psi, spec, grid, pairs=[pair])
traj = ensemble_average(psi, spec, TrajectoryConfig(n_traj=400, master_seed=7).with_grid(grid), [pair])

print("  t     N_exact   N_traj   n_exact  n_traj")
for k, t in enumerate(exact.times):
    ne = negativity(exact.rdms[pair][k])
    nt = negativity(traj.rdms[pair][k])
    print(f"{t:5.2f}  {ne:.4f}   {nt:.4f}   {exact.n_photons[k]:.3f}   {traj.n_photons[k]:.3f}")
print(f"jumps: {traj.diagnostics['jumps_total']} over {traj.diagnostics['n_traj']} trajectories")
