"""Doublon and holon fronts in a closed seven-site Mott chain.

Prints the first-arrival peak of the pair negativity N_r(t) for r = 1, 2, 3
and the speed fitted from those peaks, next to the quasiparticle bound.
"""
from photomott import LatticeSpec, propagation_experiment, v_max_doublon, v_max_holon

spec = LatticeSpec(L=7, U=33.3, J=1.0)
bounds = {"doublon": v_max_doublon(spec.U, spec.J), "holon": v_max_holon(spec.U, spec.J)}

for protocol in ("doublon", "holon"):
    res = propagation_experiment(protocol, spec, "pure", [1, 2, 3], pure_method="expm")
    print(f"{protocol}: bound v = {bounds[protocol]:.3f}")
    for r, p in res.peaks.items():
        print(f"  r={r}  t_peak={p.t_peak:.4f}  N_peak={p.n_peak:.4f}  edge={p.at_edge}")
    if res.speed is not None:
        print(f"  fitted v = {res.speed.speed:.3f} +- {res.speed.uncertainty:.3f}")
