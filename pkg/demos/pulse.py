"""Resonant pi-pulse on the centre cavity versus the ideal doublon injection."""
import numpy as np

from photomott import LatticeSpec, prepare_ideal, prepare_via_pulse

for J in (0.0, 1.0):
    spec = LatticeSpec(L=3, U=100.0 if J == 0 else 33.3, J=J)
    omega = spec.U / 50
    psi, _ = prepare_via_pulse(spec, 1, omega, "doublon")
    ideal, _ = prepare_ideal(spec, "doublon")
    print(f"J={J}  U={spec.U}  Omega={omega:.3f}  fidelity={abs(np.vdot(ideal, psi))**2:.5f}")
