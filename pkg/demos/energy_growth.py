"""
Heating by flashes on a ring
============================

Position flashes on a lattice ring pump energy into the hopping
Hamiltonian at a constant rate.  The ensemble slope is compared with the
rate predicted from the master equation.  Then the flash rate itself:
flat for the plain lattice model, increasing for the momentum-weighted
variant.
"""

import numpy as np

from emodel import DirectSumDensity, integrate_master, run_ensemble
from emodel.zoo import GrwLatticeConfig, build_energy_probe, builtin

cfg = GrwLatticeConfig(M=8, sigma=1.0, lam=1.0, J=1.0)
b = builtin("grw_lattice", {"M": 8})
probe = build_energy_probe(cfg)

ts = np.linspace(0.0, 2.0, 9)
ens = run_ensemble(b.model, b.init, 10_000, list(ts), t_max=2.0, seed=3)
rho = integrate_master(b.model, DirectSumDensity.pure(b.model, *b.init), 0.0, 2.0, probes=list(ts))
for t, d, r in zip(ts, ens.densities, rho):
    print(f"t={t:4.2f}  <H> sampled {probe.density_energy(d):+.4f}  master {probe.density_energy(r):+.4f}")
print("predicted heating rate", np.mean([probe.lindblad_rate(r) for r in rho]))

# rate per event index, estimated as 1 / mean gap
for name, params in [("grw_lattice", {"M": 8}), ("momentum_weighted", {"M": 8, "sigma": 2.0, "mu": 2.0})]:
    m = builtin(name, params)
    runs = run_ensemble(m.model, m.init, 4000, (), t_max=1e4, seed=4, event_budget=12, step=1e-2)
    gaps = np.array([tr.inter_event_times(0.0)[:12] for tr in runs.trajectories])
    print(name.ljust(18), " ".join(f"{x:.2f}" for x in 1 / gaps.mean(0)))
