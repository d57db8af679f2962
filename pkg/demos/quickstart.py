"""
Quickstart: trajectories against the master equation
====================================================

A single decaying level is the smallest model with an event.  Its
first-event time is exponential, so everything here can be checked by
hand.
"""

import math

import numpy as np

from emodel import DirectSumDensity, builtin, integrate_master, joint_density, run_ensemble
from emodel.likelihood import EventHistory

b = builtin("two_sector_scalar", {"g": 1.0})

# ensemble of trajectories, densities probed at three times
probes = [0.5, 1.0, 2.0]
ens = run_ensemble(b.model, b.init, 20_000, probes, t_max=2.0, seed=1)
exact = integrate_master(b.model, DirectSumDensity.pure(b.model, *b.init), 0.0, 2.0, probes=probes)
for t, a, e in zip(probes, ens.densities, exact):
    print(f"t={t:3.1f}  P(no event) sampled {a.blocks[0][0, 0].real:.4f}  exact {e.blocks[0][0, 0].real:.4f}")

# density of "one event at t=1" is e^-1 for unit rate
h = EventHistory(0, 0.0, [(1, 1.0)])
print("joint density", joint_density(b.model, h, b.init[1]), "vs", math.exp(-1))

# waiting times conditioned on firing before t=2
first = np.array([tr.events[0].time for tr in ens.trajectories if tr.events])
print(f"{first.size} fired before t=2, mean time {first.mean():.3f} (exact {(1 - 3 / math.e ** 2) / (1 - math.e ** -2):.3f})")
