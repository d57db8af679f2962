"""
Bloch-sphere pattern of unsharp spin flashes
============================================

Three unsharp projectors along x, y and z do not commute, so the
post-flash state never settles.  Each event is a point on the Bloch
sphere; the script writes them as CSV and prints a coarse histogram of
the z component.
"""

import sys

import numpy as np

from emodel import run_ensemble
from emodel.zoo import bloch_vector, builtin

b = builtin("noncommuting_spin", {"rates": [1.0, 1.0, 1.0], "axes": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
                                  "sharpness": 0.7, "field": [0.0, 0.0, 1.0]})
ens = run_ensemble(b.model, b.init, 1, (), t_max=1e6, seed=8, event_budget=10_000, snapshots=True, step=1e-2)
pts = np.array([bloch_vector(e.state) for e in ens.trajectories[0].events])

out = sys.argv[1] if len(sys.argv) > 1 else "bloch_points.csv"
np.savetxt(out, pts, delimiter=",", header="x,y,z", comments="")
print(f"{len(pts)} points -> {out}; radius range {np.linalg.norm(pts, axis=1).min():.3f}..1")

counts, edges = np.histogram(pts[:, 2], bins=10, range=(-1, 1))
for c, lo in zip(counts, edges):
    print(f"z>={lo:+.1f} " + "#" * (60 * c // counts.max()))
