"""Locate where two samples differ.

The emulator matches the simulator except for a shifted blob near (2, 2).
Per-point permutation tests with Benjamini-Hochberg control flag held-out
points; the flagged ones cluster around the blob.

    python demos/feature_space.py
"""

import numpy as np

from emuval import RegressionMethod, RngStream, feature_space_test, pool_and_label
from emuval.diagnose import train_test_split

g = RngStream(0).generator()
simulator = g.normal(size=(300, 2))
emulator = g.normal(size=(300, 2))
emulator[:60] = g.normal(size=(60, 2)) * 0.3 + 2.0

train, test_points = train_test_split(pool_and_label(simulator, emulator), 0.65, RngStream(1))
diags = feature_space_test(train, test_points, RegressionMethod.knn(), 199, 0.05, RngStream(2))
flagged = np.array([d.point for d in diags if d.flagged])
print(f"{len(flagged)} of {len(diags)} held-out points flagged")
if len(flagged):
    print("mean flagged location:", np.round(flagged.mean(axis=0), 2))
    print("directions:", sorted({d.direction for d in diags if d.flagged}), "(+1 = emulator-heavy)")
