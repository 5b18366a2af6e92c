"""
Refining affinities with semantics
==================================

Affinities between pixels of different super-classes are zeroed, the rest
are scaled by a sigmoid of the semantic inner product. The longest distance
may bridge two classes of one super-class, and the two directions of each
pair are averaged into one weight.
"""

import numpy as np

from agmerge import (SuperClassTable, channel_index, pair_weights, refine_affinity,
                     remap_cross_class_d64, sigma, symmetrize)

table = SuperClassTable()
print("super-class members:", {s: table.members(s) for s in table.superclass_ids})
print("sigma(1) = %.6f, sigma(0.2) = %.6f" % (sigma(1.0), sigma(0.2)))

# two pixels side by side, both fully 'car' (class 3)
sem = np.zeros((1, 2, 9))
sem[0, :, 3] = 1.0
aff = np.full((1, 2, 56), 0.9)
right = channel_index(0, 4)
print("same class:   %.6f" % refine_affinity(aff, sem, table)[0, 0, right])

# person next to car: different super-classes
sem[0, 1] = 0
sem[0, 1, 1] = 1.0
print("cross class:  %.6f" % refine_affinity(aff, sem, table)[0, 0, right])

# bicycle (7) and motorcycle (8), 64 pixels apart, each with some doubt
# about the other; a clean one-hot pair would refine to 0 and stay there
sem = np.zeros((1, 65, 9))
sem[0, :, 7], sem[0, :, 8] = 0.6, 0.4
sem[0, 64, 7], sem[0, 64, 8] = 0.4, 0.6
aff = np.zeros((1, 65, 56))
far = channel_index(6, 4)
aff[0, 0, far] = 0.9
refined = refine_affinity(aff, sem, table)
print("d=64 bike pair after refine %.6f, after remap %.6f"
      % (refined[0, 0, far], remap_cross_class_d64(refined, sem, table)[0, 0, far]))

# the fused route gives the same weights as the three steps in a row
rng = np.random.default_rng(1)
sem = rng.dirichlet(np.ones(9), size=(40, 70))
aff = rng.random((40, 70, 56))
steps = symmetrize(remap_cross_class_d64(refine_affinity(aff, sem, table), sem, table))
print("fused == composed:", np.array_equal(pair_weights(aff, sem, table), steps, equal_nan=True))
