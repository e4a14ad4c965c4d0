"""
Training losses and their closed-form examples
===============================================

The three loss families each have a hand-computable case, reproduced
here: the load-balance penalty on a one-hot routing distribution, the
memory-matching triplet for a query between two bank rows, and the
appearance term for a constant reconstruction error.
"""

import numpy as np

from dmdkit import (LossWeights, MemoryBank, appearance_loss, load_loss,
                    memory_matching_loss, total_loss)

# Load balance: squared coefficient of variation of expert usage.
# Uniform routing costs nothing; one-hot over 4 experts gives
# CV^2 = 3, times the 0.008 weight per layer = 0.024.
uniform = np.full((2, 4), 0.25)
onehot = np.array([1.0, 0.0, 0.0, 0.0])
print("load(uniform) =", load_loss({"T": uniform}))
print("load(one-hot) = %.6f (expected 0.024)" % load_loss({"T": onehot}))

# Memory matching: pull the query toward its best bank row, push the
# runner-up away. d+ = 2 - sqrt(2), d- = 2, so the hinge is inactive
# and only the alignment term survives.
bank = MemoryBank(items=np.array([[1 / np.sqrt(2), 1 / np.sqrt(2)],
                                  [-1.0, 0.0]]))
query = np.array([1.0, 0.0])
value = memory_matching_loss(query, bank, layer="T")
print("matching(T) = %.12f (expected %.12f)"
      % (value, 0.1 * (2.0 - np.sqrt(2.0))))

# Appearance: L1 on both layers plus a lightly weighted perceptual
# term. With every pixel off by 0.1 this is 0.1 + 0 + 0.02 * 0.1.
t = np.zeros((4, 4))
print("appearance =", appearance_loss(t + 0.1, t, t, t), "(expected 0.102)")

weights = LossWeights()
print("default per-layer weights: load %.3f, triplet T %.2f / R %.2f, "
      "perceptual %.2f" % (weights.load_t, weights.triplet_t,
                           weights.triplet_r, weights.perceptual_t))
print("total is a plain sum:", total_loss(0.024, 0.0585786, 0.102))
