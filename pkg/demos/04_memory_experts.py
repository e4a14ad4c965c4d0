"""
Routed memory experts
=====================

Feature maps are corrected by a small pool of experts. A gate picks
the top scoring experts per image; each expert consults its memory
bank twice (a global pass that masks channels, a per-pixel pass that
mixes in the closest memory rows) and fuses the two streams with a
3x3 convolution. Selected experts also write back into their banks.
"""

import numpy as np

from dmdkit import (gate_route, gp_adjust, init_expert, init_gate,
                    mecm_forward, sc_refine)

rng = np.random.default_rng(3)
channels, num_experts = 6, 4
x = rng.normal(size=(channels, 10, 10))

experts = [init_expert(channels, num_items=5, seed=s) for s in range(num_experts)]
gate = init_gate(num_experts, channels, seed=99)

route = gate_route(x, gate, k=2)
print("selected experts:", route.selected.tolist())
print("route weights:", np.round(route.weights, 4).tolist(),
      "(sum %.6f)" % route.weights.sum())

# The global pass pools the image, attends over the bank, and gates
# channels with a sigmoid mask, so the output is a damped input.
bank, head = experts[0].memory, experts[0].mask_head
adj = gp_adjust(x[None], bank, head)
print("mask range: [%.3f, %.3f]" % (adj.mask.min(), adj.mask.max()))
print("|output| <= |input| everywhere:",
      bool(np.all(np.abs(adj.output) <= np.abs(x[None]) + 1e-12)))

# The per-pixel pass replaces each feature vector with a convex
# mixture of its top-2 memory rows, so outputs live in the row span.
refined = sc_refine(x, bank, k=2)
print("refined pixel norm vs bank row norms:",
      round(float(np.linalg.norm(refined[:, 0, 0])), 3), "vs",
      np.round(np.linalg.norm(bank.items, axis=1), 3).tolist())

result = mecm_forward(x, experts, gate, k=2, evolve=True)
print("fused output shape:", result.output.shape)
changed = [i for i in range(num_experts)
           if not np.array_equal(result.experts[i].memory.items,
                                 experts[i].memory.items)]
print("experts whose banks evolved:", changed)
print("evolved rows stay unit length:",
      bool(np.allclose(np.linalg.norm(result.experts[changed[0]].memory.items,
                                      axis=1), 1.0)))
