"""Every adversarial objective, checked against its closed form.

Each loss is a pure function over discriminator outputs, so the expected
numbers can be computed by hand before any training happens.
"""

import math

import numpy as np

from ganlab import losses as L
from ganlab import tensor as T
from ganlab.tensor import Tensor

# Classic minimax value at the symmetric equilibrium D == 1/2 everywhere.
v = L.minimax_value(np.full(8, 0.5), np.full(8, 0.5))
print(f"minimax at equilibrium: {v.item():.6f}  (expected {-2 * math.log(2):.6f})")

# Wasserstein critic: a pure difference of means, plus weight clipping.
print("critic loss [2] vs [5]:", L.wasserstein_critic_loss(np.array([2.0]), np.array([5.0])).item())
params = {"w": Tensor(np.array([-0.2, 0.05]), requires_grad=True)}
L.clip_weights(params, 0.1)
print("clipped weights:", params["w"].data)

# Gradient penalty of a linear critic is analytic: (|w| - 1)^2.
critic_w = Tensor(np.array([[3.0], [4.0]]), requires_grad=True)
interp = Tensor(np.random.default_rng(0).standard_normal((8, 2)))
penalty = L.gradient_penalty(lambda x: T.matmul(x, critic_w), interp)
print(f"GP for |w|=5 with lambda 10: {10 * penalty.item():.4f}  (expected 160)")

# Least-squares objective: zero at perfect targets, 0.25 at the midpoint.
print("lsgan at d=0.5:", L.lsgan_loss(np.array([0.5]), np.array([0.5])).item())

# Refiner loss: realism plus L1 self-regularization at the default weight.
a, b = np.zeros((10, 10)), np.ones((10, 10))
reg = L.simgan_refiner_loss(a, b, np.array([1 - 1e-9]), lambda_reg=5e-5)
print("simgan reg term for a unit-difference 100-pixel image:", round(reg.item(), 6))

# The translation composite: unit components weighted 1/10/0.01/10/0.01/1.
terms = {c: 1.0 for c in L.MUNIT_COMPONENTS}
print("munit total of unit components:", L.munit_total_loss(terms))

# The dual-branch objective: toggling the voxel L1 shifts it by exactly 100*L1.
off = L.mcgan_objective(0.2, 0.3, 0.5, L.McganWeights(enable_l1=False))
on = L.mcgan_objective(0.2, 0.3, 0.5, L.McganWeights(enable_l1=True))
print(f"mcgan without/with L1: {off} -> {on}  (shift {on - off})")

# Label flipping: true exactly once per period.
sched = L.LabelFlipSchedule(period=3)
print("flip pattern:", [L.label_flip_gate(sched) for _ in range(6)])
