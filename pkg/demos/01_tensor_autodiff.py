"""The tensor engine: forward math, reverse-mode gradients, and the
finite-difference checker.

Everything downstream (GAN objectives, progressive training, the detector)
runs on this one engine, so we start by convincing ourselves the gradients
are right.
"""

import numpy as np

from ganlab import tensor as T
from ganlab.graph import Graph, forward_backward, grad_check
from ganlab.tensor import Tensor

# A scalar loss through a few ops; backward fills .grad on the leaves.
x = Tensor(np.array([[1.0, -2.0], [3.0, 0.5]]), requires_grad=True)
loss = T.sum_(T.square(T.tanh_(x)))
loss.backward()
print("loss:", loss.item())
print("dloss/dx:\n", x.grad)

# The same thing as a declarative graph: nodes wired by id.
g = Graph()
g.add_input("x")
g.add_param("w", np.array([[0.5], [-0.25]], dtype=np.float32))
g.add("h", "dense", ["x", "w"])
g.add("loss", "sum", ["h"])
value, grads = forward_backward(g, {"x": np.array([[1.0, 2.0]], dtype=np.float32)}, "loss")
print("\nlinear graph loss:", value, " dw:", grads["w"].ravel())

# Gradient checking runs the whole graph in float64 against central
# differences. A linear map agrees exactly; a conv stack agrees to < 1e-4.
report = grad_check(g, {"x": np.array([[1.0, 2.0]])}, "loss", epsilon=0.5)
print("linear grad check rel err:", report.per_param["w"])

rng = np.random.default_rng(0)
net = Graph()
net.add_input("x")
net.add_param("w0", T.he_normal(rng, (4, 2, 3, 3), 18))
net.add("c0", "conv2d", ["x", "w0"], stride=1, pad=1)
net.add("a0", "leaky-relu", ["c0"], slope=0.2)
net.add("n0", "pixelwise-feature-norm", ["a0"])
net.add("sq", "mul", ["n0", "n0"])
net.add("mix", "add", ["sq", "n0"])
net.add("loss", "sum", ["mix"])
report = grad_check(net, {"x": rng.standard_normal((2, 2, 8, 8))}, "loss")
print("conv stack grad check:", "PASS" if report.passed else "FAIL",
      f"(worst rel err {report.worst():.2e})")

# Double backprop: gradients of a gradient reach the weights. This is what
# lets a gradient penalty actually shape the critic.
w = Tensor(np.array([3.0, 4.0]), requires_grad=True)
xi = Tensor(np.array([0.2, -0.4]), requires_grad=True)
d = T.sum_(T.mul(w, xi))
(gx,) = T.grad_of(d, [xi], create_graph=True)
penalty = T.square(T.sub(T.l2_norm(gx), 1.0))
penalty.backward()
print("\npenalty (|w|-1)^2 =", penalty.item(), " d/dw:", w.grad)
