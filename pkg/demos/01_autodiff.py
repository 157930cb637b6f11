"""
Reverse-mode differentiation on small matrices
==============================================

Every model in this package is built from a handful of matrix operations
recorded on a ``Graph``. This script builds a tiny loss by hand, pulls its
gradients out with ``backward`` and then confirms them against central
finite differences.
"""

import numpy as np

from avjca import autodiff as ad
from avjca.autodiff import Graph, backward, check_gradients

rng = np.random.default_rng(0)

# A graph records one forward pass. Parameters are named; constants are not.
g = Graph()
W = g.parameter("W", rng.normal(size=(2, 3)))
x = g.constant(rng.normal(size=(3, 4)))
loss = ad.sum_all(ad.tanh(ad.matmul(W, x)))
print("loss:", loss.value[0, 0])

# backward returns one gradient per named parameter, same shape as the parameter.
grads = backward(g, loss)
print("dloss/dW:\n", grads["W"])

# The closed form for this loss is (1 - tanh(Wx)^2) x^T.
closed = (1 - np.tanh(W.value @ x.value) ** 2) @ x.value.T
print("matches closed form:", np.allclose(grads["W"], closed))

# check_gradients rebuilds the graph for every perturbed entry, so the loss is
# given as a function of the parameter nodes.
xv = x.value


def build(graph, params):
    return ad.sum_all(ad.tanh(ad.matmul(params["W"], graph.constant(xv))))


report = check_gradients(build, {"W": W.value})
print(report)

# Gradient rules live in a table keyed by op name, which makes it easy to see
# that the checker would notice a wrong rule.
honest = ad.GRADIENT_RULES["tanh"]
ad.GRADIENT_RULES["tanh"] = lambda node, up: [0.5 * r for r in honest(node, up)]
print("with a broken tanh rule:", "PASS" if check_gradients(build, {"W": W.value}).passed else "FAIL")
ad.GRADIENT_RULES["tanh"] = honest
