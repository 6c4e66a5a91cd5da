"""The tape engine in isolation: record a graph, run backward, check vs FD.

The whole package trains through this one mechanism, so it is worth
seeing it bare: ops record closures onto the active tape, backward
replays them once in reverse, and the finite-difference oracle is the
independent referee.
"""

import numpy as np

from haarmixer import (
    Tape,
    Tensor,
    add,
    backward,
    finite_difference_gradient,
    layer_norm,
    matmul,
    mul_elementwise,
    relu,
    softmax_rows,
    sum_all,
)

rng = np.random.default_rng(42)

# --- a tiny two-layer computation -------------------------------------------

x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
w1 = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
w2 = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
probe = Tensor(rng.standard_normal((4, 2)))

def network(inp):
    hidden = relu(matmul(inp, w1))
    out = softmax_rows(matmul(hidden, w2))
    return sum_all(mul_elementwise(out, probe))

with Tape():
    loss = network(x)
backward(loss)

print("loss:", loss.item())
print("x.grad:\n", np.round(x.grad, 5))

# --- the oracle --------------------------------------------------------------

numeric = finite_difference_gradient(network, x, h=1e-5)
err = np.abs(x.grad - numeric.data).max()
print("max |analytic - central difference|:", err)

# --- gradients accumulate across uses ---------------------------------------

y = Tensor(np.array([2.0]), requires_grad=True)
with Tape():
    loss2 = sum_all(add(mul_elementwise(y, y), mul_elementwise(y, y)))
backward(loss2)
print("\nd(2 y^2)/dy at y=2:", y.grad, "(expected 8)")

# --- layer_norm behaves like the textbook formula ----------------------------

gain = Tensor(np.ones(3))
bias = Tensor(np.zeros(3))
row = Tensor(np.array([[1.0, 2.0, 3.0]]))
normed = layer_norm(row, gain, bias)
print("\nlayer_norm([1,2,3]):", np.round(normed.data, 5), "(zero mean, unit var)")
