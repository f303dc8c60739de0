"""
Gradients on a tape
===================

Every operation on a taped tensor is recorded; ``backward`` walks the record
in reverse. With ``create_graph=True`` the gradient is itself taped, so it
can be differentiated again.
"""
import numpy as np

from relgan.autodiff import Tape, backward

tape = Tape()
x = tape.leaf(np.array([0.5, -1.0, 2.0]), name="x")

# y = sum(tanh(x) * x)
y = (x.tanh() * x).sum()
grads = backward(y, [x])
print("y      =", y.item())
print("dy/dx  =", grads[x].data)

# check against the closed form tanh(x) + x (1 - tanh(x)^2)
t = np.tanh(x.data)
print("closed =", t + x.data * (1 - t ** 2))

# second order: differentiate the squared gradient norm
tape = Tape()
x = tape.leaf(np.array([0.5, -1.0, 2.0]))
g = backward((x.tanh() * x).sum(), [x], create_graph=True)[x]
gg = backward(g.square().sum(), [x])[x]
print("d/dx |dy/dx|^2 =", gg.data)
