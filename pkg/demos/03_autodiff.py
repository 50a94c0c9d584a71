"""The reverse-mode autodiff substrate used by the trainable mechanism.

Nodes wrap numpy arrays; operations record vector-Jacobian products; one
backward pass fills gradients. Every primitive is validated against central
finite differences.
"""

import numpy as np

from jointauction import autodiff as ad
from jointauction.autodiff import Node, backward, grad_check

# Forward + backward on a scalar chain.
x = Node(np.array(0.0))
y = ad.sigmoid(x)
backward(y)
print("sigmoid(0) =", y.value, " d/dx =", x.grad)

# The straight-through estimator forwards quantized values but routes the
# gradient to the raw input unchanged.
raw = Node(np.array(0.7))
st = ad.straight_through(np.array(1.0), raw)
loss = ad.square(ad.sub(st, 0.4))
backward(loss)
print("straight-through forward:", st.value, " d loss/d raw:", raw.grad, "(= 2*(1.0-0.4))")

# Gradient checking a small MLP against central differences.
rng = np.random.default_rng(0)
params = {
    "w0": rng.normal(size=(6, 8)) / np.sqrt(6),
    "b0": np.zeros(8),
    "w1": rng.normal(size=(8, 1)) / np.sqrt(8),
}
data = rng.normal(size=(5, 6))


def mlp_loss(nodes):
    h = ad.relu(ad.add(ad.matmul(data, nodes["w0"]), nodes["b0"]))
    return ad.mean(ad.square(ad.matmul(h, nodes["w1"])))


print("MLP max relative gradient error:", f"{grad_check(mlp_loss, params, h=1e-5):.2e}")

# Attention is permutation-equivariant: no positional information anywhere.
q = rng.normal(size=(4, 8))
out = ad.scaled_dot_attention(Node(q), Node(q), Node(q), heads=2).value
perm = rng.permutation(4)
out_p = ad.scaled_dot_attention(Node(q[perm]), Node(q[perm]), Node(q[perm]), heads=2).value
print("attention equivariance max diff:", f"{np.abs(out[perm] - out_p).max():.2e}")
