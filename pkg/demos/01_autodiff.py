"""Reverse-mode gradients on a small expression, checked against central differences."""

import numpy as np

from stecformer import tensor as T
from stecformer.tensor import Tape, Tensor, backward, grad_check

rng = np.random.default_rng(0)
w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
x = Tensor(rng.normal(size=(5, 4)))

with Tape():
    loss = T.mean(T.square(T.gelu(T.matmul(x, w))))
backward(loss)
print("loss", loss.item())
print("dloss/dw\n", np.round(w.grad, 5))

err = grad_check(lambda: T.mean(T.square(T.gelu(T.matmul(x, w)))), [w])
print(f"relative error against finite differences: {err:.2e}")
