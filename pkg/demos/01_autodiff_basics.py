"""Tour of the float64 autodiff core: build a tiny computation, read out
gradients, and verify them against central finite differences."""

import numpy as np

from skillstream import autodiff as ad
from skillstream.autodiff import Tensor, check_gradients, gradients

# gradients of a scalar chain: d/dx (x*x) at x=3 is 6
x = Tensor(3.0, requires_grad=True)
loss = ad.square(x).sum()
print("d(x*x)/dx at 3  ->", gradients(loss, {"x": x})["x"])

# a linear layer with a softmax on top
rng = np.random.default_rng(0)
w = Tensor(rng.standard_normal((4, 3)) * 0.5, requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)
inputs = Tensor(rng.standard_normal((8, 4)))

probs = ad.softmax(ad.add(ad.matmul(inputs, w), b))
print("softmax rows sum to", probs.data.sum(axis=1))

# cross-entropy toward class 1 for every row
loss = ad.mul(ad.tsum(ad.log_softmax(ad.add(ad.matmul(inputs, w), b))
                      * Tensor(np.eye(3)[np.ones(8, dtype=int)])), -1.0 / 8)
grads = gradients(loss, {"w": w, "b": b})
print("gradient shapes:", {k: v.shape for k, v in grads.items()})

# the verification loop every module in this package goes through:
# analytic gradients vs (f(x+eps) - f(x-eps)) / 2 eps, elementwise
report = check_gradients(
    lambda: ad.mul(ad.tsum(ad.log_softmax(ad.add(ad.matmul(inputs, w), b))
                           * Tensor(np.eye(3)[np.ones(8, dtype=int)])), -1.0 / 8),
    {"w": w, "b": b})
print(f"gradcheck worst relative error: {report.worst:.2e} "
      f"(passed: {report.passed})")
