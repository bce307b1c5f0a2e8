"""
Checking hand-written gradients
===============================

Every operator has an explicit backward pass. Central differences in float64
confirm each one; the reported number is the worst relative error.
"""
import numpy as np

from dynpred.numerics import (ConvSpec, DiffArray, conv2d, conv2d_backward, deconv2d, deconv2d_backward,
                              finite_diff_check, layer_norm, layer_norm_backward)

rng = np.random.default_rng(0)

# strided, padded convolution
x = rng.standard_normal((2, 3, 7, 7))
spec = ConvSpec(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4), stride=2, padding=1)
y, cache = conv2d(x, spec)
w = rng.standard_normal(y.shape)            # random upstream gradient
dx = conv2d_backward(w, cache)
err = finite_diff_check(lambda: conv2d(x, spec)[0], [x, spec.kernel.values, spec.bias.values],
                        [dx, spec.kernel.grad, spec.bias.grad], weights=w)
print(f"conv2d     {err:.2e}")

# transposed convolution is the adjoint of conv2d: <conv(x), z> == <x, deconv(z)>
adj = ConvSpec(spec.kernel.values, None, 2, 1)
z = rng.standard_normal(y.shape)
lhs = float((conv2d(x, adj)[0] * z).sum())
rhs = float((x * deconv2d(z, adj, output_size=(7, 7))[0]).sum())
print(f"adjoint gap {abs(lhs - rhs):.2e}")

spec = ConvSpec(rng.standard_normal((3, 2, 4, 4)), rng.standard_normal(2), stride=2, padding=1)
x = rng.standard_normal((2, 3, 4, 4))
y, cache = deconv2d(x, spec)
w = rng.standard_normal(y.shape)
dx = deconv2d_backward(w, cache)
err = finite_diff_check(lambda: deconv2d(x, spec)[0], [x, spec.kernel.values, spec.bias.values],
                        [dx, spec.kernel.grad, spec.bias.grad], weights=w)
print(f"deconv2d   {err:.2e}")

gain, bias = DiffArray(rng.standard_normal(3)), DiffArray(rng.standard_normal(3))
x = rng.standard_normal((2, 3, 4, 4))
y, cache = layer_norm(x, gain, bias)
w = rng.standard_normal(y.shape)
dx = layer_norm_backward(w, cache)
err = finite_diff_check(lambda: layer_norm(x, gain, bias)[0], [x, gain.values, bias.values],
                        [dx, gain.grad, bias.grad], weights=w)
print(f"layer_norm {err:.2e}")

# a wrong gradient is caught
print(f"wrong grad {finite_diff_check(lambda: x**2, [x], [3 * x]):.2e}")
