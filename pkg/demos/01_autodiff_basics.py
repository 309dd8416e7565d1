"""Tour of the autodiff engine: values, gradients, and gradients of gradients.

Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

from lldd import autodiff as ad

rng = np.random.default_rng(0)

# --- first-order gradients through a small conv pipeline -------------------
x = ad.leaf(rng.standard_normal((1, 1, 8, 8)))
w = ad.leaf(rng.standard_normal((4, 1, 3, 3)) * 0.5)
b = ad.leaf(np.zeros(4))

out = ad.relu(ad.conv2d(x, w, b, padding=1))
loss = ad.tmean(ad.square(out))
gx, gw, gb = ad.grad(loss, [x, w, b])
print(f"loss = {float(loss.value):.6f}")
print(f"|dL/dx| = {np.linalg.norm(gx.value):.6f}, "
      f"|dL/dw| = {np.linalg.norm(gw.value):.6f}")

# --- quick finite-difference spot check -------------------------------------
h = 1e-5
i = (0, 0, 3, 4)
orig = x.value[i]
x.value[i] = orig + h
up = float(ad.tmean(ad.square(ad.relu(ad.conv2d(x, w, b, padding=1)))).value)
x.value[i] = orig - h
dn = float(ad.tmean(ad.square(ad.relu(ad.conv2d(x, w, b, padding=1)))).value)
x.value[i] = orig
print(f"dL/dx[{i}]: analytic {gx.value[i]:+.8f}, "
      f"finite diff {(up - dn) / (2 * h):+.8f}")

# --- second order: differentiate through a gradient --------------------------
# f(v) = 0.5 ||v||^2 has gradient v, so d(||grad f||^2)/dv = 2v exactly.
v = ad.leaf(rng.standard_normal(5))
f = ad.scalar_mul(0.5, ad.dot(v, v))
u = ad.grad(f, [v], create_graph=True)[0]
g2 = ad.grad(ad.dot(u, u), [v])[0]
print("second-order check (want 2v):")
print("  got :", np.round(g2.value, 6))
print("  want:", np.round(2 * v.value, 6))
