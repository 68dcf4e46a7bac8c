"""
Hybrid spline activations and B-spline bases
============================================

Each hidden unit of the detector applies a learned function: tanh-weighted
ramps between quantile knots plus a sigmoid-weighted cubic. The forecaster
heads instead use a clamped B-spline basis.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from regimekan.splines import BSplineBasis, SplineActivation, init_knots_from_quantiles

rng = np.random.default_rng(0)

# knots come from the quantiles of the pre-activations, so outliers barely move them
pre = rng.standard_t(df=3, size=2000)
knots = init_knots_from_quantiles(pre, 4)
print("knots:", np.round(knots, 3))

x = np.linspace(knots[0] - 1, knots[-1] + 1, 400)
fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.5))
for w in ([0.5, 0.5, 0.5], [1.5, -1.0, 0.3], [-0.5, 2.0, -2.0]):
    act = SplineActivation.create(knots, np.array(w), np.array([-2.0, -2.0]))
    left.plot(x, act(x), label=f"w={w}")
for k in knots:
    left.axvline(k, color="grey", lw=0.5)
left.set_title("hybrid activation")
left.legend(fontsize=7)

# a cubic basis on [-2, 2] with eight functions; the rows form a partition of unity
basis = BSplineBasis.uniform(-2.0, 2.0, n_basis=8, degree=3)
xs = np.linspace(-2, 2, 400)
B = basis(xs)
print("partition of unity error:", np.max(np.abs(B.sum(axis=1) - 1)))
right.plot(xs, B)
right.set_title("cubic B-spline basis")
fig.tight_layout()
fig.savefig("spline_activation.png", dpi=100)
print("wrote spline_activation.png")
