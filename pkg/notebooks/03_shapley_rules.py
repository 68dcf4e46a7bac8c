"""
Shapley attributions and regime rules
=====================================

Exact Shapley values need 2^F model calls per feature, so beyond a handful
of features we sample permutations instead. The per-regime rules weight the
attributions of the most confident recent samples with a geometric decay.
"""

import numpy as np

from regimekan.data import prepare
from regimekan.explain import AttributionConfig, exact_shapley, extract_rules, mc_shapley
from regimekan.model import ModelConfig, RegimeKAN
from regimekan.synth import MarkovSpec, gen_markov
from regimekan.training import TrainConfig, train

A = np.full((3, 3), 0.025)
np.fill_diagonal(A, 0.95)
_, _, frame = gen_markov(MarkovSpec(A, [0.002, 0.0, -0.002], [0.005, 0.02, 0.01], T=1500, seed=3))
fm = prepare(frame, k=8)
model, _ = train(RegimeKAN(ModelConfig(input_dim=8, hidden_dim=32, seed=3)), fm, TrainConfig(max_epochs=30, seed=3))

X_test, _ = fm.part("test")
baseline = fm.part("train")[0].mean(axis=0)
x = X_test[-1]

exact = exact_shapley(model.predict, x, baseline)
for n in (50, 500, 5000):
    approx = mc_shapley(model.predict, x, baseline, n_samples=n, seed=0)
    print(f"N={n:5d}  max |mc - exact| = {np.max(np.abs(approx - exact)):.2e}")

# efficiency: the attributions add up to the change in prediction
print("sum phi:", exact.sum(), " f(x) - f(baseline):", model.predict(x[None])[0] - model.predict(baseline[None])[0])

rules = extract_rules(model, X_test, fm.names, AttributionConfig(n_samples=200, T=30),
                      to_returns=fm.target_scaler.inverse_transform)
for line in rules.strings():
    print(line)
