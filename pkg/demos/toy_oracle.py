"""Monte Carlo estimates against the exact enumeration oracle on small random models.

The oracle walks the shared-noise posterior layer by layer, so on small models it gives
the effects exactly. Estimates should land within a few standard errors, and the error
should shrink like one over the square root of the sample count.

    python3 demos/toy_oracle.py
"""

from cfx import exact_conditional_variances, exact_effects, explanation_formula, conditional_variance
from cfx.toy import random_case

toy, q = random_case(12)
print(f"model: {toy.model.n} agents, horizon {toy.model.h}")
print(f"query: {q.describe()}")

exact = exact_effects(q)
print(f"\nexact: " + ", ".join(f"{k} {v:.4f}" for k, v in exact.items()))
print(f"\n{'samples':>8} {'TCFE':>9} {'|err|/se':>9} {'r-SSE':>9} {'|err|/se':>9}")
for n in (50, 200, 800, 3200):
    res = explanation_formula(toy.model, q, n_samples=n, seed=7)
    row = [f"{n:8d}"]
    for name in ("tcfe", "r_sse"):
        est = getattr(res, name)
        z = abs(est.mean - exact[name]) / est.std_error if est.std_error else 0.0
        row += [f"{est.mean:9.4f}", f"{z:9.2f}"]
    print(" ".join(row))

# Nested Monte Carlo for the conditional variances behind the state attribution
cv = exact_conditional_variances(q)
print(f"\nVar of the counterfactual difference: exact {cv['variance']:.4f}")
print(f"{'k':>3} {'exact':>9} {'nested MC':>10} {'se':>8}")
for k in range(q.time + 1, q.response.t_y + 1):
    mean, se = conditional_variance(toy.model, q, k, h1=200, h2=20, seed=3, return_se=True)
    print(f"{k:3d} {cv['unc'][k]:9.4f} {mean:10.4f} {se:8.4f}")
