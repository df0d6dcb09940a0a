"""How responsibility for a failed treatment shifts as the clinician trusts the AI more.

For a few episodes where the patient died, we take the AI's recommendation two rounds
before death and ask what would have happened under each other treatment, then split tot-ASE between the AI and the clinician with
Shapley values. At full trust the clinician only ever accepts, so it gets no credit.

    python3 demos/sepsis_trust.py            (under a minute)
"""

from cfx import EffectQuery, shapley_exact
from cfx.environments import sepsis as sp

EPISODES = 4
SAMPLES = 60
TRUST = (0.0, 0.25, 0.5, 0.75, 1.0)

# episodes are drawn once at full trust; the same episodes are then read under each trust level
deaths = sp.failed_trajectories(sp.build_sepsis(trust=1.0), EPISODES, seed=0)
print(f"{len(deaths)} failed episodes, horizon {deaths[0].model.h}")

print(f"\n{'trust':>6} {'phi AI':>9} {'phi clin':>9} {'clin share':>11}")
for mu in TRUST:
    bundle = sp.build_sepsis(trust=mu)
    ai = clin = 0.0
    for tau in deaths:
        base = sp.ai_query(sp.with_trust(tau, bundle), bundle)
        chosen = base.tau.action(1, base.time)
        for alt in bundle.model.action_domain(1, base.time):
            if alt in (chosen, sp.NULL):
                continue
            q = EffectQuery(base.tau, 1, base.time, alt, base.response)
            rep = shapley_exact(bundle.model, q, n_samples=SAMPLES, seed=0)
            ai += rep.phi[1]
            clin += rep.phi[2]
    total = ai + clin
    share = clin / total if total else float("nan")
    print(f"{mu:6.2f} {ai:9.4f} {clin:9.4f} {share:11.4f}")

print("\nThe clinician's share falls as trust rises and is exactly 0 at trust 1.")
print("For the full sweep over every alternative treatment use:")
print("  cfx sweep --env sepsis --param trust --values 0,0.25,0.5,0.75,1 --episodes 10 --action all")
