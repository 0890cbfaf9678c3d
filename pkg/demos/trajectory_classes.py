"""Jump-class ensemble for one decaying qubit versus the master equation and the outcome law."""
import math

import numpy as np

from backflow import rate, trajectories as tj

sched = rate.discretize(rate.RateProfile.lorentzian(0.2), 0.02, 400)
chs = [tj.JumpChannel(tj.SIGMA_MINUS, 0, 1, sched)]
psi = (tj.EXCITED + tj.GROUND) / math.sqrt(2)
H = 0.5 * tj.SIGMA_Z

res = tj.evolve_ensemble(psi, H, chs, 400, n_samples=100_000, seed=1, record_every=50)
times, me = tj.master_equation_evolve(np.outer(psi, psi.conj()), H, chs, 400, record_every=50)
for t, a, b in zip(times, res.rhos, me):
    print(f"t = {t:5.2f}  excited pop: ensemble {a[1, 1].real:.4f}  master {b[1, 1].real:.4f}  "
          f"trace distance {tj.trace_distance(a, b):.4f}")

# no-jump class: dressed propagator against the sampled frequency
trace = tj.class_traces(psi, H, chs, (), 400)[0][0]
p_stay = tj.outcome_probability([], 0, 400, sched, [trace])
print(f"no-jump class: predicted {p_stay:.4f}, sampled {res.frequencies()[()]:.4f}")
