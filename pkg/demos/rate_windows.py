"""Where the Lorentzian rate turns negative, and what that does to layer weights."""
import numpy as np

from backflow import rate

prof = rate.RateProfile.lorentzian(0.2)
t_min, d_min = rate.first_minimum(prof)
print(f"first minimum of the rate: t = {t_min:.3f}, value = {d_min:.4f} ({rate.first_minimum_sign(prof)})")
print("negative windows up to t = 25:", [(round(a, 3), round(b, 3)) for a, b in rate.negative_windows(prof, 25.0)])

sched = rate.discretize(prof, 0.5, 50, target_p=0.15)
print("negative layers:", sched.negative_layers())
print("layer weights:", np.round(sched.p[:16], 3))

# the dip disappears once the coupling is weak enough
for r in (0.1, 0.2, 0.27, 0.28, 0.5):
    print(f"ratio {r:4.2f}: first minimum {rate.first_minimum_sign(rate.RateProfile.lorentzian(r))}")
