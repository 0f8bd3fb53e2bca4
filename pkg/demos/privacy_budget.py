"""How much noise does a generator need?

Walks the accountant for one class of 40 patients trained in batches of 16
for 30 epochs, then shows how the required noise moves with the class size.
"""

import numpy as np

from sgde.accountant import (calibrate_sigma, default_delta, epsilon_for, make_certificate,
                             rdp_subsampled_gaussian, MechanismParams)
from sgde.dp_optim import sampling_rate, steps_per_epoch

n, batch, epochs = 40, 16, 30
q = sampling_rate(n, batch)
steps = epochs * steps_per_epoch(n, batch)
delta = default_delta(n)
print(f"class of {n}: q={q:.3f}, {steps} steps, delta={delta:g}")

# one step at order 2 and order 32
for alpha in (2, 32):
    print(f"  per-step RDP at order {alpha:2d}, sigma=1: {rdp_subsampled_gaussian(1.0, q, alpha):.5f}")

sigma = calibrate_sigma(1.5, delta, q, steps)
eps, order = epsilon_for(sigma, q, steps, delta)
print(f"calibrated sigma={sigma:.3f} -> epsilon={eps:.4f} (best order {order})")

cert = make_certificate(MechanismParams(sigma, q, steps), n)
print("certificate fields:", sorted(cert.to_dict()))

# bigger classes buy privacy through a smaller sampling rate
print("\nclass size   sigma for eps<=1.5")
for size in (20, 40, 80, 160, 320, 640):
    qs, ts = sampling_rate(size, batch), epochs * steps_per_epoch(size, batch)
    print(f"{size:10d}   {calibrate_sigma(1.5, default_delta(size), qs, ts):.3f}")

# the knob nobody reports: how epsilon decays with noise at a fixed schedule
grid = np.geomspace(0.5, 8, 9)
print("\nsigma  " + "  ".join(f"{s:5.2f}" for s in grid))
print("eps    " + "  ".join(f"{epsilon_for(s, q, steps, delta)[0]:5.2f}" for s in grid))
