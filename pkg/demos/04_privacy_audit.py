"""Empirically testing a privacy claim from the outside.

The auditor runs a mechanism many times on two neighboring datasets
(one user's record swapped), bins the outputs, and compares per-bin
frequencies with Wilson intervals. A mechanism that truly satisfies its
declared epsilon keeps every frequency ratio under e^eps; the noiseless
mean blows straight past it.
"""

import numpy as np

import userdp as u

bound, eps, tau, trials = 1.0, 1.0, 0.25, 20000
a = u.scalar_dataset([-0.61, -0.35, -0.2, 0.1, 0.22, 0.4, 0.55, 0.7], bound)
b = a.replace_user(0, [[-0.9]])
print(f"neighbors differ in user 0: {a.users[0][0, 0]:+.2f} vs {b.users[0][0, 0]:+.2f}")

noisy = u.dp_ratio_audit(
    lambda data, rng: u.winsorized_mean_1d(data.stacked().ravel(), eps, tau, bound, rng).value,
    a, b, eps, 0.0, trials, u.RandomSource(81000), name="winsorized_mean_1d",
)
print(f"{noisy.mechanism}: max frequency ratio {noisy.max_ratio:.2f} "
      f"(cap {np.exp(eps) * 1.25:.2f}) -> {'pass' if noisy.passed else 'FAIL'}")

broken = u.dp_ratio_audit(
    lambda data, rng: float(data.stacked().mean()),
    a, b, eps, 0.0, trials, u.RandomSource(81001), name="no_noise_mean",
)
print(f"{broken.mechanism}: max frequency ratio {broken.max_ratio:.0f} "
      f"-> {'pass' if broken.passed else 'FAIL'}")

print("report dict keys:", sorted(broken.to_dict().keys()))
