"""Compare sampled moments against the exact Wick-enumeration values.

Prints the worst canonical fourth-moment entry error over a 4x sample-size
ladder; the error should shrink roughly like 1 / sqrt(N), i.e. by about a
factor 2 per rung.  Ends with a serialization round trip.
"""

import numpy as np

from mixmom.instances import random_instance
from mixmom.model import SmoothingConfig, sample, smooth_perturb
from mixmom.moments import empirical_moments, exact_moments
from mixmom.serialization import momentset_from_bytes, momentset_to_bytes


def main():
    n, k = 8, 2
    truth = smooth_perturb(
        random_instance(n, k, seed=3, zero_mean=True),
        SmoothingConfig(rho=0.1, seed=3, zero_mean=True),
    )
    exact = exact_moments(truth, orders=(4, 6))

    print(f"n={n}, k={k}: max |m4 entry error| by sample count")
    prev = None
    ms = None
    for n_samples in (4_000, 16_000, 64_000, 256_000):
        batch = sample(truth, n_samples, seed=10)
        ms = empirical_moments(batch, orders=(4, 6))
        err = float(np.max(np.abs(ms.m4.values - exact.m4.values)))
        note = f"  (x{prev / err:.2f} better)" if prev else ""
        print(f"  N = {n_samples:>7}: {err:.3e}{note}")
        prev = err

    buf = momentset_to_bytes(ms)
    back = momentset_from_bytes(buf)
    assert np.array_equal(back.m4.values, ms.m4.values)
    assert back.n_samples == ms.n_samples
    print(f"serialized the last set to {len(buf)} bytes and read it back")


if __name__ == "__main__":
    main()
