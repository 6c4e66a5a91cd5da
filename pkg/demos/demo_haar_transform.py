"""Classical and learnable Haar transforms on a toy signal.

Walks through: one decomposition level by hand, perfect reconstruction,
energy preservation, the multi-level recursion, and how the learnable
variant reduces to the classical one at the Haar initialisation.
"""

import numpy as np

from haarmixer import (
    Tensor,
    classical_scale_params,
    haar_forward_classical,
    haar_inverse_classical,
    haar_multilevel_forward,
    haar_multilevel_inverse,
    init_scale_params,
    learnable_haar_forward,
    learnable_haar_inverse,
)

# --- one level on a hand-sized signal --------------------------------------

signal = np.array([3.0, 1.0, 0.0, 4.0])
approx, detail = haar_forward_classical(signal)
print("signal :", signal)
print("approx :", approx)            # pair sums / sqrt(2)
print("detail :", detail)            # pair differences / sqrt(2)

restored = haar_inverse_classical(approx, detail)
print("restored:", restored, "max err:", np.abs(restored - signal).max())

energy_in = (signal ** 2).sum()
energy_out = (approx ** 2).sum() + (detail ** 2).sum()
print(f"energy: in={energy_in:.6f} out={energy_out:.6f} (orthonormal transform)")

# --- multi-level recursion ---------------------------------------------------

rng = np.random.default_rng(0)
long_signal = np.cumsum(rng.standard_normal(64))     # a random walk
details, final_approx = haar_multilevel_forward(long_signal, levels=4)
print("\nmulti-level row counts:", [len(d) for d in details], "+",
      len(final_approx), "approx samples")
roundtrip = haar_multilevel_inverse(details, final_approx)
print("multi-level max reconstruction err:", np.abs(roundtrip - long_signal).max())

# --- the learnable transform -------------------------------------------------

# At sigma=0 the parameters are exactly the Haar constants, so the
# per-column results coincide with the classical transform.
x = rng.standard_normal((8, 5))
classical = classical_scale_params(5)
a, d = learnable_haar_forward(Tensor(x), classical)
a_ref, _ = haar_forward_classical(x[:, 0])
print("\nlearnable (classical init) column 0 approx:", np.round(a.data[:, 0], 4))
print("classical reference                       :", np.round(a_ref, 4))

rec = learnable_haar_inverse(a, d, classical)
print("learnable round-trip max err:", np.abs(rec.data - x).max())

# With noise the vectors start near Haar but are free to train away from it.
noisy = init_scale_params(5, level=0, sigma=0.05, rng=rng)
print("\nnoisy alpha (near 1/sqrt2 = 0.7071):", np.round(noisy.alpha.data, 4))
