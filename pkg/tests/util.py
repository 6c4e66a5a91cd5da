"""Shared helpers for the test suite."""

import numpy as np


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    """Elementwise |a - n| <= rtol * max(|a|, |n|) + atol."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    assert a.shape == n.shape, f"gradient shapes differ: {a.shape} vs {n.shape}"
    tol = rtol * np.maximum(np.abs(a), np.abs(n)) + atol
    err = np.abs(a - n)
    worst = (err - tol).max()
    assert (err <= tol).all(), (
        f"gradient mismatch: worst excess {worst:.3e}, "
        f"max abs err {err.max():.3e}"
    )
