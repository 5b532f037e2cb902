import numpy as np
import scipy.sparse as sp


def random_problem(rng, n, d, density=None):
    """Gaussian matrix (dense, or sparse at ``density`` with no zero columns) and right-hand side."""
    if density is None:
        A = rng.standard_normal((n, d))
    else:
        A = sp.random(n, d, density=density, format="csc", random_state=rng, data_rvs=rng.standard_normal).toarray()
        for j in np.flatnonzero(~A.any(axis=0)):
            A[rng.integers(n), j] = 1.0 + abs(rng.standard_normal())
        A = sp.csc_array(A)
    return A, rng.standard_normal(n)


def well_conditioned(rng, n, d, cond=10.0):
    """Full-column-rank ``n x d`` matrix with condition number ``cond``."""
    U, _ = np.linalg.qr(rng.standard_normal((n, d)))
    V, _ = np.linalg.qr(rng.standard_normal((d, d)))
    s = np.geomspace(1.0, 1.0 / cond, d)
    return (U * s) @ V.T


def energy(A, e):
    Ae = A @ e
    return float(Ae @ Ae)
