"""NumPy fallback for the pairwise-kernel core."""

import numpy as np


def sqdist_and_dot(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise squared Euclidean distances and dot products between row sets.

    Returns (D, G) with D[i, j] = ||a_i - b_j||^2 and G[i, j] = a_i . b_j.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"row sets must share their column dimension, got {a.shape} and {b.shape}")
    g = a @ b.T
    sq_a = np.einsum("ij,ij->i", a, a)
    sq_b = np.einsum("ij,ij->i", b, b)
    d = sq_a[:, None] + sq_b[None, :] - 2.0 * g
    # broadcasting cancellation can leave tiny negatives
    np.maximum(d, 0.0, out=d)
    return d, g
