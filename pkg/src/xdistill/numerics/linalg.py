"""Symmetric eigendecomposition by cyclic Jacobi rotations.

Self-contained kernel backing the canonical-correlation analysis; the
matrices involved there are small (tens of rows), where Jacobi is both
simple and accurate.
"""

from __future__ import annotations

import numpy as np


class SymmetryError(ValueError):
    pass


def sym_eig(a: np.ndarray, sym_tol: float = 1e-10, max_sweeps: int = 100):
    """
    Eigendecomposition of a real symmetric matrix.

    Parameters
    ----------
    a : (n, n) array
        Symmetric within `sym_tol` (absolute, relative to the largest entry).

    Returns
    -------
    w : (n,) array
        Eigenvalues in descending order.
    q : (n, n) array
        Orthonormal eigenvectors as columns, so a = q @ diag(w) @ q.T.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SymmetryError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > sym_tol * scale:
        raise SymmetryError(f"matrix is not symmetric within {sym_tol}")

    n = a.shape[0]
    m = 0.5 * (a + a.T)
    q = np.eye(n)
    if n == 1:
        return m.diagonal().copy(), q

    # Summed directly over the off-diagonal entries; the subtraction form
    # sum(m^2) - sum(diag^2) cancels catastrophically once the off-diagonal
    # mass drops below the rounding noise of the full sum.
    diag_mask = ~np.eye(n, dtype=bool)
    off_tol = n * n * (1e-13 * max(1.0, float(np.abs(m).max()))) ** 2
    prev_off = np.inf
    for _ in range(max_sweeps):
        off = float(np.sum(m[diag_mask] ** 2))
        if off <= off_tol or off >= prev_off:
            break
        prev_off = off
        for p in range(n - 1):
            for r in range(p + 1, n):
                apq = m[p, r]
                if apq == 0.0:
                    continue
                # Classic stable rotation (Golub & Van Loan).
                diff = m[r, r] - m[p, p]
                if abs(apq) < 1e-200 * abs(diff):
                    # Pivot is negligible next to the diagonal gap; the
                    # exact rotation angle underflows, so just zero it.
                    m[p, r] = m[r, p] = 0.0
                    continue
                tau = diff / (2.0 * apq)
                if abs(tau) > 1e100:
                    t = -0.5 / tau
                elif tau >= 0:
                    t = -1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = 1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                m[[p, r], :] = rot @ m[[p, r], :]
                m[:, [p, r]] = m[:, [p, r]] @ rot.T
                q[:, [p, r]] = q[:, [p, r]] @ rot.T

    w = m.diagonal().copy()
    order = np.argsort(w)[::-1]
    return w[order], q[:, order]
