"""Small dense solvers shared by the pursuit and baseline fits."""

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

MAX_JITTER = 1e-4
# smallest accepted squared Cholesky pivot, relative to the largest diagonal entry
PIVOT_RTOL = 1e-14


class SingularSystemError(LinAlgError):
    """Raised when a symmetric system stays singular after jitter escalation."""


def spd_solve(A, b, jitter: float = 0.0, max_jitter: float = MAX_JITTER):
    """Solve ``(A + jitter * I) x = b`` for symmetric positive (semi)definite ``A``.

    On a failed or badly conditioned Cholesky factorization the jitter is
    escalated by a factor of ten (starting from 1e-12 when zero) until it
    exceeds ``max_jitter``.  Returns ``(x, jitter_used)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(np.diag(A)), initial=0.0)), np.finfo(float).tiny)
    eye = np.eye(A.shape[0])
    j = float(jitter)
    while True:
        try:
            c = cho_factor(A + j * eye, lower=False, check_finite=True)
            piv = np.diag(c[0])
            if np.min(piv) ** 2 >= PIVOT_RTOL * scale:
                return cho_solve(c, b), j
        except (LinAlgError, ValueError):
            pass
        j = 1e-12 if j == 0.0 else j * 10.0
        if j > max_jitter * (1 + 1e-9):
            raise SingularSystemError(
                f"system of size {A.shape[0]} is singular even with jitter {max_jitter:g}"
            )
