"""Dense complex-Hermitian linear algebra used by every solver.

All matrices are plain complex128 numpy arrays.  Inputs are validated for
finiteness and (where required) Hermitian symmetry, then symmetrized with
(A + A^H)/2 to absorb roundoff before factorization.  Problem sizes here
never exceed a few hundred, so O(n^3) LAPACK routines are always fine.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

HERMITIAN_RTOL = 1e-12


class NumericsError(ValueError):
    """Invalid matrix input (non-finite, non-Hermitian, or not HPD)."""


def _as_complex_matrix(A):
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A.real)) or not np.all(np.isfinite(A.imag)):
        raise NumericsError("matrix has non-finite entries")
    return A


def check_hermitian(A, rtol=HERMITIAN_RTOL):
    """Validate A = A^H within rtol (relative to ||A||_F) and return A."""
    A = _as_complex_matrix(A)
    scale = np.linalg.norm(A)
    dev = np.linalg.norm(A - A.conj().T)
    if dev > rtol * max(scale, 1.0):
        raise NumericsError(
            f"matrix is not Hermitian: asymmetry {dev:.3e} exceeds "
            f"{rtol:.1e} * max(||A||, 1) = {rtol * max(scale, 1.0):.3e}"
        )
    return A


def hermitian_part(A):
    """(A + A^H)/2."""
    A = np.asarray(A, dtype=np.complex128)
    return 0.5 * (A + A.conj().T)


def eig_hermitian(A):
    """Eigendecomposition of a Hermitian matrix.

    Returns (eigenvalues ascending, eigenvectors) with A q_i = lam_i q_i
    and unitary eigenvector matrix.  Input is symmetrized before the
    factorization so roundoff-level asymmetry cannot leak into results.
    """
    A = check_hermitian(A)
    vals, vecs = np.linalg.eigh(hermitian_part(A))
    return vals, vecs


def project_psd(A):
    """Nearest (Frobenius) positive semidefinite matrix to Hermitian A.

    Clips negative eigenvalues at zero: Q max(Lam, 0) Q^H.
    """
    A = check_hermitian(A)
    vals, vecs = np.linalg.eigh(hermitian_part(A))
    clipped = np.maximum(vals, 0.0)
    out = (vecs * clipped) @ vecs.conj().T
    return hermitian_part(out)


def solve_hpd(A, b):
    """Solve A x = b for Hermitian positive definite A via Cholesky."""
    A = check_hermitian(A)
    b = np.asarray(b, dtype=np.complex128)
    if not np.all(np.isfinite(b.real)) or not np.all(np.isfinite(b.imag)):
        raise NumericsError("right-hand side has non-finite entries")
    try:
        factor = cho_factor(hermitian_part(A), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"matrix is not positive definite: {exc}") from exc
    return cho_solve(factor, b)


def trace_real(A):
    """Real part of the trace (Hermitian traces are real up to roundoff)."""
    return float(np.trace(A).real)
