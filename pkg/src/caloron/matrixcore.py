"""Small dense complex matrices and the geometry of Hermitian metrics.

Two layouts are supported. Single matrices are plain ``(n, n)`` arrays.
Fields of matrices are stored component-major, shape ``(n, n, *grid)``,
so that every matrix entry is a contiguous grid array; the ``b*``
functions below act node-wise on that layout.
"""
from __future__ import annotations

import numpy as np

HERMITIAN_TOL = 1e-12
EIG_FLOOR = 1e-14


class MatrixError(ValueError):
    pass


class PositivityError(MatrixError):
    """Raised when a metric loses positive definiteness."""


def _as_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise MatrixError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise MatrixError("non-finite matrix entries")
    return M


def _same_dim(A, B):
    if A.shape != B.shape:
        raise MatrixError(f"dimension mismatch {A.shape} vs {B.shape}")


def is_hermitian(X, tol: float = HERMITIAN_TOL) -> bool:
    X = np.asarray(X)
    return np.linalg.norm(X - X.conj().T) <= tol * max(1.0, np.linalg.norm(X))


def check_hermitian_pd(H, floor: float = EIG_FLOOR) -> np.ndarray:
    H = _as_square(H)
    if not is_hermitian(H):
        raise MatrixError("matrix is not Hermitian")
    lam = np.linalg.eigvalsh(H)
    if lam[0] <= floor * abs(lam[-1]):
        raise PositivityError(f"eigenvalue floor violated: min {lam[0]:.3e}, max {lam[-1]:.3e}")
    return H


def herm_exp(X) -> np.ndarray:
    """Spectral exponential of a Hermitian matrix."""
    X = _as_square(X)
    if not is_hermitian(X):
        raise MatrixError("herm_exp needs a Hermitian argument")
    lam, V = np.linalg.eigh((X + X.conj().T) / 2)
    return (V * np.exp(lam)) @ V.conj().T


def herm_log(H) -> np.ndarray:
    H = check_hermitian_pd(H)
    lam, V = np.linalg.eigh((H + H.conj().T) / 2)
    return (V * np.log(lam)) @ V.conj().T


def _rel_eigs(H1, H2) -> np.ndarray:
    # eigenvalues of H1^{-1} H2 through the Cholesky factor of H1
    L = np.linalg.cholesky(H1)
    Li = np.linalg.inv(L)
    K = Li @ H2 @ Li.conj().T
    return np.linalg.eigvalsh((K + K.conj().T) / 2)


def dist_d(H1, H2) -> float:
    """Distance sqrt(sum (ln lambda_i)^2), lambda_i the eigenvalues of H1^{-1} H2."""
    H1, H2 = check_hermitian_pd(H1), check_hermitian_pd(H2)
    _same_dim(H1, H2)
    return float(np.sqrt(np.sum(np.log(_rel_eigs(H1, H2)) ** 2)))


def sigma(H1, H2) -> float:
    """tr(H1^{-1}H2) + tr(H2^{-1}H1) - 2n."""
    H1, H2 = check_hermitian_pd(H1), check_hermitian_pd(H2)
    _same_dim(H1, H2)
    lam = _rel_eigs(H1, H2)
    return float(max(np.sum(lam + 1.0 / lam) - 2 * len(lam), 0.0))


def h_adjoint(H, M) -> np.ndarray:
    """Adjoint with respect to H: M -> H^{-1} M^* H."""
    H, M = _as_square(H), _as_square(M)
    _same_dim(H, M)
    return np.linalg.solve(H, M.conj().T @ H)


def h_inner(H, A, B) -> complex:
    """<A, B>_H = tr(H^{-1} A^* H B)."""
    return complex(np.trace(np.linalg.solve(H, A.conj().T @ H @ B)))


# ---------------------------------------------------------------------------
# component-major fields, shape (n, n, *grid)

def bmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    out = np.empty(np.broadcast_shapes(A.shape, B.shape), dtype=np.result_type(A, B))
    for i in range(n):
        for k in range(n):
            s = A[i, 0] * B[0, k]
            for j in range(1, n):
                s += A[i, j] * B[j, k]
            out[i, k] = s
    return out


def badj(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, 0, 1))


def bherm(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + badj(A))


def btrace(A: np.ndarray) -> np.ndarray:
    return sum(A[i, i] for i in range(A.shape[0]))


def bcomm(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return bmul(A, B) - bmul(B, A)


def beye(n: int, shape, dtype=complex) -> np.ndarray:
    out = np.zeros((n, n) + tuple(shape), dtype=dtype)
    for i in range(n):
        out[i, i] = 1.0
    return out


def to_stack(A: np.ndarray) -> np.ndarray:
    """(n, n, *grid) -> (*grid, n, n)."""
    return np.moveaxis(np.moveaxis(A, 0, -1), 0, -1)


def from_stack(A: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.moveaxis(A, -1, 0), -1, 0)


def binv(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    if n == 1:
        return 1.0 / A
    if n == 2:
        r = 1.0 / (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
        out = np.empty(A.shape, dtype=np.result_type(A, 1.0))
        np.multiply(A[1, 1], r, out=out[0, 0])
        np.multiply(A[0, 0], r, out=out[1, 1])
        np.multiply(A[0, 1], -r, out=out[0, 1])
        np.multiply(A[1, 0], -r, out=out[1, 0])
        return out
    return from_stack(np.linalg.inv(to_stack(A)))


def beig_herm(H: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a Hermitian field, shape (n, *grid)."""
    n = H.shape[0]
    if n == 1:
        return H[0].real.copy()
    if n == 2:
        with np.errstate(over="ignore", invalid="ignore"):
            m = 0.5 * (H[0, 0].real + H[1, 1].real)
            d = 0.5 * (H[0, 0].real - H[1, 1].real)
            r = np.sqrt(d * d + np.abs(H[0, 1]) ** 2)
            big = m + r
            det = H[0, 0].real * H[1, 1].real - np.abs(H[0, 1]) ** 2
            # det / big avoids cancellation in m - r for ill-conditioned metrics
            small = np.where(big > 0, det / np.where(big > 0, big, 1.0), m - r)
        return np.stack([small, big])
    return np.moveaxis(np.linalg.eigvalsh(to_stack(H)), -1, 0)


def bcheck_pd(H: np.ndarray, floor: float = EIG_FLOOR) -> None:
    if not np.all(np.isfinite(H)):
        raise PositivityError("non-finite metric entries")
    lam = beig_herm(H)
    bad = ~(lam[0] > floor * np.abs(lam[-1]))
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise PositivityError(f"eigenvalue floor violated at node {tuple(idx)}: "
                              f"min {lam[0][tuple(idx)]:.3e}")


def bchol(H: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a Hermitian positive field."""
    n = H.shape[0]
    if n == 1:
        return np.sqrt(H.real).astype(complex)
    if n == 2:
        out = np.zeros(H.shape, dtype=complex)
        l00 = np.sqrt(H[0, 0].real)
        l10 = H[1, 0] / l00
        out[0, 0] = l00
        out[1, 0] = l10
        out[1, 1] = np.sqrt(H[1, 1].real - (l10.real ** 2 + l10.imag ** 2))
        return out
    return from_stack(np.linalg.cholesky(to_stack(H)))


def _herm2(diag_avg, dd, d, b) -> np.ndarray:
    """[[avg + dd d, dd b], [dd conj(b), avg - dd d]]."""
    out = np.empty((2, 2) + np.shape(b), dtype=complex)
    t = dd * d
    out[0, 0] = diag_avg + t
    out[1, 1] = diag_avg - t
    np.multiply(dd, b, out=out[0, 1])
    np.conj(out[0, 1], out=out[1, 0])
    return out


def bfunc_herm(K: np.ndarray, f) -> np.ndarray:
    """Apply a scalar function spectrally to a Hermitian field."""
    n = K.shape[0]
    if n == 1:
        return f(K.real).astype(complex)
    if n == 2:
        m = 0.5 * (K[0, 0].real + K[1, 1].real)
        d = 0.5 * (K[0, 0].real - K[1, 1].real)
        b = K[0, 1]
        r = np.sqrt(d * d + b.real ** 2 + b.imag ** 2)
        fp, fm = f(m + r), f(m - r)
        avg = 0.5 * (fp + fm)
        # divided difference, continuous as r -> 0
        small = r < 1e-7 * (1.0 + np.abs(m))
        rs = np.where(small, 1.0, r)
        dd = np.where(small, 0.5 * (f(m + 1e-6) - f(m - 1e-6)) / 1e-6, 0.5 * (fp - fm) / rs)
        return _herm2(avg, dd, d, b)
    lam, V = np.linalg.eigh(to_stack(bherm(K)))
    out = (V * f(lam)[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
    return from_stack(out)


def bexp_herm(K: np.ndarray) -> np.ndarray:
    if K.shape[0] != 2:
        return bfunc_herm(K, np.exp)
    m = 0.5 * (K[0, 0].real + K[1, 1].real)
    d = 0.5 * (K[0, 0].real - K[1, 1].real)
    b = K[0, 1]
    r = np.sqrt(d * d + np.abs(b) ** 2)
    em = np.exp(m)
    c = em * np.cosh(r)
    small = r < 1e-4
    rs = np.where(small, 1.0, r)
    s = em * np.where(small, 1.0 + r * r / 6.0, np.sinh(rs) / rs)
    return _herm2(c, s, d, b)


def blog_herm(H: np.ndarray) -> np.ndarray:
    if H.shape[0] != 2:
        return bfunc_herm(H, np.log)
    m = 0.5 * (H[0, 0].real + H[1, 1].real)
    d = 0.5 * (H[0, 0].real - H[1, 1].real)
    b = H[0, 1]
    r = np.sqrt(d * d + np.abs(b) ** 2)
    det = H[0, 0].real * H[1, 1].real - np.abs(b) ** 2
    avg = 0.5 * np.log(det)
    x = r / m
    small = x < 1e-4
    xs = np.where(small, 0.5, x)
    s = np.where(small, 1.0 + x * x / 3.0, np.arctanh(xs) / xs) / m
    return _herm2(avg, s, d, b)


def blog_rel(Ha: np.ndarray, Hb: np.ndarray) -> np.ndarray:
    """log(Ha^{-1} Hb) node-wise, via L^{-*} log(L^{-1} Hb L^{-*}) L^*."""
    L = bchol(Ha)
    Li = binv(L)
    K = bherm(bmul(bmul(Li, Hb), badj(Li)))
    return bmul(bmul(badj(Li), blog_herm(K)), badj(L))


def brel_eigs(H1: np.ndarray, H2: np.ndarray) -> np.ndarray:
    """Eigenvalues of H1^{-1}H2 node-wise (real, positive)."""
    L = bchol(H1)
    Li = binv(L)
    K = bherm(bmul(bmul(Li, H2), badj(Li)))
    return beig_herm(K)


def bsigma(H1: np.ndarray, H2: np.ndarray) -> np.ndarray:
    n = H1.shape[0]
    if n <= 2:
        s = btrace(bmul(binv(H1), H2)).real + btrace(bmul(binv(H2), H1)).real - 2 * n
        return np.maximum(s, 0.0)
    lam = brel_eigs(H1, H2)
    return np.maximum(np.sum(lam + 1.0 / lam, axis=0) - 2 * n, 0.0)


def bdist(H1: np.ndarray, H2: np.ndarray) -> np.ndarray:
    lam = brel_eigs(H1, H2)
    return np.sqrt(np.sum(np.log(lam) ** 2, axis=0))


def bh_adjoint(H: np.ndarray, M: np.ndarray, Hinv: np.ndarray | None = None) -> np.ndarray:
    if Hinv is None:
        Hinv = binv(H)
    return bmul(bmul(Hinv, badj(M)), H)


def bnorm_h(H: np.ndarray, X: np.ndarray, Hinv: np.ndarray | None = None) -> np.ndarray:
    """Pointwise |X|_H = sqrt(tr(X^* H X H^{-1}))."""
    if Hinv is None:
        Hinv = binv(H)
    v = btrace(bmul(bmul(badj(X), H), bmul(X, Hinv))).real
    return np.sqrt(np.maximum(v, 0.0))


def bherm_exp_step(H: np.ndarray, B: np.ndarray, dt: float) -> np.ndarray:
    """H exp(dt B_s) with B_s the H-self-adjoint part of B.

    Computed as L exp(dt L^{-1} S L^{-*}) L^* with S = herm(H B), which is
    Hermitian and positive by construction.
    """
    S = bherm(bmul(H, B))
    L = bchol(H)
    Li = binv(L)
    K = bherm(bmul(bmul(Li, S), badj(Li)))
    E = bexp_herm(dt * K)
    return bherm(bmul(bmul(L, E), badj(L)))
