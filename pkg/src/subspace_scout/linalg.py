"""Small dense linear algebra: Jacobi eigensolver, spectral splits, skewness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotOrthonormal, NotPSD, ZeroMatrix

DEFAULT_RANK_TOL = 1e-7


def _fix_signs(V):
    """Flip each column so that its largest-magnitude entry is positive."""
    V = np.array(V, dtype=float, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def as_symmetric(M, rtol=1e-10):
    """Return ``M`` as a symmetric float array, rejecting visibly asymmetric input."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {M.shape}")
    scale = max(np.abs(M).max(), 1.0)
    if np.abs(M - M.T).max() > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (M + M.T)


def jacobi_eigh(M, tol=1e-14, max_sweeps=60):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(w, V)`` with ``M = V @ diag(w) @ V.T``, eigenvalues unsorted.
    Sweeps stop once the off-diagonal Frobenius mass drops below
    ``tol * ||M||_F``.
    """
    A = as_symmetric(M).copy()
    n = A.shape[0]
    V = np.eye(n)
    fro = np.linalg.norm(A)
    if fro == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return np.diag(A).copy(), V


@dataclass(frozen=True)
class SpectralSplit:
    """Kernel/image split of a PSD matrix ``P = U diag(0,..,0, lam**2) U^T``.

    ``U`` holds the ``r`` kernel-side columns first, then the image-side
    columns ordered by decreasing eigenvalue. ``eigenvalues`` are the positive
    eigenvalues of ``P`` itself; ``lam`` are their square roots (the diagonal
    of the scaling matrix in the block bounds).
    """

    U: np.ndarray
    r: int
    eigenvalues: np.ndarray
    rank_tol: float
    spectrum: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def lam(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    @property
    def kernel(self) -> np.ndarray:
        return self.U[:, : self.r]

    @property
    def image(self) -> np.ndarray:
        return self.U[:, self.r :]

    @property
    def gaps(self) -> np.ndarray:
        """Ratios ``w[i+1] / w[i]`` of consecutive eigenvalues in decreasing order."""
        w = self.spectrum
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(w[:-1] > 0, w[1:] / np.where(w[:-1] > 0, w[:-1], 1.0), 0.0)

    def reconstruct(self) -> np.ndarray:
        d = np.concatenate([np.zeros(self.r), self.eigenvalues])
        return (self.U * d) @ self.U.T

    def p_tilde(self) -> np.ndarray:
        """``U diag(1,..,1, lam**2) U^T``: kernel eigenvalues replaced by one."""
        d = np.concatenate([np.ones(self.r), self.eigenvalues])
        return (self.U * d) @ self.U.T


def sym_eigendecompose(M, rank_tol=DEFAULT_RANK_TOL, kernel_dim=None) -> SpectralSplit:
    """Split a PSD matrix into kernel and image parts.

    Eigenvalues at or below ``rank_tol * lambda_max`` go to the kernel. Passing
    ``kernel_dim`` forces the ``kernel_dim`` smallest eigenvalues into the
    kernel instead (used when the rank is chosen from the spectral gap).
    """
    M = as_symmetric(M)
    n = M.shape[0]
    w, V = jacobi_eigh(M)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    wmax = max(w[0], 0.0)
    if w[-1] < -rank_tol * wmax or (wmax == 0.0 and w[-1] < 0.0):
        raise NotPSD(f"smallest eigenvalue {w[-1]:.3e} below -{rank_tol:g} * {wmax:.3e}")
    if kernel_dim is None:
        r = int(np.sum(w <= rank_tol * wmax))
    else:
        r = int(kernel_dim)
        if not 0 <= r <= n:
            raise ValueError(f"kernel_dim must lie in [0, {n}]")
    image = _fix_signs(V[:, : n - r])
    kernel = _fix_signs(V[:, n - r :][:, ::-1])
    U = np.hstack([kernel, image])
    return SpectralSplit(
        U=U,
        r=r,
        eigenvalues=np.maximum(w[: n - r], 0.0),
        rank_tol=float(rank_tol),
        spectrum=w,
    )


def dominant_gap_rank(spectrum, floor=1e-2, tiny=1e-15):
    """Kernel dimension at the widest multiplicative eigenvalue gap.

    Only gaps whose upper eigenvalue is at least ``floor * lambda_max`` count,
    so a cluster of small eigenvalues is kept together. Returns 0 when the
    spectrum is flat.
    """
    w = np.sort(np.asarray(spectrum, dtype=float))
    wmax = w[-1]
    if wmax <= 0:
        return len(w)
    lower = np.maximum(w, tiny * wmax)
    best, best_ratio = 0, 1.0
    for r in range(1, len(w)):
        if w[r] < floor * wmax:
            continue
        ratio = w[r] / lower[r - 1]
        if ratio > best_ratio:
            best, best_ratio = r, ratio
    return best


def skewness(split, n=None) -> float:
    """Skewness ``lambda_min^-1 * prod(lambda_j)^(1/n)`` of a PSD matrix.

    ``split`` is either a :class:`SpectralSplit` or the array of positive
    eigenvalues of ``P`` (not their square roots).
    """
    if isinstance(split, SpectralSplit):
        eig = split.eigenvalues
        n = split.n if n is None else n
    else:
        eig = np.asarray(split, dtype=float)
        if n is None:
            raise ValueError("n is required when passing raw eigenvalues")
    eig = eig[eig > 0]
    if eig.size == 0:
        raise ZeroMatrix("skewness undefined for the zero matrix")
    return float(np.exp(np.sum(np.log(eig)) / n - np.log(eig.min())))


def orthonormal_complement(B, tol=1e-10):
    """Columns spanning the orthogonal complement of ``span(B)``."""
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, k = B.shape
    if k and np.abs(B.T @ B - np.eye(k)).max() > tol:
        raise NotOrthonormal("input columns are not orthonormal")
    if k == 0:
        return np.eye(n)
    Q, _ = np.linalg.qr(B, mode="complete")
    return _fix_signs(Q[:, k:])


def orthonormalize(B):
    """Orthonormal basis of ``span(B)`` (thin QR, reproducible signs)."""
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q, _ = np.linalg.qr(B)
    return _fix_signs(Q)


def spectral_norm(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def principal_angles(A, B):
    """Principal angles (radians, descending) between two column spans."""
    from scipy.linalg import subspace_angles

    return subspace_angles(np.atleast_2d(A), np.atleast_2d(B))
