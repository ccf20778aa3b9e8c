"""Risk certificates for near block-triangular forms, white-box block checks and candidate extraction."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import EXACT, RiskQuery, epsilon_bar, epsilon_from_eta, min_samples_for, sbar_from_eta
from .errors import DimensionMismatch, EtaTooLarge, TooManyGroups
from .linalg import DEFAULT_RANK_TOL, SpectralSplit, orthonormal_complement, skewness, spectral_norm, sym_eigendecompose
from .lyapunov import LyapunovSolution
from .systems import SwitchedSystem


@dataclass(frozen=True)
class RiskChain:
    """``eta = Q chi epsbar``, then ``sbar`` and ``eps = sqrt(sbar^-2 - 1)``."""

    n: int
    Q: int
    chi: float
    epsbar: float
    eta: float
    sbar: float
    eps: float


def risk_chain(n, Q, chi, epsbar) -> RiskChain:
    eta = Q * chi * epsbar
    if not eta < 0.5:
        raise EtaTooLarge(f"eta = {eta:.6g} >= 1/2", eta=eta)
    return RiskChain(n, Q, chi, epsbar, eta, sbar_from_eta(n, eta), epsilon_from_eta(n, eta))


@dataclass
class Certificate:
    beta: float
    N: int
    k: int
    epsbar: float
    Q: int
    chi: float
    eta: float
    sbar: float
    eps: float
    gamma: float
    lam: np.ndarray  # diagonal of Lambda (square roots of the positive eigenvalues of P)
    U: np.ndarray  # kernel columns first
    r: int
    mode: str = EXACT
    chi_sensitivity: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.eta < 0.5:
            raise EtaTooLarge(f"eta = {self.eta:.6g} >= 1/2", eta=self.eta)
        self.U = np.asarray(self.U, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if np.abs(self.U.T @ self.U - np.eye(self.U.shape[1])).max() > 1e-10:
            raise ValueError("certificate basis is not orthonormal")
        if len(self.lam) != self.n - self.r:
            raise DimensionMismatch("Lambda size does not match the image dimension")

    @property
    def n(self):
        return self.U.shape[0]

    @property
    def bound_lower_left(self):
        return self.eps * self.gamma

    @property
    def bound_lower_right(self):
        return math.sqrt(1 + self.eps**2) * self.gamma

    @property
    def kernel(self):
        return self.U[:, : self.r]

    @property
    def image(self):
        return self.U[:, self.r :]

    def to_dict(self):
        return {
            "beta": self.beta, "N": self.N, "k": self.k, "epsbar": self.epsbar, "epsbar_mode": self.mode,
            "Q": self.Q, "chi": self.chi, "eta": self.eta, "sbar": self.sbar, "eps": self.eps,
            "gamma": self.gamma, "Lambda": self.lam.tolist(), "U": self.U.tolist(), "r": self.r,
            "bound_lower_left": self.bound_lower_left, "bound_lower_right": self.bound_lower_right,
            "chi_sensitivity": self.chi_sensitivity, "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["beta"], d["N"], d["k"], d["epsbar"], d["Q"], d["chi"], d["eta"], d["sbar"], d["eps"],
                   d["gamma"], np.array(d["Lambda"]), np.array(d["U"]), d["r"], d["epsbar_mode"],
                   d.get("chi_sensitivity", {}), d.get("provenance", {}))


def chi_sensitivity(sol: LyapunovSolution):
    """Skewness if the kernel had one dimension more or less."""
    out = {}
    for r in (sol.split.r - 1, sol.split.r + 1):
        if 0 <= r < sol.split.n:
            split = sym_eigendecompose(sol.P, sol.split.rank_tol, kernel_dim=r)
            if split.eigenvalues.min() > split.rank_tol * split.eigenvalues.max():
                out[f"r={r}"] = skewness(split)
    return out


def build_certificate(sol: LyapunovSolution, beta, N, Q, support_k, mode=EXACT, provenance=None) -> Certificate:
    """Risk level, skewness and eigenbasis of ``sol`` assembled into a certificate.

    Refuses with :class:`EtaTooLarge` when ``eta >= 1/2``; the error carries the
    smallest sample size that would succeed at this skewness.
    """
    split = sol.split
    if split.r == split.n:
        raise ValueError("P has no positive eigenvalue")
    chi = sol.chi if sol.chi is not None else skewness(split)
    epsbar = epsilon_bar(RiskQuery(int(N), int(support_k), beta, mode))
    eta = Q * chi * epsbar
    if not eta < 0.5:
        need = min_samples_for(1 / (2 * Q * chi), support_k, beta, mode)
        raise EtaTooLarge(f"eta = {eta:.6g} >= 1/2 with N = {N}; N >= {need} would succeed at chi = {chi:.6g}",
                          eta=eta, suggested_n=need)
    chain = risk_chain(split.n, Q, chi, epsbar)
    return Certificate(beta, int(N), int(support_k), epsbar, Q, chi, chain.eta, chain.sbar, chain.eps,
                       sol.gamma, split.lam, split.U, split.r, mode, chi_sensitivity(sol), dict(provenance or {}))


@dataclass
class ModeBlocks:
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    norm21: float  # ||Lambda A21||
    norm22: float  # ||Lambda A22 Lambda^-1||
    ok21: bool
    ok22: bool

    def assemble(self):
        return np.block([[self.A11, self.A12], [self.A21, self.A22]])


@dataclass
class BlockDecomposition:
    modes: list
    bound21: float
    bound22: float

    @property
    def holds(self):
        return all(m.ok21 and m.ok22 for m in self.modes)

    def to_dict(self):
        return {"bound_lower_left": self.bound21, "bound_lower_right": self.bound22, "holds": self.holds,
                "modes": [{"norm_lower_left": m.norm21, "norm_lower_right": m.norm22,
                           "lower_left_ok": m.ok21, "lower_right_ok": m.ok22} for m in self.modes]}


def decompose(sys: SwitchedSystem, cert: Certificate, rtol=1e-12) -> BlockDecomposition:
    """Blocks of ``U' A_q U`` and the weighted norms compared with the certified bounds."""
    if sys.n != cert.n:
        raise DimensionMismatch(f"system has n={sys.n}, certificate basis has n={cert.n}")
    r, U, lam = cert.r, cert.U, cert.lam
    b21, b22 = cert.bound_lower_left, cert.bound_lower_right
    modes = []
    for A in sys.matrices:
        M = U.T @ A @ U
        A11, A12, A21, A22 = M[:r, :r], M[:r, r:], M[r:, :r], M[r:, r:]
        n21 = spectral_norm(lam[:, None] * A21)
        n22 = spectral_norm(lam[:, None] * A22 / lam[None, :])
        modes.append(ModeBlocks(A11, A12, A21, A22, n21, n22, n21 <= b21 * (1 + rtol), n22 <= b22 * (1 + rtol)))
    return BlockDecomposition(modes, b21, b22)


# -- candidate extraction --------------------------------------------------------------


def _row_groups(K, tol):
    """Single-linkage groups of coordinates whose kernel rows lie within ``tol``."""
    n = K.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    D = np.linalg.norm(K[:, None, :] - K[None, :, :], axis=2)
    for i, j in zip(*np.nonzero(np.triu(D <= tol, 1))):
        parent[find(i)] = find(j)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


def extract_binary_candidates(kernel_basis, tol=0.1, cap=1024):
    """0/1 vectors whose direction lies within ``acos(1 - tol)`` of the kernel span.

    Coordinates with nearby kernel rows are grouped; indicators of the groups
    and of their unions are the candidates, tested by projection.
    """
    K = np.asarray(kernel_basis, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    if K.shape[1] and np.abs(K.T @ K - np.eye(K.shape[1])).max() > 1e-8:
        raise ValueError("kernel basis must have orthonormal columns")
    groups = _row_groups(K, tol)
    if len(groups) > 10:
        raise TooManyGroups(f"{len(groups)} coordinate groups (at most 10 supported)")
    out = []
    tested = 0
    for size in range(1, len(groups) + 1):
        for combo in itertools.combinations(range(len(groups)), size):
            if tested >= cap:
                break
            tested += 1
            u = np.zeros(K.shape[0])
            for g in combo:
                u[groups[g]] = 1.0
            if np.linalg.norm(K.T @ u) / np.linalg.norm(u) >= 1 - tol:
                out.append(u)
    return out


def ternary_candidate(v, tol=0.1):
    """Round ``v / max|v|`` to ``{-1, 0, 1}``; ``None`` if the result is not within ``acos(1 - tol)`` of ``v``."""
    v = np.asarray(v, dtype=float).ravel()
    u = np.round(v / np.abs(v).max())
    if not np.any(u):
        return None
    c = abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return u if c >= 1 - tol else None


def fixed_projector_solution(kernel, gamma, max_violation=0.0):
    """Lyapunov 'solution' ``P = U2 U2'`` for a hypothesised kernel (``Lambda = I``, ``chi = 1``).

    The projector is deliberately not rescaled to trace one so that the
    certificate reads its image block with ``Lambda = I``. The basis is
    ``[kernel, U2]`` with the kernel columns exactly as given (orthonormalised).
    """
    K = np.asarray(kernel, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    if np.abs(K.T @ K - np.eye(K.shape[1])).max() > 1e-10:
        K = np.linalg.qr(K)[0]
    U2 = orthonormal_complement(K)
    n, r = K.shape
    P = U2 @ U2.T
    split = SpectralSplit(np.hstack([K, U2]), r, np.ones(n - r), DEFAULT_RANK_TOL,
                          np.concatenate([np.ones(n - r), np.zeros(r)]))
    return LyapunovSolution(P, float(gamma), float(n - r), float(max_violation), split, 1.0, status="fixed"), P
