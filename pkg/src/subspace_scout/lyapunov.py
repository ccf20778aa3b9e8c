"""Minimum-Frobenius-norm common quadratic Lyapunov matrices from sampled one-step data.

The program solved here is

    minimise ||P||_F^2  s.t.  y_i' P y_i <= gamma^2 x_i' P x_i,  P >= 0,  trace P = 1,

with every constraint divided by ``|y_i|^2 + gamma^2 |x_i|^2``. ``P`` ranges over
an affine family ``P0 + sum_k theta_k E_k`` (all trace-one symmetric matrices
for the free structure); a log-barrier interior-point method with a phase-I
feasibility stage handles it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, InfeasibleAtUpperBound, MaxIterations, Unbounded
from .linalg import DEFAULT_RANK_TOL, SpectralSplit, dominant_gap_rank, skewness, sym_eigendecompose
from .sampling import ArrayObservations, ObservationSet

log = logging.getLogger(__name__)

WORKING_SET = 10_000


# -- P structures ------------------------------------------------------------------------


@dataclass(frozen=True)
class Free:
    """Any trace-one symmetric PSD matrix."""


@dataclass(frozen=True)
class Fixed:
    """A single given PSD matrix; nothing is optimised."""

    P: np.ndarray


@dataclass(frozen=True)
class Affine:
    """``P`` in the span of the given symmetric matrices (with trace one)."""

    basis: tuple


FREE = Free()


@dataclass
class LyapunovProblem:
    observations: ObservationSet
    gamma: float | str  # a positive value, or "min"
    structure: Free | Fixed | Affine = FREE
    tol_feas: float = 1e-8
    tol_opt: float = 1e-6
    threads: int = 1

    def __post_init__(self):
        if self.gamma != "min" and not float(self.gamma) > 0:
            raise ValueError("gamma must be positive or 'min'")
        if isinstance(self.structure, Fixed):
            P = np.asarray(self.structure.P, dtype=float)
            if np.linalg.eigvalsh(0.5 * (P + P.T)).min() < -1e-10 * max(1.0, np.abs(P).max()):
                raise ValueError("fixed P is not PSD")

    @property
    def n(self):
        return self.observations.n


@dataclass
class LyapunovSolution:
    P: np.ndarray
    gamma: float
    objective: float
    max_violation: float
    split: SpectralSplit
    chi: float | None
    iterations: int = 0
    status: str = "optimal"  # optimal | feasible-within-tolerance | fixed
    working_set: int = 0
    cuts: int = 0
    info: dict = field(default_factory=dict)

    @property
    def spectrum(self):
        return self.split.spectrum

    def gap_report(self):
        """Consecutive eigenvalue ratios and the rank suggested by the widest gap."""
        return {"spectrum": self.split.spectrum.tolist(), "ratios": self.split.gaps.tolist(),
                "gap_rank": dominant_gap_rank(self.split.spectrum)}

    def with_rank(self, r: int) -> "LyapunovSolution":
        """Same ``P`` with the ``r`` smallest eigenvalues declared kernel."""
        split = sym_eigendecompose(self.P, self.split.rank_tol, kernel_dim=r)
        chi = skewness(split) if r < split.n else None
        return LyapunovSolution(self.P, self.gamma, self.objective, self.max_violation, split, chi,
                                self.iterations, self.status, self.working_set, self.cuts, dict(self.info))


def make_solution(P, gamma, max_violation, rank_tol=DEFAULT_RANK_TOL, kernel_dim=None, **kw):
    split = sym_eigendecompose(P, rank_tol, kernel_dim=kernel_dim)
    chi = skewness(split) if split.r < split.n else None
    return LyapunovSolution(P, float(gamma), float(np.sum(P * P)), float(max_violation), split, chi, **kw)


# -- constraints -------------------------------------------------------------------------


def scaled_constraints(X, Y, gamma):
    """Rows ``vec(y y' - g^2 x x') / (|y|^2 + g^2 |x|^2)``; all-zero pairs are dropped."""
    g2 = float(gamma) ** 2
    scale = np.einsum("ij,ij->i", Y, Y) + g2 * np.einsum("ij,ij->i", X, X)
    keep = scale > 0
    X, Y, scale = X[keep], Y[keep], scale[keep]
    C = np.einsum("ij,ik->ijk", Y, Y) - g2 * np.einsum("ij,ik->ijk", X, X)
    return C.reshape(len(X), X.shape[1] ** 2) / scale[:, None]


def block_violations(b, P, gamma):
    g2 = float(gamma) ** 2
    num = np.einsum("ij,jk,ik->i", b.Y, P, b.Y) - g2 * np.einsum("ij,jk,ik->i", b.X, P, b.X)
    scale = np.einsum("ij,ij->i", b.Y, b.Y) + g2 * np.einsum("ij,ij->i", b.X, b.X)
    return np.where(scale > 0, num / np.where(scale > 0, scale, 1.0), -np.inf)


def max_violation(obs: ObservationSet, P, gamma, threads=1) -> float:
    """Largest scaled constraint value over the whole data set (independent pass)."""
    if obs.N == 0:
        return -np.inf
    return max(obs.map_blocks(lambda b: float(block_violations(b, P, gamma).max()), threads))


# -- parameterisation --------------------------------------------------------------------


def trace_zero_basis(n):
    """Frobenius-orthonormal basis of trace-zero symmetric ``n x n`` matrices."""
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1 / np.sqrt(2)
            out.append(E)
    for k in range(1, n):
        d = np.zeros(n)
        d[:k] = 1.0
        d[k] = -k
        out.append(np.diag(d / np.linalg.norm(d)))
    return np.array(out).reshape(-1, n, n)


@dataclass
class _Param:
    Z: np.ndarray  # n x m, columns spanning the ranges of the family
    P0: np.ndarray  # m x m, minimum-norm trace-one member
    E: np.ndarray  # d x m x m, orthonormal trace-zero directions

    def full(self, theta):
        Ph = self.P0 + np.tensordot(theta, self.E, 1) if len(self.E) else self.P0.copy()
        return self.Z @ Ph @ self.Z.T


def _parameterise(n, structure) -> _Param:
    if isinstance(structure, Free):
        return _Param(np.eye(n), np.eye(n) / n, trace_zero_basis(n))
    B = np.array([0.5 * (np.asarray(b, float) + np.asarray(b, float).T) for b in structure.basis])
    S = np.einsum("kij,kjl->il", B, B)
    w, V = np.linalg.eigh(S)
    Z = V[:, w > 1e-12 * max(w.max(), 1e-300)]
    Bh = np.einsum("ia,kij,jb->kab", Z, B, Z)
    m = Z.shape[1]
    flat = Bh.reshape(len(Bh), -1)
    _, sv, Vt = np.linalg.svd(flat, full_matrices=False)
    F = Vt[sv > 1e-12 * sv.max()].reshape(-1, m, m)
    t = np.einsum("kii->k", F)
    if np.linalg.norm(t) < 1e-12:
        raise ValueError("structure basis contains no matrix with nonzero trace")
    P0 = np.tensordot(t / (t @ t), F, 1)
    Qt, _ = np.linalg.qr(t[:, None], mode="complete")
    E = np.tensordot(Qt[:, 1:].T, F, 1) if len(t) > 1 else np.zeros((0, m, m))
    return _Param(Z, P0, E)


# -- barrier machinery -------------------------------------------------------------------


def _center(z, t, P0, E, Cg, g0, Qf, qf, shift=0.0, tol=1e-12, maxit=200, stop=None):
    """Newton minimisation of ``t (z'Qf z + qf'z) - sum log(-g) - logdet(P + shift I)``."""
    d = len(z)
    Ef = E.reshape(d, -1)
    I = np.eye(P0.shape[0])

    def parts(z):
        return P0 + np.tensordot(z, E, 1) + shift * I, -(g0 + Cg @ z)

    def phi(z):
        P, s = parts(z)
        if s.size and s.min() <= 0:
            return np.inf
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            return np.inf
        return t * (z @ Qf @ z + qf @ z) - np.log(s).sum() - 2 * np.log(np.diag(L)).sum()

    its = 0
    f0 = phi(z)
    for _ in range(maxit):
        if stop is not None and stop(z):
            break
        P, s = parts(z)
        w, V = np.linalg.eigh(P)
        R = (V / np.sqrt(w)) @ V.T
        W = np.einsum("ab,kbc,cd->kad", R, E, R).reshape(d, -1)
        grad = t * (2 * Qf @ z + qf) + Cg.T @ (1 / s) - Ef @ (R @ R).ravel()
        H = 2 * t * Qf + (Cg.T * (1 / s**2)) @ Cg + W @ W.T
        try:
            dx = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(H, grad, rcond=None)[0]
        dec = -grad @ dx
        its += 1
        if dec / 2 <= tol:
            break
        a = 1.0
        while True:
            f1 = phi(z + a * dx)
            if f1 <= f0 + 0.25 * a * (grad @ dx):
                break
            a *= 0.5
            if a < 1e-14:
                break
        if a < 1e-14 or not f1 < f0:
            break  # round-off floor reached
        z, f0 = z + a * dx, f1
    return z, its


def _phase_one(par, Cg, g0, maxit_total):
    """Minimise ``s`` subject to ``g <= s`` and ``P + s I > 0``.

    Returns ``(theta, s, lower_bound, iterations)``; stops as soon as ``s < 0``.
    """
    d, m_dim = len(par.E), par.P0.shape[0]
    Ea = np.concatenate([par.E, np.eye(m_dim)[None]], 0)
    Cga = np.hstack([Cg, -np.ones((len(Cg), 1))])
    z = np.zeros(d + 1)
    z[-1] = max(g0.max() if g0.size else 0.0, -np.linalg.eigvalsh(par.P0).min(), 0.0) + 1.0
    Qf = np.zeros((d + 1, d + 1))
    qf = np.zeros(d + 1)
    qf[-1] = 1.0
    m = len(g0) + m_dim
    t, total = 1.0, 0
    while True:
        z, its = _center(z, t, par.P0, Ea, Cga, g0, Qf, qf, stop=lambda z: z[-1] < 0)
        total += its
        if z[-1] < 0 or z[-1] - m / t > 0 or m / t < 1e-14:
            return z[:-1], z[-1], z[-1] - m / t, total
        if total > maxit_total:
            raise MaxIterations(f"phase I exceeded {maxit_total} Newton steps")
        t *= 20.0


def _reduced(par, C):
    """Constraint data in theta-coordinates: ``g(theta) = g0 + Cg theta``."""
    d, n = len(par.E), par.Z.shape[0]
    if len(C) == 0:
        return np.zeros((0, d)), np.zeros(0)
    Ch = np.einsum("ia,kij,jb->kab", par.Z, C.reshape(len(C), n, n), par.Z).reshape(len(C), -1)
    Cg = Ch @ par.E.reshape(d, -1).T if d else np.zeros((len(C), 0))
    return Cg, Ch @ par.P0.ravel()


def _feasibility(par, Cg, g0, tol_feas, maxit_total=20000):
    """Phase-I outcome: ``(theta, relax, status)``; raises :class:`Infeasible`."""
    if (g0.size == 0 or g0.max() < 0) and np.linalg.eigvalsh(par.P0).min() > 0:
        return np.zeros(len(par.E)), 0.0, "optimal", 0
    theta, s, lower, its = _phase_one(par, Cg, g0, maxit_total)
    if s < 0:
        return theta, 0.0, "optimal", its
    if lower > 0 or s > 10 * tol_feas:
        raise Infeasible(f"no feasible P: phase-I bound {max(lower, 0):.3e}, best violation {s:.3e}")
    # weakly feasible: relax by a hair beyond the phase-I value
    return theta, s + tol_feas, "feasible-within-tolerance", its


def _barrier_solve(par, C, tol_feas, tol_opt, maxit_total=20000):
    """Solve over the working constraints ``C`` (rows are vec'd scaled constraints)."""
    Cg, g0 = _reduced(par, C)
    theta, relax, status, total = _feasibility(par, Cg, g0, tol_feas, maxit_total)
    if len(par.E) == 0:
        return par.P0, total, status, relax
    G = np.einsum("kij,lij->kl", par.E, par.E)
    qf = 2 * np.einsum("kij,ij->k", par.E, par.P0)
    f_base = float(np.sum(par.P0 * par.P0))
    m = len(g0) + par.P0.shape[0]
    t = 1.0
    while True:
        theta, its = _center(theta, t, par.P0, par.E, Cg, g0 - relax, G, qf, shift=relax)
        total += its
        f = f_base + theta @ G @ theta + qf @ theta
        if m / t <= min(1e-3 * tol_opt, 1e-9 * max(1.0, f)):
            break
        if total > maxit_total:
            raise MaxIterations(f"barrier method exceeded {maxit_total} Newton steps")
        t *= 20.0
    return par.P0 + np.tensordot(theta, par.E, 1), total, status, relax


def _clip_psd(P):
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    if w.min() >= 0:
        return 0.5 * (P + P.T)
    w = np.maximum(w, 0.0)
    P = (V * w) @ V.T
    return P / np.trace(P)


def solve_free_P(prob: LyapunovProblem, working_set=WORKING_SET, max_cuts=50, rank_tol=DEFAULT_RANK_TOL):
    """Solve the program at fixed gamma for a free or affine ``P`` structure.

    Data sets larger than ``working_set`` go through a cutting-plane loop: the
    most violated constraints under ``I/n`` seed the working set, and after
    each solve the full stream is re-checked and violated rows are added.
    """
    if prob.gamma == "min":
        raise ValueError("solve_free_P needs a fixed gamma; use minimize_gamma")
    gamma, obs, n = float(prob.gamma), prob.observations, prob.n
    if isinstance(prob.structure, Fixed):
        P = np.asarray(prob.structure.P, float)
        v = max_violation(obs, P, gamma, prob.threads)
        if v > 10 * prob.tol_feas:
            raise Infeasible(f"fixed P violates a constraint by {v:.3e}")
        return make_solution(P, gamma, v, rank_tol, status="fixed")
    par = _parameterise(n, prob.structure)
    if obs.N <= working_set:
        X, Y = obs.arrays()
        Ph, its, status, _ = _barrier_solve(par, scaled_constraints(X, Y, gamma), prob.tol_feas, prob.tol_opt)
        P = _clip_psd(par.Z @ Ph @ par.Z.T)
        v = max_violation(obs, P, gamma) if obs.N else -np.inf
        return make_solution(P, gamma, v, rank_tol, iterations=its, status=status, working_set=obs.N)

    P_probe = par.Z @ par.P0 @ par.Z.T
    rows = _most_violated(obs, P_probe, gamma, working_set, -np.inf, prob.threads)
    total, cuts = 0, 0
    while True:
        X, Y = rows
        Ph, its, status, _ = _barrier_solve(par, scaled_constraints(X, Y, gamma), prob.tol_feas, prob.tol_opt)
        total += its
        P = _clip_psd(par.Z @ Ph @ par.Z.T)
        new = _most_violated(obs, P, gamma, working_set, prob.tol_feas, prob.threads)
        if len(new[0]) == 0:
            break
        cuts += 1
        if cuts > max_cuts:
            raise MaxIterations(f"cutting-plane loop exceeded {max_cuts} rounds")
        log.info("cut %d: adding %d violated constraints", cuts, len(new[0]))
        rows = (np.vstack([X, new[0]]), np.vstack([Y, new[1]]))
    v = max_violation(obs, P, gamma, prob.threads)
    return make_solution(P, gamma, v, rank_tol, iterations=total, status=status,
                         working_set=len(rows[0]), cuts=cuts)


def _most_violated(obs, P, gamma, M, above, threads):
    """The (at most) ``M`` rows with the largest scaled violation exceeding ``above``."""

    def pick(b):
        v = block_violations(b, P, gamma)
        idx = np.flatnonzero(v > above)
        if len(idx) > M:
            idx = idx[np.argsort(-v[idx], kind="stable")[:M]]
        return v[idx], b.X[idx], b.Y[idx]

    parts = obs.map_blocks(pick, threads)
    v = np.concatenate([p[0] for p in parts])
    X = np.vstack([p[1] for p in parts])
    Y = np.vstack([p[2] for p in parts])
    if len(v) > M:
        keep = np.argsort(-v, kind="stable")[:M]
        X, Y = X[keep], Y[keep]
    return X, Y


# -- gamma ------------------------------------------------------------------------------


def gamma_star_fixed_P(obs: ObservationSet, P, threads=1) -> float:
    """``max_i sqrt(y_i' P y_i / x_i' P x_i)`` in one streaming pass."""
    P = np.asarray(P, dtype=float)

    def worst(b):
        num = np.einsum("ij,jk,ik->i", b.Y, P, b.Y)
        den = np.einsum("ij,jk,ik->i", b.X, P, b.X)
        small = den <= 1e-14
        if np.any(small & (num > 1e-10)):
            i = int(np.flatnonzero(small & (num > 1e-10))[0])
            raise Unbounded(f"observation {b.start + i} lies in the kernel of P but its image does not")
        ratio = np.where(small, 0.0, num / np.where(small, 1.0, den))
        return float(ratio.max()) if len(ratio) else 0.0

    return float(np.sqrt(max(max(obs.map_blocks(worst, threads)), 0.0)))


def _feasible(prob, gamma):
    """Feasibility at ``gamma`` (terminal violation within ``10 tol_feas``)."""
    if isinstance(prob.structure, Fixed):
        return max_violation(prob.observations, prob.structure.P, gamma, prob.threads) <= 10 * prob.tol_feas
    try:
        if prob.observations.N <= WORKING_SET:
            par = _parameterise(prob.n, prob.structure)
            X, Y = prob.observations.arrays()
            Cg, g0 = _reduced(par, scaled_constraints(X, Y, gamma))
            _feasibility(par, Cg, g0, prob.tol_feas)
        else:
            trial = LyapunovProblem(prob.observations, gamma, prob.structure, prob.tol_feas, prob.tol_opt,
                                    prob.threads)
            solve_free_P(trial)
    except Infeasible:
        return False
    return True


def minimize_gamma(prob: LyapunovProblem, gamma_lo, gamma_hi, bisection_tol=1e-3):
    """Smallest feasible gamma in ``[gamma_lo, gamma_hi]`` by bisection (relative tolerance)."""
    if not 0 <= gamma_lo < gamma_hi:
        raise ValueError("need 0 <= gamma_lo < gamma_hi")
    if not _feasible(prob, gamma_hi):
        raise InfeasibleAtUpperBound(f"infeasible at gamma_hi={gamma_hi}")
    lo, hi = float(gamma_lo), float(gamma_hi)
    if lo > 0 and _feasible(prob, lo):
        hi = lo
    else:
        while hi - lo > bisection_tol * hi:
            mid = 0.5 * (lo + hi)
            if _feasible(prob, mid):
                hi = mid
            else:
                lo = mid
    final = LyapunovProblem(prob.observations, hi, prob.structure, prob.tol_feas, prob.tol_opt, prob.threads)
    sol = solve_free_P(final)
    sol.info["bisection"] = {"lo": lo, "hi": hi, "tol": bisection_tol}
    return hi, sol


def as_observations(X, Y) -> ArrayObservations:
    return ArrayObservations(X, Y)
