"""Hidden-network analyses built on the certificate: mixed-component refutation and stable opinion vectors.

``run_pipeline`` chains the whole workflow on a white-box system: an
exploratory free-``P`` solve on a small sample, a kernel guess from the
widest eigenvalue gap, a structured candidate, a fixed-projector ``gamma*``
over a large streamed sample, the certificate, and the application verdict.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bounds
from .bounds import FIXED, SupportRule, support_bound
from .certificate import (
    Certificate,
    build_certificate,
    decompose,
    extract_binary_candidates,
    fixed_projector_solution,
    ternary_candidate,
)
from .errors import BasisMismatch, CertificateRefused, KernelNotOneDimensional, NoPower
from .fixtures import consensus8, opinion4
from .linalg import dominant_gap_rank, principal_angles
from .lyapunov import LyapunovProblem, gamma_star_fixed_P, minimize_gamma, solve_free_P
from .sampling import draw_observations
from .systems import SwitchedSystem, check_disconnected, indicator

log = logging.getLogger(__name__)


def leverage_ratio(eps: float, gamma: float) -> float:
    """``c = (1 - sqrt(1+eps^2) gamma) / (eps gamma)``: how strongly a fixed vector must favour the kernel."""
    if not (0 < eps and gamma > 0):
        raise ValueError("eps and gamma must be positive")
    top = 1 - math.sqrt(1 + eps * eps) * gamma
    if top <= 0:
        raise NoPower(f"sqrt(1+eps^2)*gamma = {1 - top:.6g} >= 1: the bounds carry no leverage")
    return top / (eps * gamma)


def cosine_floor(c: float) -> float:
    """``(1 + c^-2)^(-1/2)``, the certified lower bound on the kernel share of a fixed vector."""
    return 1 / math.sqrt(1 + c**-2) if c > 0 else 0.0


def cosine_deficit(c: float) -> float:
    """``1 - cosine_floor(c)`` without cancellation."""
    if c <= 0:
        return 1.0
    x = c**-2
    r = math.sqrt(1 + x)
    return x / ((1 + r) * r)


def distance_from_cosine(cmin: float) -> float:
    """Largest ``|u - v|`` between unit vectors with ``<u, v> >= cmin``."""
    return math.sqrt(2 * (1 - cmin))


@dataclass(frozen=True)
class PartitionHypothesis:
    groups: tuple  # tuples of 1-based node indices

    def __post_init__(self):
        groups = tuple(tuple(sorted(int(j) for j in g)) for g in self.groups)
        if any(len(g) == 0 for g in groups):
            raise ValueError("groups must be nonempty")
        flat = [j for g in groups for j in g]
        if len(set(flat)) != len(flat):
            raise ValueError("groups must be disjoint")
        if sorted(flat) != list(range(1, len(flat) + 1)):
            raise ValueError("groups must cover 1..n")
        object.__setattr__(self, "groups", groups)

    @property
    def n(self):
        return sum(len(g) for g in self.groups)

    @property
    def sizes(self):
        return tuple(len(g) for g in self.groups)

    def kernel_basis(self):
        return np.stack([indicator(self.n, g) / math.sqrt(len(g)) for g in self.groups], axis=1)


@dataclass
class MixedVerdict:
    verdict: str  # REFUTED | INCONCLUSIVE
    c: float
    rho: float
    rho_squared: float
    max_f: float
    argmax: tuple
    patterns: int


def mixed_occupancy_max(sizes):
    """Max of ``sum(n_j^2/|G_j|) / sum(n_j)`` over mixed occupancy vectors.

    Mixed means at least two groups are touched and not every node is taken;
    enumeration is exhaustive.
    """
    n = sum(sizes)
    best, arg, count = -1.0, None, 0
    for occ in itertools.product(*(range(s + 1) for s in sizes)):
        if sum(1 for k in occ if k) < 2 or sum(occ) > n - 1:
            continue
        count += 1
        f = sum(k * k / s for k, s in zip(occ, sizes)) / sum(occ)
        if f > best + 1e-15:
            best, arg = f, occ
    return best, arg, count


def refute_with_ratio(sizes, c) -> MixedVerdict:
    rho = cosine_floor(c)
    best, arg, count = mixed_occupancy_max(sizes)
    if arg is None:  # a single group cannot host a mixed component
        return MixedVerdict("REFUTED", c, rho, rho * rho, float("nan"), (), 0)
    verdict = "REFUTED" if best < rho * rho else "INCONCLUSIVE"
    return MixedVerdict(verdict, c, rho, rho * rho, best, tuple(int(k) for k in arg), count)


def refute_mixed_components(hyp: PartitionHypothesis, cert: Certificate, tol=1e-6) -> MixedVerdict:
    """Can a connected component straddle two hypothesised groups in some mode?

    A component with indicator ``u`` would satisfy ``A u = u``, which the
    certified blocks only allow when ``u`` leans on the kernel by at least the
    cosine floor. The verdict is REFUTED when no mixed occupancy pattern can.
    """
    if cert.n != hyp.n:
        raise BasisMismatch(f"certificate has n={cert.n}, hypothesis has n={hyp.n}")
    if cert.r != len(hyp.groups):
        raise BasisMismatch(f"kernel dimension {cert.r} differs from {len(hyp.groups)} groups")
    if np.abs(cert.lam - 1).max() > tol:
        raise BasisMismatch("refutation needs Lambda = I")
    B = hyp.kernel_basis()
    if np.abs(np.linalg.norm(cert.kernel.T @ B, axis=0) - 1).max() > tol:
        raise BasisMismatch("kernel columns are not spanned by the normalised group indicators")
    try:
        c = leverage_ratio(cert.eps, cert.gamma)
    except NoPower:
        c = 0.0
    return refute_with_ratio(hyp.sizes, c)


@dataclass
class StableVectorReport:
    u: np.ndarray
    c: float
    c_min: float
    deficit: float  # 1 - c_min, the figure quoted as a distance in the original analysis
    delta: float  # rigorous bound on min |u -+ v|

    def __post_init__(self):
        assert 0 < self.c_min <= 1
        assert abs(self.delta - math.sqrt(2 * self.deficit)) <= 1e-12

    def to_dict(self):
        d = asdict(self)
        d["u"] = np.asarray(self.u).tolist()
        return d


def stable_vector_bound(u, cert: Certificate, tol=1e-6) -> StableVectorReport:
    """Where any unit stable vector must lie, given a one-dimensional certified kernel spanned by ``u``."""
    if cert.r != 1:
        raise KernelNotOneDimensional(f"kernel has dimension {cert.r}")
    u = np.asarray(u, dtype=float).ravel()
    u = u / np.linalg.norm(u)
    if abs(abs(cert.kernel[:, 0] @ u) - 1) > tol:
        raise BasisMismatch("u does not span the certified kernel")
    if np.abs(cert.lam - 1).max() > tol:
        raise BasisMismatch("stable-vector bound needs Lambda = I")
    c = leverage_ratio(cert.eps, cert.gamma)
    deficit = cosine_deficit(c)
    return StableVectorReport(u, c, 1 - deficit, deficit, math.sqrt(2 * deficit))


def common_fixed_vectors(sys: SwitchedSystem, tol=1e-10):
    """White-box basis of ``{v : A_q v = v for all q}``."""
    M = np.vstack([A - np.eye(sys.n) for A in sys.matrices])
    _, s, Vt = np.linalg.svd(M)
    return Vt[np.sum(s > tol):].T


# -- pipeline -------------------------------------------------------------------------


REFERENCE_N = {"consensus": 247_122_000, "opinion": 8_142_000}


@dataclass
class PipelineConfig:
    seed: int = 0
    n_small: int = 2000
    n_large: int = 10_000_000
    beta: float = 0.01
    gamma_mode: str | float = "min"  # exploratory solve: "min" or a fixed gamma
    epsbar_mode: str = FIXED
    candidate_tol: float = 0.1
    threads: int = 1
    extrapolate_n: int | None = None

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**known)
        cfg.validate()
        return cfg

    def validate(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.n_small < 1 or self.n_large < 1:
            raise ValueError("sample sizes must be at least 1")
        if self.gamma_mode != "min" and not float(self.gamma_mode) > 0:
            raise ValueError("gamma_mode must be 'min' or a positive number")
        if self.epsbar_mode not in bounds.MODES:
            raise ValueError(f"epsbar_mode must be one of {bounds.MODES}")


@dataclass
class PipelineResult:
    report: dict
    certificate: Certificate | None = None
    refusal: CertificateRefused | None = None
    figures: dict = field(default_factory=dict)
    spectrum: np.ndarray | None = None
    kernel_rank: int = 0


def exploratory_solve(sys, cfg: PipelineConfig):
    obs = draw_observations(sys, cfg.n_small, cfg.seed)
    if cfg.gamma_mode == "min":
        X, Y = obs.arrays()
        hi = float(np.max(np.linalg.norm(Y, axis=1) / np.linalg.norm(X, axis=1))) * (1 + 1e-6) + 1e-12
        gamma, sol = minimize_gamma(LyapunovProblem(obs, "min", threads=cfg.threads), 0.0, hi, 1e-3)
    else:
        gamma = float(cfg.gamma_mode)
        sol = solve_free_P(LyapunovProblem(obs, gamma, threads=cfg.threads))
    return gamma, sol


def _hypothesis_from_candidates(cands, n):
    """Minimal binary candidates as a partition, when they are disjoint and cover every node."""
    minimal = [c for c in cands if not any(o is not c and np.all(o <= c) and o.sum() < c.sum() for o in cands)]
    groups = [tuple(int(j) + 1 for j in np.flatnonzero(c)) for c in minimal]
    try:
        return PartitionHypothesis(tuple(groups)) if sum(map(len, groups)) == n else None
    except ValueError:
        return None


def run_pipeline(sys: SwitchedSystem, cfg: PipelineConfig, kind: str = "auto") -> PipelineResult:
    """Exploratory solve, candidate, fixed-projector gamma*, certificate and verdict."""
    cfg.validate()
    n, Q = sys.n, sys.Q
    rep = {"config": asdict(cfg), "kind": kind, "system": {"n": n, "Q": Q}, "complete": False}
    g_small, sol = exploratory_solve(sys, cfg)
    r = dominant_gap_rank(sol.spectrum)
    sol = sol.with_rank(r)
    rep["exploratory"] = {"N": cfg.n_small, "gamma": g_small, "objective": sol.objective,
                          "max_violation": sol.max_violation, "status": sol.status, "iterations": sol.iterations,
                          "kernel_rank": r, **sol.gap_report(), "kernel": sol.split.kernel.tolist()}
    res = PipelineResult(rep, spectrum=sol.spectrum, kernel_rank=r)
    if r == 0:
        rep["status"] = "no-kernel"
        rep["complete"] = True
        return res

    if kind == "auto":
        kind = "opinion" if r == 1 else "consensus"
    hyp, u = None, None
    if kind == "consensus":
        cands = extract_binary_candidates(sol.split.kernel, cfg.candidate_tol)
        rep["candidates"] = [c.astype(int).tolist() for c in cands]
        hyp = _hypothesis_from_candidates(cands, n)
        if hyp is None or len(hyp.groups) != r:
            rep["status"] = "no-structured-candidate"
            rep["complete"] = True
            return res
        rep["hypothesis"] = [list(g) for g in hyp.groups]
        K = hyp.kernel_basis()
    else:
        if r != 1:
            rep["status"] = "kernel-not-one-dimensional"
            rep["complete"] = True
            return res
        u = ternary_candidate(sol.split.kernel[:, 0], cfg.candidate_tol)
        if u is None:
            rep["status"] = "no-structured-candidate"
            rep["complete"] = True
            return res
        rep["candidate"] = u.astype(int).tolist()
        K = (u / np.linalg.norm(u))[:, None]
    rep["candidate_angle"] = float(principal_angles(K, sol.split.kernel).max())

    fixed, P = fixed_projector_solution(K, 1.0)
    big = draw_observations(sys, cfg.n_large, cfg.seed + 1)
    gamma = gamma_star_fixed_P(big, P, cfg.threads)
    fixed.gamma = gamma
    k = support_bound(SupportRule(convexity="quasi-convex"), n, P_fixed=True)
    rep["large"] = {"N": cfg.n_large, "gamma_star": gamma, "support_k": k, "P": "projector onto candidate complement"}
    prov = {"seed": cfg.seed, "samples": f"generated: seed {cfg.seed + 1}, N {cfg.n_large}, not persisted",
            "solver": {"exploratory": "log-barrier interior point", "tol_feas": 1e-8, "tol_opt": 1e-6}}

    def verdict(cert):
        out = {}
        if hyp is not None:
            out["mixed_components"] = asdict(refute_mixed_components(hyp, cert))
        if u is not None:
            try:
                out["stable_vector"] = stable_vector_bound(u, cert).to_dict()
            except NoPower as exc:
                out["stable_vector"] = {"status": "NoPower", "reason": str(exc)}
        return out

    try:
        cert = build_certificate(fixed, cfg.beta, cfg.n_large, Q, k, cfg.epsbar_mode, prov)
    except CertificateRefused as exc:
        res.refusal = exc
        rep["status"] = type(exc).__name__
        rep["refusal"] = {"reason": str(exc), "eta": getattr(exc, "eta", None),
                          "suggested_n": getattr(exc, "suggested_n", None)}
    else:
        res.certificate = cert
        rep["certificate"] = cert.to_dict()
        rep["verdict"] = verdict(cert)
        rep["white_box"] = decompose(sys, cert).to_dict()
        rep["status"] = "certified"

    other = bounds.EXACT if cfg.epsbar_mode == FIXED else FIXED
    rep["epsbar_other_mode"] = {"mode": other,
                                "epsbar": bounds.epsilon_bar(bounds.RiskQuery(cfg.n_large, k, cfg.beta, other))}
    if cfg.extrapolate_n:
        try:
            ext = build_certificate(fixed, cfg.beta, cfg.extrapolate_n, Q, k, cfg.epsbar_mode, prov)
            rep["extrapolated"] = {"N": cfg.extrapolate_n, "note": "same gamma*, risk level at this N",
                                   "certificate": {key: v for key, v in ext.to_dict().items() if key != "U"},
                                   "verdict": verdict(ext)}
        except CertificateRefused as exc:
            rep["extrapolated"] = {"N": cfg.extrapolate_n, "refusal": str(exc)}

    if kind == "consensus":
        rep["white_box"] = rep.get("white_box", {})
        rep["white_box"]["groups_disconnected"] = [
            [bool(check_disconnected(A, g)) for g in hyp.groups] for A in sys.matrices]
    if kind == "opinion":
        V = common_fixed_vectors(sys)
        rep["white_box"] = rep.get("white_box", {})
        rep["white_box"]["fixed_space_dim"] = int(V.shape[1])
        if V.shape[1] == 1:
            rep["white_box"]["abs_cos_candidate_fixed"] = float(abs(V[:, 0] @ K[:, 0]))
    rep["complete"] = res.refusal is None
    return res


DEMOS = {"consensus": consensus8, "opinion": opinion4}


def run_demo(kind: str, cfg: PipelineConfig | None = None) -> PipelineResult:
    """Run the pipeline on a built-in network and extrapolate the certificate to the reference sample size."""
    if kind not in DEMOS:
        raise ValueError(f"kind must be one of {sorted(DEMOS)}")
    cfg = cfg or PipelineConfig()
    if cfg.extrapolate_n is None:
        cfg.extrapolate_n = REFERENCE_N[kind]
    return run_pipeline(DEMOS[kind](), cfg, kind)
