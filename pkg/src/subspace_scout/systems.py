"""Switched linear systems, graph-built dynamics and invariance checks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMode,
    DimensionMismatch,
    PlainEdgesRejected,
    SignedEdgesRejected,
)
from .linalg import orthonormal_complement, spectral_norm


@dataclass(frozen=True)
class SwitchedSystem:
    """Modes ``A_1..A_Q`` of ``x(t+1) = A_sigma(t) x(t)``. Modes are 1-based."""

    matrices: np.ndarray  # shape (Q, n, n), read-only

    def __post_init__(self):
        A = np.array(self.matrices, dtype=float)
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or A.shape[0] < 1 or A.shape[1] != A.shape[2] or A.shape[1] < 1:
            raise DimensionMismatch(f"expected (Q, n, n) matrices, got shape {A.shape}")
        A.setflags(write=False)
        object.__setattr__(self, "matrices", A)

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    @property
    def Q(self) -> int:
        return self.matrices.shape[0]

    def mode(self, q: int) -> np.ndarray:
        if not 1 <= q <= self.Q:
            raise BadMode(f"mode {q} outside 1..{self.Q}")
        return self.matrices[q - 1]

    def step(self, x, q: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionMismatch(f"state has shape {x.shape}, expected ({self.n},)")
        return self.mode(q) @ x

    def simulate(self, x0, modes) -> np.ndarray:
        """Trajectory under an explicit switching sequence (demo use only)."""
        out = [np.asarray(x0, dtype=float)]
        for q in modes:
            out.append(self.step(out[-1], int(q)))
        return np.array(out)


def step(sys: SwitchedSystem, x, q: int) -> np.ndarray:
    return sys.step(x, q)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    sign: int = 1


@dataclass(frozen=True)
class GraphSpec:
    """Per-mode directed edge sets on nodes ``1..n``.

    An edge ``src -> dst`` makes ``dst`` a neighbour of ``src``: row ``src`` of
    the mode matrix averages in the value of node ``dst``.
    """

    n: int
    modes: tuple
    signed: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one node")
        if len(self.modes) < 1:
            raise ValueError("graph needs at least one mode")
        modes = []
        for edges in self.modes:
            seen = {}
            for e in edges:
                e = e if isinstance(e, Edge) else Edge(*e)
                if e.src == e.dst:
                    raise ValueError(f"self-loop on node {e.src}")
                if not (1 <= e.src <= self.n and 1 <= e.dst <= self.n):
                    raise ValueError(f"edge {e.src}->{e.dst} outside 1..{self.n}")
                if e.sign not in (1, -1):
                    raise ValueError(f"edge sign must be +1 or -1, got {e.sign}")
                seen[(e.src, e.dst)] = e
            modes.append(tuple(seen[k] for k in sorted(seen)))
        object.__setattr__(self, "modes", tuple(modes))

    @classmethod
    def from_dict(cls, doc: dict) -> "GraphSpec":
        modes = []
        signed = doc.get("kind") == "signed"
        for edges in doc["modes"]:
            mode = []
            for e in edges:
                if "sign" in e:
                    signed = True
                mode.append(Edge(int(e["from"]), int(e["to"]), int(e.get("sign", 1))))
            modes.append(tuple(mode))
        if doc.get("kind") == "plain" and signed:
            raise ValueError("kind 'plain' but edges carry signs")
        return cls(int(doc["n"]), tuple(modes), signed)

    def to_dict(self) -> dict:
        modes = []
        for edges in self.modes:
            if self.signed:
                modes.append([{"from": e.src, "to": e.dst, "sign": e.sign} for e in edges])
            else:
                modes.append([{"from": e.src, "to": e.dst} for e in edges])
        return {"n": self.n, "kind": "signed" if self.signed else "plain", "modes": modes}

    @classmethod
    def load(cls, path) -> "GraphSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def undirected(pairs, sign=1):
    """Both directions of each pair, for building symmetric interaction patterns."""
    out = []
    for a, b in pairs:
        out.append(Edge(a, b, sign))
        out.append(Edge(b, a, sign))
    return out


def build_consensus(spec: GraphSpec) -> SwitchedSystem:
    if spec.signed:
        raise SignedEdgesRejected("consensus dynamics take plain edges")
    mats = []
    for edges in spec.modes:
        A = np.eye(spec.n)
        for e in edges:
            A[e.src - 1, e.dst - 1] = 1.0
        A /= A.sum(axis=1, keepdims=True)
        mats.append(A)
    return SwitchedSystem(np.array(mats))


def build_opinion(spec: GraphSpec) -> SwitchedSystem:
    if not spec.signed:
        raise PlainEdgesRejected("opinion dynamics take signed edges")
    mats = []
    for edges in spec.modes:
        A = np.eye(spec.n)
        for e in edges:
            A[e.src - 1, e.dst - 1] = float(e.sign)
        counts = 1.0 + np.count_nonzero(A - np.diag(np.diag(A)), axis=1)
        mats.append(A / counts[:, None])
    return SwitchedSystem(np.array(mats))


@dataclass(frozen=True)
class InvarianceReport:
    invariant: bool
    residuals: tuple  # spectral norm of the lower-left block, per mode
    tol: float


def check_invariant_subspace(sys: SwitchedSystem, basis, tol=1e-10) -> InvarianceReport:
    """Is ``span(basis)`` invariant under every mode (up to ``tol``)?"""
    B = np.asarray(basis, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != sys.n:
        raise DimensionMismatch(f"basis has {B.shape[0]} rows, system has n={sys.n}")
    comp = orthonormal_complement(B)
    residuals = tuple(spectral_norm(comp.T @ A @ B) for A in sys.matrices)
    return InvarianceReport(all(r <= tol for r in residuals), residuals, tol)


def indicator(n, subset):
    """0/1 vector of a 1-based node subset."""
    u = np.zeros(n)
    for j in subset:
        u[int(j) - 1] = 1.0
    return u


def check_disconnected(A, subset, atol=1e-12) -> bool:
    """True iff the subset and its complement share no edge (``A u == u``)."""
    A = np.asarray(A, dtype=float)
    u = indicator(A.shape[0], subset)
    return bool(np.abs(A @ u - u).max() <= atol)


def save_matrices_csv(sys: SwitchedSystem, path):
    """Stack all modes row-major, ``Q*n`` rows of ``n`` values, 17 significant digits."""
    np.savetxt(path, sys.matrices.reshape(-1, sys.n), fmt="%.17g", delimiter=",")


def load_matrices_csv(path) -> SwitchedSystem:
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    n = rows.shape[1]
    if rows.shape[0] % n:
        raise DimensionMismatch(f"{rows.shape[0]} rows is not a multiple of n={n}")
    return SwitchedSystem(rows.reshape(-1, n, n))
