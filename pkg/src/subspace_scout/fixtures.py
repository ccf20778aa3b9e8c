"""Built-in systems: the two application networks and planted-subspace generators.

The consensus network keeps nodes {1..5} and {6..8} disconnected in all three
modes. The opinion network is structurally balanced with respect to
``[1, -1, 1, 1]``, so that vector is fixed by every mode.
"""

from __future__ import annotations

import numpy as np

from .linalg import orthonormalize
from .systems import Edge, GraphSpec, SwitchedSystem, build_consensus, build_opinion, indicator, undirected

CONSENSUS_GROUPS = ((1, 2, 3, 4, 5), (6, 7, 8))
OPINION_VECTOR = np.array([1.0, -1.0, 1.0, 1.0])


def consensus8_spec() -> GraphSpec:
    modes = (
        undirected([(1, 2), (2, 3), (3, 4), (4, 5), (5, 1), (1, 3)]) + undirected([(6, 7), (7, 8)]),
        undirected([(1, 4), (4, 2), (2, 5), (5, 3), (3, 1), (2, 4)])
        + [Edge(6, 8), Edge(8, 7), Edge(7, 6), Edge(6, 7)],
        undirected([(1, 2), (1, 3), (1, 4), (1, 5), (2, 3), (4, 5)]) + undirected([(6, 8), (7, 8), (6, 7)]),
    )
    return GraphSpec(8, modes)


def _balanced(pairs, u=OPINION_VECTOR):
    out = []
    for a, b in pairs:
        s = int(u[a - 1] * u[b - 1])
        out += [Edge(a, b, s), Edge(b, a, s)]
    return out


def opinion4_spec() -> GraphSpec:
    k4 = [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]
    modes = tuple(_balanced([p for p in k4 if p != drop]) for drop in [(1, 2), (1, 3), (3, 4)])
    return GraphSpec(4, modes, signed=True)


def consensus8() -> SwitchedSystem:
    return build_consensus(consensus8_spec())


def opinion4() -> SwitchedSystem:
    return build_opinion(opinion4_spec())


def consensus8_kernel():
    """Normalised group indicators ``[u1/sqrt(5), u2/sqrt(3)]``."""
    cols = [indicator(8, g) / np.sqrt(len(g)) for g in CONSENSUS_GROUPS]
    return np.stack(cols, axis=1)


def random_orthogonal(n, rng):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def planted_system(n=4, r=2, Q=3, rate=0.9, expansion=5.0, seed=0):
    """System with an exactly invariant ``r``-dim subspace.

    In a random orthonormal basis each mode is block upper-triangular: the
    invariant block is ``expansion`` times an orthogonal matrix, the
    complement block has spectral norm ``rate``. Returns ``(system, basis)``
    where ``basis`` (n x r) spans the invariant subspace.
    """
    rng = np.random.default_rng(seed)
    W = random_orthogonal(n, rng)
    mats = []
    for _ in range(Q):
        A11 = expansion * random_orthogonal(r, rng) if r else np.zeros((0, 0))
        A12 = rng.standard_normal((r, n - r))
        A22 = rng.standard_normal((n - r, n - r))
        A22 *= rate / np.linalg.norm(A22, 2)
        B = np.block([[A11, A12], [np.zeros((n - r, r)), A22]])
        mats.append(W @ B @ W.T)
    return SwitchedSystem(np.array(mats)), orthonormalize(W[:, :r])


def random_graph_spec(n, Q, p, rng, signed=False):
    """Erdos-Renyi style directed edges per mode (property tests)."""
    modes = []
    for _ in range(Q):
        edges = []
        for a in range(1, n + 1):
            for b in range(1, n + 1):
                if a != b and rng.random() < p:
                    sign = int(rng.choice([-1, 1])) if signed else 1
                    edges.append(Edge(a, b, sign))
        modes.append(tuple(edges))
    return GraphSpec(n, tuple(modes), signed)


FIXTURES = {
    "consensus8": consensus8,
    "opinion4": opinion4,
}


def load_fixture(name: str) -> SwitchedSystem:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
