import numpy as np
import pytest

from oracles import cut_crossed

from subspace_scout.errors import BadMode, DimensionMismatch, PlainEdgesRejected, SignedEdgesRejected
from subspace_scout.fixtures import (
    CONSENSUS_GROUPS,
    OPINION_VECTOR,
    consensus8,
    consensus8_kernel,
    opinion4,
    random_graph_spec,
    random_orthogonal,
)
from subspace_scout.linalg import orthonormal_complement, spectral_norm
from subspace_scout.systems import (
    Edge,
    GraphSpec,
    SwitchedSystem,
    build_consensus,
    build_opinion,
    check_disconnected,
    check_invariant_subspace,
    load_matrices_csv,
    save_matrices_csv,
    step,
    undirected,
)


def test_step_examples():
    sys1 = SwitchedSystem(np.eye(3)[None])
    np.testing.assert_array_equal(step(sys1, [1.0, 0, 0], 1), [1.0, 0, 0])
    k2 = build_consensus(GraphSpec(2, (undirected([(1, 2)]),)))
    np.testing.assert_allclose(step(k2, [1.0, 0.0], 1), [0.5, 0.5])


def test_step_matches_matvec():
    rng = np.random.default_rng(0)
    sys_ = SwitchedSystem(rng.standard_normal((4, 5, 5)))
    x = rng.standard_normal(5)
    for q in range(1, 5):
        np.testing.assert_array_equal(sys_.step(x, q), sys_.matrices[q - 1] @ x)


def test_step_errors():
    sys_ = SwitchedSystem(np.eye(2)[None])
    with pytest.raises(BadMode):
        sys_.step([1.0, 0.0], 2)
    with pytest.raises(BadMode):
        sys_.step([1.0, 0.0], 0)
    with pytest.raises(DimensionMismatch):
        sys_.step([1.0, 0.0, 0.0], 1)
    with pytest.raises(DimensionMismatch):
        SwitchedSystem(np.zeros((2, 3, 4)))


def test_system_is_immutable():
    sys_ = SwitchedSystem(np.eye(2)[None])
    with pytest.raises(ValueError):
        sys_.matrices[0, 0, 0] = 2.0


def test_consensus_examples():
    np.testing.assert_array_equal(build_consensus(GraphSpec(2, ((),))).matrices[0], np.eye(2))
    np.testing.assert_allclose(build_consensus(GraphSpec(2, (undirected([(1, 2)]),))).matrices[0],
                               np.full((2, 2), 0.5))
    A = build_consensus(GraphSpec(3, (undirected([(1, 2), (2, 3)]),))).matrices[0]
    np.testing.assert_allclose(A, [[1 / 2, 1 / 2, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 2, 1 / 2]])


def test_directed_edge_semantics():
    # edge 1 -> 2: node 1 averages in node 2, node 2 is unaffected
    A = build_consensus(GraphSpec(2, ((Edge(1, 2),),))).matrices[0]
    np.testing.assert_allclose(A, [[0.5, 0.5], [0.0, 1.0]])


def test_opinion_examples():
    A = build_opinion(GraphSpec(2, (undirected([(1, 2)]),), signed=True)).matrices[0]
    np.testing.assert_allclose(A, np.full((2, 2), 0.5))
    A = build_opinion(GraphSpec(2, ((Edge(1, 2, -1), Edge(2, 1, -1)),), signed=True)).matrices[0]
    np.testing.assert_allclose(A, [[0.5, -0.5], [-0.5, 0.5]])


def test_opinion_row_sums():
    rng = np.random.default_rng(11)
    spec = random_graph_spec(4, 1, 0.6, rng, signed=True)
    A = build_opinion(spec).matrices[0]
    for j in range(1, 5):
        out = [e for e in spec.modes[0] if e.src == j]
        expected = (1 + sum(e.sign for e in out)) / (1 + len(out))
        assert A[j - 1].sum() == pytest.approx(expected, abs=1e-15)


def test_edge_kind_rejections():
    with pytest.raises(SignedEdgesRejected):
        build_consensus(GraphSpec(2, ((Edge(1, 2, -1),),), signed=True))
    with pytest.raises(PlainEdgesRejected):
        build_opinion(GraphSpec(2, ((Edge(1, 2),),)))
    with pytest.raises(ValueError):
        GraphSpec(2, ((Edge(1, 1),),))
    with pytest.raises(ValueError):
        GraphSpec(2, ((Edge(1, 3),),))


def test_graph_json_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    for signed in (False, True):
        spec = random_graph_spec(5, 3, 0.4, rng, signed=signed)
        spec.dump(tmp_path / "g.json")
        assert GraphSpec.load(tmp_path / "g.json") == spec


def test_matrices_csv_round_trip(tmp_path):
    sys_ = SwitchedSystem(np.random.default_rng(4).standard_normal((3, 4, 4)))
    save_matrices_csv(sys_, tmp_path / "m.csv")
    np.testing.assert_array_equal(load_matrices_csv(tmp_path / "m.csv").matrices, sys_.matrices)


def test_consensus_stochastic():
    rng = np.random.default_rng(20)
    for _ in range(200):
        n = int(rng.integers(1, 10))
        A = build_consensus(random_graph_spec(n, 2, rng.uniform(0, 0.7), rng)).matrices
        np.testing.assert_allclose(A.sum(axis=2), 1.0, atol=1e-15)
        assert A.min() >= 0 and A.max() <= 1


def test_invariance_examples():
    rng = np.random.default_rng(1)
    upper = SwitchedSystem(np.triu(rng.standard_normal((3, 4, 4))))
    rep = check_invariant_subspace(upper, np.eye(4)[:, :1])
    assert rep.invariant and max(rep.residuals) == 0
    assert check_invariant_subspace(consensus8(), consensus8_kernel()).invariant


def test_invariance_random_dense():
    rng = np.random.default_rng(9)
    sys_ = SwitchedSystem(rng.standard_normal((2, 6, 6)))
    B = random_orthogonal(6, rng)[:, :2]
    rep = check_invariant_subspace(sys_, B)
    C = orthonormal_complement(B)
    direct = [spectral_norm(C.T @ A @ B) for A in sys_.matrices]
    np.testing.assert_allclose(rep.residuals, direct, rtol=1e-12)
    assert not rep.invariant and min(rep.residuals) > 0.1


def test_invariance_perturbation():
    rng = np.random.default_rng(3)
    for _ in range(20):
        W = random_orthogonal(5, rng)
        B = np.triu(rng.standard_normal((2, 5, 5)))
        B[:, 2:, :2] = 0.0
        B[:, :2, :2] = rng.standard_normal((2, 2, 2))
        sys_ = SwitchedSystem(W @ B @ W.T)
        assert check_invariant_subspace(sys_, W[:, :2], tol=1e-10).invariant
        B[1, 3, 1] += 1e-3
        assert not check_invariant_subspace(SwitchedSystem(W @ B @ W.T), W[:, :2], tol=1e-6).invariant


def test_disconnected_examples():
    assert check_disconnected(build_consensus(GraphSpec(2, ((),))).matrices[0], {1})
    assert not check_disconnected(build_consensus(GraphSpec(2, (undirected([(1, 2)]),))).matrices[0], {1})
    for A in consensus8().matrices:
        assert check_disconnected(A, CONSENSUS_GROUPS[0])
        assert check_disconnected(A, CONSENSUS_GROUPS[1])


def test_disconnected_matches_graph_oracle():
    rng = np.random.default_rng(2024)
    disagreements = 0
    for _ in range(200):
        n = int(rng.integers(2, 10))
        spec = random_graph_spec(n, 1, rng.uniform(0.0, 0.4), rng)
        subset = {j for j in range(1, n + 1) if rng.random() < 0.5} or {1}
        A = build_consensus(spec).matrices[0]
        disagreements += check_disconnected(A, subset) == cut_crossed(spec, 0, subset)
    assert disagreements == 0


def test_opinion_fixture_fixed_vector():
    sys_ = opinion4()
    for A in sys_.matrices:
        np.testing.assert_allclose(A @ OPINION_VECTOR, OPINION_VECTOR, atol=1e-15)
