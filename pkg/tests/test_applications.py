import itertools
import math

import mpmath as mp
import numpy as np
import pytest

from subspace_scout.applications import (
    PartitionHypothesis,
    PipelineConfig,
    common_fixed_vectors,
    cosine_deficit,
    cosine_floor,
    leverage_ratio,
    mixed_occupancy_max,
    refute_mixed_components,
    refute_with_ratio,
    run_demo,
    run_pipeline,
    stable_vector_bound,
)
from subspace_scout.bounds import EXACT, FIXED
from subspace_scout.certificate import build_certificate, fixed_projector_solution, risk_chain
from subspace_scout.errors import BasisMismatch, KernelNotOneDimensional, NoPower
from subspace_scout.fixtures import CONSENSUS_GROUPS, OPINION_VECTOR, consensus8, consensus8_kernel, opinion4
from subspace_scout.systems import check_disconnected, indicator


def consensus_cert(N=247_122_000, gamma=0.69):
    sol, _ = fixed_projector_solution(consensus8_kernel(), gamma)
    return build_certificate(sol, 0.01, N, 3, 1, FIXED)


def opinion_cert(N=8_142_000, gamma=0.334):
    sol, _ = fixed_projector_solution(OPINION_VECTOR / 2, gamma)
    return build_certificate(sol, 0.01, N, 3, 1, FIXED)


def test_leverage_examples():
    assert leverage_ratio(0.122, 0.69) == pytest.approx(3.622, abs=0.01)
    assert leverage_ratio(0.020, 0.334) == pytest.approx(99.7, abs=0.1)
    with pytest.raises(NoPower):
        leverage_ratio(0.1, 1 / math.sqrt(1 + 0.01))
    with pytest.raises(ValueError):
        leverage_ratio(0.0, 0.5)


def test_cosine_floor_and_deficit():
    for c in (0.5, 3.62, 99.7, 1e6):
        assert cosine_floor(c) == pytest.approx(c / math.hypot(1, c), rel=1e-14)
        with mp.workdps(50):
            ref = float(1 - c / mp.sqrt(1 + mp.mpf(c) ** 2))
        assert cosine_deficit(c) == pytest.approx(ref, rel=1e-12)
    assert cosine_deficit(1e8) == pytest.approx(0.5e-16, rel=1e-6)
    assert cosine_floor(0.0) == 0.0 and cosine_deficit(-1.0) == 1.0


def test_refute_examples():
    v = refute_with_ratio((5, 3), 3.62)
    assert v.verdict == "REFUTED"
    assert v.max_f == pytest.approx(0.905, abs=0.001)
    assert v.argmax == (5, 2)
    assert v.rho >= 0.96
    assert refute_with_ratio((5, 3), 1e-3).verdict == "INCONCLUSIVE"
    # a single node per group: the only mixed subset is everything minus nothing, so no mixed pattern exists
    assert refute_with_ratio((1, 1), 10.0).verdict in {"INCONCLUSIVE", "REFUTED"}


def test_refute_two_singletons():
    # occupancy (1,1) takes every node, which is not a proper subset
    best, arg, count = mixed_occupancy_max((1, 1))
    assert arg is None and count == 0
    assert refute_with_ratio((1, 1), 10.0).patterns == 0


def brute_mixed_max(sizes):
    """Max of |K'u|^2/|u|^2 over proper node subsets touching at least two groups, by subset enumeration."""
    n = sum(sizes)
    starts = np.cumsum((0,) + tuple(sizes))
    K = np.zeros((n, len(sizes)))
    for j, s in enumerate(sizes):
        K[starts[j]:starts[j + 1], j] = 1 / math.sqrt(s)
    best = -1.0
    for mask in range(1, 2**n - 1):
        u = np.array([(mask >> i) & 1 for i in range(n)], dtype=float)
        touched = sum(u[starts[j]:starts[j + 1]].any() for j in range(len(sizes)))
        if touched >= 2:
            best = max(best, np.sum((K.T @ u) ** 2) / u.sum())
    return best


@pytest.mark.parametrize("sizes", [(2, 2), (5, 3), (1, 4), (3, 3, 2), (4, 1, 3), (2, 2, 2)])
def test_occupancy_max_matches_subset_enumeration(sizes):
    best, _, _ = mixed_occupancy_max(sizes)
    assert best == pytest.approx(brute_mixed_max(sizes), abs=1e-13)


def test_vertex_refinement():
    # the maximiser always sits at n_j in {0, 1, |G_j|-1, |G_j|}; {1, |G_j|} alone is not enough
    for m in (2, 3):
        for sizes in itertools.product(range(1, 9), repeat=m):
            if m == 3 and sorted(sizes) != list(sizes):
                continue
            best, _, _ = mixed_occupancy_max(sizes)
            if best < 0:
                continue
            allowed = [sorted({0, 1, s - 1, s}) for s in sizes]
            n = sum(sizes)
            restricted = max(
                sum(k * k / s for k, s in zip(occ, sizes)) / sum(occ)
                for occ in itertools.product(*allowed)
                if sum(1 for k in occ if k) >= 2 and sum(occ) < n)
            assert restricted == pytest.approx(best, abs=1e-14), sizes
    best, _, _ = mixed_occupancy_max((5, 3))
    vertex = max(sum(k * k / s for k, s in zip(occ, (5, 3))) / sum(occ)
                 for occ in itertools.product((1, 5), (1, 3)) if sum(occ) < 8)
    assert vertex < best - 0.01


def test_refute_mixed_components_fixture():
    cert = consensus_cert()
    v = refute_mixed_components(PartitionHypothesis(CONSENSUS_GROUPS), cert)
    assert v.verdict == "REFUTED"
    assert v.c >= 3.62 and v.rho >= 0.96
    assert v.max_f == pytest.approx(0.905, abs=0.001) and v.max_f < 0.9216


def test_refute_basis_mismatch():
    cert = consensus_cert()
    with pytest.raises(BasisMismatch):
        refute_mixed_components(PartitionHypothesis(((1, 2, 3, 4), (5, 6, 7, 8))), cert)
    with pytest.raises(BasisMismatch):
        refute_mixed_components(PartitionHypothesis(((1, 2, 3, 4, 5, 6, 7, 8, 9),)), cert)
    with pytest.raises(BasisMismatch):
        refute_mixed_components(PartitionHypothesis(((1, 2, 3), (4, 5), (6, 7, 8))), cert)


def test_partition_validation():
    with pytest.raises(ValueError):
        PartitionHypothesis(((1, 2), (2, 3)))
    with pytest.raises(ValueError):
        PartitionHypothesis(((1, 2), (4,)))
    with pytest.raises(ValueError):
        PartitionHypothesis(((1,), ()))
    assert PartitionHypothesis(((3, 1), (2,))).groups == ((1, 3), (2,))


def test_refuted_subsets_are_not_components():
    # every mixed subset of the fixture fails the disconnection check in some mode
    sys_ = consensus8()
    v = refute_mixed_components(PartitionHypothesis(CONSENSUS_GROUPS), consensus_cert())
    assert v.verdict == "REFUTED"
    g1, g2 = set(CONSENSUS_GROUPS[0]), set(CONSENSUS_GROUPS[1])
    for size in range(1, 8):
        for sub in itertools.combinations(range(1, 9), size):
            s = set(sub)
            if s & g1 and s & g2:
                assert not all(check_disconnected(A, sub) for A in sys_.matrices)
    for g in CONSENSUS_GROUPS:
        assert all(check_disconnected(A, g) for A in sys_.matrices)


def test_stable_vector_bound():
    rep = stable_vector_bound(OPINION_VECTOR, opinion_cert())
    assert rep.c >= 99
    assert rep.c_min >= 0.9999
    assert rep.deficit <= 1e-4
    assert rep.delta == pytest.approx(0.0100, abs=2e-4)
    # a unit vector at exactly cosine 0.9999 sits at distance sqrt(2e-4)
    assert math.sqrt(2 * (1 - 0.9999)) == pytest.approx(0.0141, abs=1e-4)


def test_stable_vector_matches_white_box():
    cert = opinion_cert()
    rep = stable_vector_bound(OPINION_VECTOR, cert)
    V = common_fixed_vectors(opinion4())
    assert V.shape[1] == 1
    assert abs(V[:, 0] @ rep.u) >= rep.c_min
    assert min(np.linalg.norm(rep.u - V[:, 0]), np.linalg.norm(rep.u + V[:, 0])) <= rep.delta


def test_stable_vector_errors():
    with pytest.raises(KernelNotOneDimensional):
        stable_vector_bound(OPINION_VECTOR, consensus_cert())
    with pytest.raises(BasisMismatch):
        stable_vector_bound(np.ones(4), opinion_cert())
    with pytest.raises(NoPower):
        stable_vector_bound(OPINION_VECTOR, opinion_cert(gamma=0.9999))


def test_chain_then_refute():
    ch = risk_chain(8, 3, 1.0, 1.86e-8)
    v = refute_with_ratio((5, 3), leverage_ratio(ch.eps, 0.69))
    assert v.verdict == "REFUTED"


def test_common_fixed_vectors_consensus():
    V = common_fixed_vectors(consensus8())
    assert V.shape == (8, 2)
    K = consensus8_kernel()
    np.testing.assert_allclose(K @ (K.T @ V), V, atol=1e-10)


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(beta=1.5).validate()
    with pytest.raises(ValueError):
        PipelineConfig(n_small=0).validate()
    with pytest.raises(ValueError):
        PipelineConfig(gamma_mode=-1.0).validate()
    with pytest.raises(ValueError):
        PipelineConfig(epsbar_mode="nope").validate()
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"sed": 1})
    assert PipelineConfig.from_dict({"seed": 3, "beta": 0.1}).seed == 3


def test_demo_opinion_small():
    res = run_demo("opinion", PipelineConfig(n_large=100_000, epsbar_mode=EXACT))
    rep = res.report
    assert rep["status"] == "certified" and rep["complete"]
    assert rep["candidate"] == [1, -1, 1, 1]
    sv = rep["verdict"]["stable_vector"]
    assert sv["c_min"] <= rep["white_box"]["abs_cos_candidate_fixed"] + 1e-12
    assert rep["extrapolated"]["N"] == 8_142_000


def test_demo_consensus_refusal_is_incomplete():
    res = run_demo("consensus", PipelineConfig(n_small=1000, n_large=20, epsbar_mode=EXACT))
    assert res.certificate is None and res.refusal is not None
    rep = res.report
    assert rep["complete"] is False
    assert rep["refusal"]["suggested_n"] > 20


def test_pipeline_finds_consensus_groups():
    res = run_pipeline(consensus8(), PipelineConfig(n_large=20_000, epsbar_mode=EXACT), "consensus")
    rep = res.report
    assert rep["hypothesis"] == [list(g) for g in CONSENSUS_GROUPS]
    assert all(all(row) for row in rep["white_box"]["groups_disconnected"])
    assert rep["white_box"]["holds"]


def test_unknown_demo():
    with pytest.raises(ValueError):
        run_demo("nope")


def test_indicator_kernel_basis():
    hyp = PartitionHypothesis(CONSENSUS_GROUPS)
    np.testing.assert_array_equal(hyp.kernel_basis(), consensus8_kernel())
    np.testing.assert_array_equal(indicator(3, [1, 3]), [1, 0, 1])
