"""Data-driven identification of candidate invariant subspaces of switched linear systems.

From sampled one-step pairs ``(x, A_q x)`` of a black-box switched system the
package computes a minimum-norm quadratic Lyapunov matrix, a scenario risk
certificate, and an orthonormal basis in which every mode is certifiably
close to block-triangular form.
"""

__version__ = "0.1.0"

from .bounds import RiskQuery, SupportRule, epsilon_bar, inverse_regularized_beta, regularized_incomplete_beta
from .bounds import sbar_from_eta, support_bound
from .certificate import Certificate, build_certificate, decompose, extract_binary_candidates
from .linalg import SpectralSplit, orthonormal_complement, skewness, spectral_norm, sym_eigendecompose
from .lyapunov import LyapunovProblem, LyapunovSolution, gamma_star_fixed_P, minimize_gamma, solve_free_P
from .sampling import draw_observations, sample_uniform_sphere
from .systems import GraphSpec, SwitchedSystem, build_consensus, build_opinion, check_invariant_subspace

__all__ = [
    "Certificate", "GraphSpec", "LyapunovProblem", "LyapunovSolution", "RiskQuery", "SpectralSplit",
    "SupportRule", "SwitchedSystem", "build_certificate", "build_consensus", "build_opinion",
    "check_invariant_subspace", "decompose", "draw_observations", "epsilon_bar", "extract_binary_candidates",
    "gamma_star_fixed_P", "inverse_regularized_beta", "minimize_gamma", "orthonormal_complement",
    "regularized_incomplete_beta", "sample_uniform_sphere", "sbar_from_eta", "skewness", "solve_free_P",
    "spectral_norm", "support_bound", "sym_eigendecompose",
]
