import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import log_forward_loglik
from hmmfdr.errors import AmbiguousAlignment, FlatLikelihood
from hmmfdr.hmm_core import (Gaussian, HmmParams, StationaryDist, TransitionMatrix, simulate,
                             stationary_distribution)
from hmmfdr.recovery import (ByStationaryMass, ByTailRatio, RecoveredParams, align_labels,
                             estimate_transition, fit_params, tail_anchor)


@pytest.fixture(scope="module")
def path20k():
    H = HmmParams.from_transitions(TransitionMatrix([[0.8, 0.2], [0.3, 0.7]]),
                                   [Gaussian(0, 1), Gaussian(3, 1)])
    return H, simulate(H, 20_000, 4).observations


def _recovered(pi0):
    Q = TransitionMatrix.two_state(1 - pi0, pi0)
    return RecoveredParams(Q, stationary_distribution(Q), (0, 1), 0.0)


def test_recovers_transition_with_true_emissions(path20k):
    H, X = path20k
    rec = estimate_transition(X, H.emissions)
    np.testing.assert_allclose(rec.Q_hat.entries, H.Q.entries, atol=0.03)
    np.testing.assert_allclose(rec.pi_hat.probs @ rec.Q_hat.entries, rec.pi_hat.probs, atol=1e-12)
    assert rec.permutation == (0, 1)


def test_loglik_is_attained_and_maximal(path20k):
    H, X = path20k
    rec = estimate_transition(X[:3000], H.emissions)
    lik = np.column_stack([f.pdf(X[:3000]) for f in H.emissions])
    at_hat = log_forward_loglik(lik, rec.Q_hat.entries, rec.pi_hat.probs)
    assert rec.loglik == pytest.approx(at_hat, abs=1e-6)
    at_truth = log_forward_loglik(lik, H.Q.entries, H.pi.probs)
    assert rec.loglik >= at_truth - 1e-6


def test_label_permutation_invariance(path20k):
    H, X = path20k
    a = estimate_transition(X[:5000], H.emissions)
    b = estimate_transition(X[:5000], H.emissions[::-1])
    np.testing.assert_allclose(b.Q_hat.entries, a.Q_hat.entries[::-1, ::-1], atol=1e-6)


def test_identical_emissions_are_flat():
    X = np.random.default_rng(0).normal(size=500)
    with pytest.raises(FlatLikelihood):
        estimate_transition(X, [Gaussian(0, 1), Gaussian(0, 1)])


def test_tiny_sample_is_deterministic():
    X = np.array([0.1, 2.9])
    a = estimate_transition(X, [Gaussian(0, 1), Gaussian(3, 1)])
    b = estimate_transition(X, [Gaussian(0, 1), Gaussian(3, 1)])
    np.testing.assert_array_equal(a.Q_hat.entries, b.Q_hat.entries)
    assert np.all(np.isfinite(a.Q_hat.entries))


def test_rejects_three_states():
    with pytest.raises(ValueError):
        estimate_transition(np.zeros(10), [Gaussian(), Gaussian(1), Gaussian(2)])


def test_stationary_mass_alignment_examples():
    f = [Gaussian(0, 1), Gaussian(3, 1)]
    assert align_labels(f, _recovered(0.7), ByStationaryMass()) == (0, 1)
    assert align_labels(f, _recovered(0.3), ByStationaryMass()) == (1, 0)
    with pytest.raises(AmbiguousAlignment):
        align_labels(f, _recovered(0.5), ByStationaryMass())


def test_tail_alignment_follows_the_densities():
    X = np.array([0.0, 4.0, 1.0, 0.5, 3.5, 0.2, 0.1, 0.0, 0.0, 0.0])
    f = [Gaussian(0, 1), Gaussian(3, 1)]
    rec = _recovered(0.3)
    assert align_labels(f, rec, ByTailRatio(), X) == (0, 1)
    assert align_labels(f[::-1], rec, ByTailRatio(), X) == (1, 0)
    with pytest.raises(AmbiguousAlignment):
        align_labels([Gaussian(0, 1), Gaussian(0, 1)], rec, ByTailRatio(), X)
    with pytest.raises(ValueError):
        align_labels(f, rec, ByTailRatio())


def test_tail_rule_validation():
    with pytest.raises(ValueError):
        ByTailRatio(float("nan"))
    with pytest.raises(ValueError):
        ByTailRatio(-math.inf)


def test_tail_anchor():
    X = np.array([5.0, 1.0, 9.0, 2.0, 100.0])
    # ceil(ln 5) = 2 leading points.
    assert tail_anchor(X) == 5.0
    assert tail_anchor(X, x_star=3.0) == 1.0
    assert tail_anchor(np.array([7.0])) == 7.0
    X = np.arange(1.0, 101.0)
    assert tail_anchor(X) == float(math.ceil(math.log(100)))


@settings(max_examples=20)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_forward_loglik_matches_log_domain_oracle(p, q, seed):
    from hmmfdr.smoothing import forward_loglik
    Q = TransitionMatrix.two_state(p, q)
    H = HmmParams.from_transitions(Q, [Gaussian(0, 1), Gaussian(2, 0.5)])
    X = simulate(H, 60, seed).observations
    lik = np.column_stack([f.pdf(X) for f in H.emissions])
    assert forward_loglik(X, H, floor=0.0) == pytest.approx(
        log_forward_loglik(lik, Q.entries, H.pi.probs), abs=1e-9)


def test_fit_params_swaps_into_null_first(path20k):
    H, X = path20k
    est = fit_params(X, H.emissions[::-1], ByStationaryMass())
    assert est.emissions[0] == H.emissions[0]
    np.testing.assert_allclose(est.Q.entries, H.Q.entries, atol=0.03)


def test_permuted_recovered_params():
    rec = _recovered(0.3).permuted((1, 0))
    assert rec.permutation == (1, 0)
    np.testing.assert_allclose(rec.pi_hat.probs, [0.7, 0.3])
    assert isinstance(rec.pi_hat, StationaryDist)
