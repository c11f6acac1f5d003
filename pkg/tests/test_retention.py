import numpy as np
import pytest

from pdelab.toy.retention import (
    PositionValueWeights,
    estimate_retention,
    plugin_mutual_information,
    position_value,
)


def test_mi_of_independent_variables_is_small(rng):
    z = rng.standard_normal(20000)
    y = rng.integers(0, 2, 20000)
    assert plugin_mutual_information(z, y, bins=16) < 0.01


def test_mi_of_perfect_predictor_is_one_bit(rng):
    y = rng.integers(0, 2, 20000)
    z = y + 0.01 * rng.standard_normal(20000)
    assert abs(plugin_mutual_information(z, y, bins=16) - 1.0) < 0.02


def test_noiseless_chain_has_flat_profile():
    est = estimate_retention(4, trials=2000, flip_prob=0.0, seed=9)
    assert np.ptp(est.rho) <= 0.05
    assert est.spearman == 0.0 or est.spearman <= 0


def test_retention_records_all_depths_and_bounds():
    est = estimate_retention(4, trials=2000, seed=1)
    assert est.depths.tolist() == [1, 2, 3, 4]
    assert np.all(est.rho >= 0) and np.all(est.rho <= 1.5)
    assert np.all(est.mi_raw > 0)
    assert est.trials == 2000


def test_retention_trend_mostly_negative():
    neg = sum(
        estimate_retention(4, trials=5000, seed=100 + rep).spearman <= 0
        for rep in range(10)
    )
    assert neg >= 8


def test_retention_input_validation():
    with pytest.raises(ValueError):
        estimate_retention(1, trials=2000)
    with pytest.raises(ValueError):
        estimate_retention(4, trials=500)
    with pytest.raises(ValueError):
        estimate_retention(4, trials=2000, bins=1)


def test_position_value_examples():
    w = PositionValueWeights(1.0, 0.5, 0.2)
    assert position_value(0.0, 0.0, 0.0, w) == 0.0
    assert abs(position_value(0.9, 0.1, 0.2, w) - 0.81) < 1e-15


def test_position_value_ranking_scale_invariant(rng):
    w = PositionValueWeights(1.0, 0.5, 0.2)
    w10 = PositionValueWeights(10.0, 5.0, 2.0)
    triples = rng.standard_normal((20, 3))
    scores = [position_value(i, d, c, w) for i, d, c in triples]
    scores10 = [position_value(i, d, c, w10) for i, d, c in triples]
    assert int(np.argmax(scores)) == int(np.argmax(scores10))
    assert np.allclose(np.argsort(scores), np.argsort(scores10))


def test_position_weights_validation():
    with pytest.raises(ValueError):
        PositionValueWeights(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        PositionValueWeights(-1.0, 0.5, 0.2)
