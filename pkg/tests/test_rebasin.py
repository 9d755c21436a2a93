import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asymnets.rebasin import (apply_permutation, compose, invert, lap_solve, matching_objective,
                              weight_match)

from .conftest import perturbed, small_ckpt


def brute_force(C, sense="min"):
    n = C.shape[0]
    costs = [C[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))]
    return min(costs) if sense == "min" else max(costs)


def test_lap_examples():
    a = lap_solve(np.eye(4), "max")
    assert list(a.perm) == [0, 1, 2, 3] and a.total_cost == 4
    b = lap_solve([[1, 2], [2, 1]], "min")
    assert list(b.perm) == [0, 1] and b.total_cost == 2


def test_lap_errors():
    with pytest.raises(ValueError):
        lap_solve(np.ones((2, 3)))
    with pytest.raises(ValueError):
        lap_solve([[np.nan, 0], [0, 0]])
    with pytest.raises(ValueError):
        lap_solve(np.eye(2), "median")


def test_lap_random_6x6_against_720_permutations():
    C = np.random.default_rng(0).normal(size=(6, 6))
    assert lap_solve(C).total_cost == brute_force(C)


@given(st.integers(1, 6).flatmap(lambda n: arrays(np.int64, (n, n), elements=st.integers(-20, 20))),
       st.sampled_from(["min", "max"]))
def test_lap_matches_brute_force_on_integer_costs(C, sense):
    res = lap_solve(C, sense)
    assert sorted(res.perm) == list(range(C.shape[0]))
    assert res.total_cost == brute_force(C, sense)


def test_lap_ties_are_deterministic():
    C = np.zeros((5, 5))
    assert list(lap_solve(C).perm) == list(lap_solve(C).perm)


def test_identity_permutation_is_bit_identical():
    ck = perturbed(small_ckpt(), 0)
    out = apply_permutation(ck, [np.arange(6), np.arange(5)])
    for k in ck.params:
        assert np.array_equal(out.params[k], ck.params[k])


@pytest.mark.parametrize("mode", ["standard", "w_asym", "sigma_asym"])
def test_permutation_preserves_function(mode):
    ck = perturbed(small_ckpt(mode), 3)
    r = np.random.default_rng(1)
    perms = [r.permutation(6), r.permutation(5)]
    out = apply_permutation(ck, perms)
    x = r.normal(size=(100, 4))
    assert np.max(np.abs(out.to_model().predict(x) - ck.to_model().predict(x))) <= 1e-10
    if mode != "standard":
        assert out.asym_hash != ck.asym_hash


def test_permutation_group_property():
    ck = perturbed(small_ckpt(), 2)
    r = np.random.default_rng(5)
    p = [r.permutation(6), r.permutation(5)]
    q = [r.permutation(6), r.permutation(5)]
    two_steps = apply_permutation(apply_permutation(ck, p), q)
    one_step = apply_permutation(ck, compose(p, q))
    back = apply_permutation(one_step, invert(compose(p, q)))
    for k in ck.params:
        assert np.array_equal(two_steps.params[k], one_step.params[k])
        assert np.array_equal(back.params[k], ck.params[k])


def test_width_mismatch_rejected():
    with pytest.raises(ValueError):
        apply_permutation(small_ckpt(), [np.arange(5), np.arange(5)])
    with pytest.raises(ValueError):
        apply_permutation(small_ckpt(), [np.arange(6)])


def test_weight_match_self_is_identity():
    ck = perturbed(small_ckpt(), 0)
    res = weight_match(ck, ck)
    assert res.converged and res.sweeps == 1
    assert all(np.array_equal(p, np.arange(len(p))) for p in res.perms)


def test_weight_match_recovers_planted_permutation():
    a = perturbed(small_ckpt(widths=(8, 16, 16, 4)), 0)
    r = np.random.default_rng(2)
    b = apply_permutation(a, [r.permutation(16), r.permutation(16)])
    res = weight_match(a, b)
    aligned = apply_permutation(b, res.perms)
    for k in a.params:
        assert np.array_equal(aligned.params[k], a.params[k])


def test_weight_match_objective_non_decreasing():
    a = perturbed(small_ckpt(widths=(6, 12, 12, 12, 3), init_seed=1), 0)
    b = perturbed(small_ckpt(widths=(6, 12, 12, 12, 3), init_seed=2), 1)
    res = weight_match(a, b)
    start = matching_objective(a, b, [np.arange(12)] * 3)
    trace = [start] + res.objective
    assert all(y >= x - 1e-9 for x, y in zip(trace, trace[1:]))


def test_weight_match_rejects_masked():
    with pytest.raises(ValueError, match="standard"):
        weight_match(small_ckpt("w_asym"), small_ckpt("w_asym"))


def test_alignment_json():
    import json
    ck = small_ckpt()
    d = json.loads(weight_match(ck, ck).to_json())
    assert d["perms"][0] == list(range(6)) and d["converged"]
