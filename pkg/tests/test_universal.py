import numpy as np
import pytest

from asymnets import universal as U


def probes(n, k=500, seed=0, radius=3.0):
    return np.random.default_rng(seed).uniform(-radius, radius, size=(k, n))


def test_relu_odd_identity_holds():
    assert U.check_odd_identity()
    assert not U.check_odd_identity(np.tanh)


def test_plain_fit_examples():
    A, B = U.fit_linear_plain(np.zeros((3, 3)))
    x = probes(3)
    assert np.all(U.relu(x @ B.T) @ A.T == 0)
    A, B = U.fit_linear_plain(np.eye(2))
    assert np.array_equal(A @ U.relu(B @ np.array([3.0, -4.0])), [3.0, -4.0])
    W = np.random.default_rng(0).normal(size=(5, 5))
    A, B = U.fit_linear_plain(W)
    x = probes(5, 200)
    assert np.max(np.abs(U.relu(x @ B.T) @ A.T - x @ W.T)) < 1e-12


def outer_fit_residual(W, N, P):
    A, B = U.fit_linear_outer_masked(W, N, P)
    x = probes(W.shape[1], 200, seed=1)
    return np.max(np.abs(U.relu(x @ B.T) @ U.effective(A, N, P).T - x @ W.T)), A


def test_outer_fit_without_fixing_is_plain():
    W = np.random.default_rng(0).normal(size=(3, 3))
    res, _ = outer_fit_residual(W, np.ones((3, 18), dtype=bool), np.zeros((3, 18)))
    assert res < 1e-12


def test_outer_fit_compensates_single_fixed_entry():
    W = np.eye(2)
    N = np.ones((2, 12), dtype=bool)
    N[0, 7] = False  # row 0 hardwires a copy of relu(W_1 . x)
    P = np.zeros((2, 12))
    P[0, 7] = 0.37
    res, A = outer_fit_residual(W, N, P)
    assert res < 1e-12
    assert A[0, 6] == pytest.approx(-0.37)


def test_outer_fit_random_admissible():
    rng = np.random.default_rng(4)
    W = rng.normal(size=(4, 4))
    while True:
        N = U.sample_outer_mask(4, 24, 2, rng)
        if U.check_outer_admissible(N).ok:
            break
    res, _ = outer_fit_residual(W, N, U.random_fixed(N.shape, N, 1.0, rng))
    assert res < 1e-10


def test_outer_admissibility_report():
    N = np.ones((2, 12), dtype=bool)
    N[1, 4:7] = False
    rep = U.check_outer_admissible(N)
    assert not rep.ok and rep.where == (1, 4)
    with pytest.raises(U.InadmissibleMasks):
        U.fit_linear_outer_masked(np.eye(2), N, np.zeros((2, 12)))


def test_inner_admissibility_two_pairs():
    M = np.ones((24, 40), dtype=bool)
    M[0, 5] = M[7, 5] = False
    M[1, 9] = M[9, 9] = False
    rep = U.check_inner_admissible(M)
    assert not rep.ok and rep.where[0] == 0
    M[1, 9] = True
    assert U.check_inner_admissible(M).ok


def admissible_problem(m, n, n_fix, seed, kappa=1.0, pair=False):
    rng = np.random.default_rng(seed)
    M = U.sample_block_disjoint_inner_mask(n, n_fix, rng)
    if pair:
        # one intersecting pair inside the first half of block 0 forces a role swap
        M[0] = M[1]
    while True:
        N = U.sample_outer_mask(m, U.BLOCK * n, n_fix, rng)
        if U.check_outer_admissible(N).ok:
            break
    return (rng.normal(size=(m, n)), N, M, U.random_fixed(N.shape, N, kappa, rng),
            U.random_fixed(M.shape, M, kappa, rng))


def test_both_masked_zero_payload_is_plain_triplicated():
    rng = np.random.default_rng(0)
    n = 24
    M = U.sample_block_disjoint_inner_mask(n, 1, rng)
    N = np.ones((n, U.BLOCK * n), dtype=bool)
    W = rng.normal(size=(n, n))
    fit = U.fit_linear_both_masked(W, N, M, np.zeros(N.shape), np.zeros(M.shape))
    assert U.residual(fit, W, probes(n)) < 1e-12


def test_both_masked_zero_target_cancels_noise():
    W, N, M, P, Q = admissible_problem(24, 24, 1, seed=3)
    W[:] = 0
    fit = U.fit_linear_both_masked(W, N, M, P, Q)
    assert U.residual(fit, W, probes(24)) < 1e-10


@pytest.mark.parametrize("n_fix,n,m,pair", [(1, 24, 24, False), (2, 48, 48, False),
                                            (1, 30, 12, True), (2, 50, 50, True)])
def test_both_masked_exact(n_fix, n, m, pair):
    W, N, M, P, Q = admissible_problem(m, n, n_fix, seed=n + m, pair=pair)
    fit = U.fit_linear_both_masked(W, N, M, P, Q)
    assert U.residual(fit, W, probes(n)) <= U.tolerance(W)
    # fixed entries are exactly the sampled values; trainable slots of the stored matrices hold no fixed values
    assert np.array_equal(fit.inner()[~M], Q[~M]) and np.array_equal(fit.outer()[~N], P[~N])
    assert np.all(fit.B[~M] == 0) and np.all(fit.A[~N] == 0)


def test_both_masked_rejects_inadmissible():
    W, N, M, P, Q = admissible_problem(24, 24, 1, seed=0)
    M[2] = M[3] = M[0]
    with pytest.raises(U.InadmissibleMasks) as err:
        U.fit_linear_both_masked(W, N, M, P, Q)
    assert err.value.report.condition == "intersecting_pairs_per_block"


def test_composition_of_two_fits():
    W1, N1, M1, P1, Q1 = admissible_problem(24, 24, 1, seed=10)
    W2, N2, M2, P2, Q2 = admissible_problem(24, 24, 1, seed=11)
    f1 = U.fit_linear_both_masked(W1, N1, M1, P1, Q1)
    f2 = U.fit_linear_both_masked(W2, N2, M2, P2, Q2)
    x = probes(24)
    assert np.max(np.abs(f2(f1(x)) - x @ (W2 @ W1).T)) <= U.tolerance(W2 @ W1)


def test_exact_fit_is_a_w_asym_checkpoint(tmp_path):
    from asymnets.checkpoint import load_checkpoint, save_checkpoint
    W, N, M, P, Q = admissible_problem(24, 24, 1, seed=5)
    fit = U.fit_linear_both_masked(W, N, M, P, Q)
    ck = load_checkpoint(save_checkpoint(fit.to_checkpoint(), tmp_path / "fit.json"))
    x = probes(24, 100)
    assert np.max(np.abs(ck.to_model().predict(x) - x @ W.T)) <= U.tolerance(W)


def test_uafit_small_n_has_no_admissible_masks():
    with pytest.raises(U.InadmissibleMasks):
        U.uafit(np.eye(4), n_fix=1, max_tries=20)


def test_uafit_rejects_full_fixing():
    with pytest.raises(ValueError):
        U.uafit(np.eye(4), n_fix=4)


def test_outer_admissibility_rate_n64():
    rng = np.random.default_rng(0)
    ok = sum(U.check_outer_admissible(U.sample_outer_mask(64, U.BLOCK * 64, 1, rng)).ok for _ in range(1000))
    assert ok / 1000 >= 0.9
