import math

import numpy as np
import pytest

from blinddemod.certificates import (
    CertificateReport,
    beta_crosscorrelation,
    certify,
    column_sign,
    gamma_fourier,
    gamma_gaussian,
    golfing_certificate,
    golfing_partition,
    golfing_rounds,
    golfing_w_recursion,
    isometry_constant,
    ls_certificate,
    next_divisor,
    noisy_error_constants,
    partition_deviation,
    verify_certificate,
)
from blinddemod.ensembles import dft_subspace, make_instance
from blinddemod.operators import (
    Dictionary,
    MeasurementOperator,
    SubspaceBasis,
    SupportSet,
    assemble_phi,
    compact_phi,
)
from blinddemod.solver import solve_noiseless


def test_isometry_orthonormal_is_zero():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 3)))
    assert isometry_constant(Q) == pytest.approx(0.0, abs=1e-14)
    assert isometry_constant(np.zeros((4, 0))) == 0.0


def test_isometry_hand_case():
    P = np.array([[1.0, 0.5], [0.0, 1.0]])
    G = P.T @ P - np.eye(2)  # [[0, .5], [.5, .25]]
    expected = max(abs(np.linalg.eigvalsh(G)))
    assert isometry_constant(P) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx((0.25 + math.sqrt(0.0625 + 1)) / 2)


def _orthonormal_op(N=8, M=3):
    # K = 1 with sqrt(N) * orthonormal atoms: Phi has orthonormal columns
    Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((N, M)))
    return MeasurementOperator(Dictionary(np.sqrt(N) * Q), SubspaceBasis(np.ones((N, 1)) / np.sqrt(N)))


def test_ls_certificate_identity_gram():
    op = _orthonormal_op()
    T = SupportSet.of([1], op.M)
    sign = np.array([[1.0]])
    Y, p = ls_certificate(op, T, sign)
    np.testing.assert_allclose(p, compact_phi(op, T) @ np.array([1.0]), atol=1e-14)
    assert Y[0, 1] == pytest.approx(1.0)
    # orthogonal atoms: nothing leaks off support
    np.testing.assert_allclose(Y[0, [0, 2]], 0.0, atol=1e-14)


def test_ls_certificate_exact_on_support():
    for seed in range(5):
        inst = make_instance("gaussian", 100, 200, 5, 5, seed)
        S = column_sign(inst.truth.X0)
        Y, p = ls_certificate(inst.op, inst.truth.support, S)
        T = inst.truth.support.array
        assert np.linalg.norm(Y[:, T] - S[:, T]) <= 1e-10
        np.testing.assert_allclose(inst.op.adjoint(p), Y, atol=1e-12)


def test_ls_certificate_singular_gram():
    A = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 1.0]])
    op = MeasurementOperator(Dictionary(A), SubspaceBasis(np.ones((2, 1)) / np.sqrt(2)))
    with pytest.raises(np.linalg.LinAlgError, match="delta"):
        ls_certificate(op, [0, 1], np.ones((1, 2)))


def test_tau_bound_when_well_conditioned():
    for seed in range(10):
        inst = make_instance("gaussian", 200, 400, 2, 2, seed)
        rep, (Y, p) = certify(inst.op, inst.truth.X0)
        if rep.delta <= 0.5:
            assert np.linalg.norm(p) <= math.sqrt(2 * rep.J)


def test_beta_orthogonal_atoms_is_zero():
    op = _orthonormal_op()
    assert beta_crosscorrelation(assemble_phi(op), [0], 1) == pytest.approx(0.0, abs=1e-14)


def test_beta_matches_brute_force():
    for seed in range(3):
        inst = make_instance("fourier", 20, 30, 3, 4, seed)
        phi = assemble_phi(inst.op)
        T = inst.truth.support
        K = inst.op.K
        cols = np.concatenate([np.arange(K * j, K * j + K) for j in T])
        brute = max(np.linalg.svd(phi[:, cols].conj().T @ phi[:, K * i:K * i + K], compute_uv=False)[0]
                    for i in T.complement)
        assert beta_crosscorrelation(phi, T, K) == pytest.approx(brute, rel=1e-12)
        assert beta_crosscorrelation(inst.op, T, K) == pytest.approx(brute, rel=1e-12)


def test_partition_trivial_and_pilot_case():
    B = dft_subspace(64, 3)
    part = golfing_partition(64, 1, B, 0)
    assert part.P == 1 and part.deviation <= 1e-12
    part = golfing_partition(64, 4, B, seed=0, max_attempts=50)
    assert part.deviation < 16 / (4 * 64)
    idx = np.sort(np.concatenate(part.subsets))
    np.testing.assert_array_equal(idx, np.arange(64))
    assert all(len(g) == 16 for g in part.subsets)


def test_partition_deviation_dense_oracle():
    B = dft_subspace(12, 2).entries
    subsets = (np.array([0, 3, 5, 7, 9, 11]), np.array([1, 2, 4, 6, 8, 10]))
    expected = 0.0
    for g in subsets:
        Bp = sum(np.outer(B[l].conj(), B[l]) for l in g)
        expected = max(expected, np.linalg.svd(Bp - 0.5 * np.eye(2), compute_uv=False)[0])
    assert partition_deviation(subsets, B) == pytest.approx(expected, rel=1e-12)


def test_partition_errors():
    B = dft_subspace(10, 2)
    with pytest.raises(ValueError, match="divide"):
        golfing_partition(10, 3, B, 0)
    with pytest.raises(RuntimeError, match="best deviation"):
        golfing_partition(10, 5, B, 0, max_attempts=3, scheme="uniform")


def test_golfing_empty_support():
    op = make_instance("fourier", 16, 24, 2, 1, 0).op
    st = golfing_certificate(op, SupportSet((), op.M), np.zeros((op.K, op.M)), P=2, seed=0,
                             max_attempts=500)
    assert not np.any(st.Y)


def test_golfing_one_step_hand_computation():
    # N = 4, K = 1, M = 2, P = 2; the basis is the constant column
    A = np.array([[1.0, 0.5], [-1.0, 2.0], [0.5, 1.0], [2.0, -0.5]])
    B = np.ones((4, 1)) / 2.0
    op = MeasurementOperator(Dictionary(A), SubspaceBasis(B))
    T = SupportSet.of([0], 2)
    sign = np.array([[1.0, 0.0]])
    part = golfing_partition(4, 2, B, seed=0)
    st = golfing_certificate(op, T, sign, partition=part)
    g = part.subsets[0]
    # Y_1 = -(N/Q) L_1^* L_1(W_0), W_0 = -sign
    # L(W_0)[n] = B[n] * (-1) * A[n, 0];  L^*(r) = sum_n r_n conj(B[n]) conj(A[n, :])
    r = np.zeros(4)
    r[g] = -0.5 * A[g, 0]
    Y1 = -2.0 * np.array([[sum(r[n] * 0.5 * A[n, j] for n in range(4)) for j in range(2)]])
    np.testing.assert_allclose(st.iterates[1], Y1, atol=1e-14)


def test_golfing_w_recursion_identity():
    inst = make_instance("fourier", 64, 128, 2, 2, 3)
    S = column_sign(inst.truth.X0)
    st = golfing_certificate(inst.op, inst.truth.support, S, P=4, seed=1, max_attempts=500)
    for p, g in enumerate(st.partition.subsets, start=1):
        W = golfing_w_recursion(inst.op, inst.truth.support, st.W[p - 1], g)
        np.testing.assert_allclose(W, st.W[p], atol=1e-10)
        np.testing.assert_allclose(st.iterates[p] * inst.truth.support.mask() - S, st.W[p], atol=1e-12)
    np.testing.assert_allclose(inst.op.adjoint(st.p), st.Y, atol=1e-10)
    assert st.W_norms[0] == pytest.approx(math.sqrt(2))


def test_golfing_rounds_and_divisor():
    g = gamma_fourier(2, 512)
    assert golfing_rounds(2, g) == math.ceil(math.log(4 * math.sqrt(4) * g) / math.log(2))
    assert next_divisor(256, 10) == 16
    assert next_divisor(7, 3) == 7


def test_gamma_bounds():
    assert gamma_gaussian(100, 200) == pytest.approx(math.sqrt(200 * math.log(10000) + math.log(100)))
    assert gamma_fourier(5, 200) == pytest.approx(math.sqrt(400 * math.log(2000) + 401))


def test_rho_formula():
    gamma = 40.0
    # Y vanishes on T and equals 1/2 on the off-support column, so theta = 1/2
    Y = np.array([[0.0, 0.5]])
    rep = verify_certificate(Y, np.zeros(2), np.array([[1.0, 0.0]]), [0], gamma, 0.5, 1.0)
    assert rep.theta == 0.5
    assert rep.rho == pytest.approx(0.5 + 1 / (2 * math.sqrt(2) * gamma))
    rep = CertificateReport(0.5, gamma, 0.5, 0.0, 1.0, math.sqrt(2), 0.5 + 1.0 / (4 * math.sqrt(2) * gamma * 0.5), 1)
    assert rep.rho == pytest.approx(0.5 + 1 / (2 * math.sqrt(2) * gamma))
    assert rep.flags["rho_ok"]


def test_verify_certificate_fields_and_purity():
    inst = make_instance("gaussian", 200, 400, 2, 2, 0)
    rep1, (Y, p) = certify(inst.op, inst.truth.X0)
    rep2 = verify_certificate(Y, p, inst.truth.X0, inst.truth.support, rep1.gamma, rep1.delta, rep1.beta)
    assert rep1 == rep2
    d = rep1.as_dict()
    for key in ("delta", "gamma", "theta", "cert_residual", "beta", "tau", "rho"):
        assert d[key] >= 0
    assert rep1.rho == pytest.approx(rep1.theta + rep1.beta / (4 * math.sqrt(2) * rep1.gamma * (1 - rep1.delta)))
    assert rep1.tau == pytest.approx(np.linalg.norm(p) / math.sqrt(2))


def test_flags_follow_thresholds():
    ok = CertificateReport(0.4, 10.0, 0.4, 0.0, 0.5, 1.0, 0.42, 3)
    assert ok.passed and ok.flags["stable_conditions"]
    bad = CertificateReport(0.6, 10.0, 0.4, 0.0, 0.5, 1.0, 0.5, 3)
    assert not bad.passed and bad.flags["theta_ok"]
    assert not CertificateReport(0.4, 10.0, 0.4, 0.1, 0.5, 1.0, 0.42, 3).flags["cert_residual_ok"]
    assert not CertificateReport(0.4, 10.0, 0.4, 0.0, 0.5, 1.0, 0.42, 3, op_norm=11.0).passed


def test_noisy_constants_canonical_gaussian():
    gamma = gamma_gaussian(100, 200)
    C1, C2 = noisy_error_constants(0.5, 0.5, 1.0, gamma, math.sqrt(2))
    s = math.sqrt(2) * gamma
    assert C1 == pytest.approx(2 * math.sqrt(6) + 3 * math.sqrt(6) / (s - 1))
    assert C2 == pytest.approx(24 * gamma / (s - 1))
    assert C1 <= 5 * math.sqrt(6) and C2 <= 24


def test_noisy_constants_fourier_sqrt_p():
    gamma = gamma_fourier(5, 200)
    P = golfing_rounds(5, gamma)
    _, C2 = noisy_error_constants(0.5, 0.5, 1.0, gamma, math.sqrt(2 * P))
    assert C2 == pytest.approx(24 * math.sqrt(P) * gamma / (math.sqrt(2) * gamma - 1))
    assert C2 <= 24 * math.sqrt(P)


def test_noisy_constants_zero_limit():
    # with delta = theta = beta = tau = 0 the first constant is 2 + 1/(2 sqrt2 gamma)
    for gamma in (1.0, 10.0, 1e6):
        C1, C2 = noisy_error_constants(0.0, 0.0, 0.0, gamma, 0.0)
        assert C1 == pytest.approx(2 + 1 / (2 * math.sqrt(2) * gamma))
        assert C2 == 0.0
    assert noisy_error_constants(0.0, 0.0, 0.0, 1e12, 0.0)[0] == pytest.approx(2.0)


def test_noisy_constants_reject_rho_ge_one():
    with pytest.raises(ValueError, match="rho"):
        noisy_error_constants(0.5, 0.99, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="delta"):
        noisy_error_constants(1.0, 0.1, 0.1, 10.0, 1.0)


def test_passing_certificate_implies_recovery():
    hits = 0
    for seed in range(10):
        inst = make_instance("gaussian", 200, 400, 2, 2, seed)
        rep, _ = certify(inst.op, inst.truth.X0)
        if rep.passed:
            hits += 1
            res = solve_noiseless(inst.y, inst.op)
            err = np.linalg.norm(res.X_hat - inst.truth.X0) / np.linalg.norm(inst.truth.X0)
            assert err <= 1e-5
    assert hits >= 9
