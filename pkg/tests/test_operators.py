import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blinddemod.ensembles import dft_subspace, fourier_dictionary, gaussian_dictionary
from blinddemod.operators import (
    Dictionary,
    MeasurementOperator,
    SubspaceBasis,
    SupportSet,
    assemble_phi,
    block_columns,
    compact_phi,
    lift_to_G,
    measure_G,
    operator_norm_estimate,
    restrict_support,
    unvec,
    vec,
)
from blinddemod.textio import read_matrix, write_matrix


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_basis(rng, N, K):
    Q, _ = np.linalg.qr(crandn(rng, N, K))
    return SubspaceBasis(Q)


def random_op(rng, N=7, M=11, K=3, ensemble="gaussian"):
    A = gaussian_dictionary(N, M, rng) if ensemble == "gaussian" else fourier_dictionary(N, M, rng)
    return MeasurementOperator(A, random_basis(rng, N, K))


def test_forward_hand_case():
    op = MeasurementOperator(Dictionary(np.eye(2)), SubspaceBasis(np.ones((2, 1)) / np.sqrt(2)))
    y = op.forward(np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(y, [1 / np.sqrt(2), 0.0], atol=1e-15)
    np.testing.assert_allclose(assemble_phi(op) @ vec(np.array([[1.0, 0.0]])), y, atol=1e-15)


def test_zero_maps_to_zero():
    op = random_op(np.random.default_rng(0))
    assert not np.any(op.forward(np.zeros((op.K, op.M))))
    assert not np.any(op.adjoint(np.zeros(op.N)))


def test_adjoint_of_unit_vector_is_rank_one():
    op = random_op(np.random.default_rng(1))
    Y = op.adjoint(np.eye(op.N)[0])
    expected = np.outer(op.b_rows[:, 0], op.a_rows[:, 0].conj())
    np.testing.assert_allclose(Y, expected, atol=1e-14)
    assert np.linalg.matrix_rank(Y) == 1


def test_dimension_mismatch_rejected():
    op = random_op(np.random.default_rng(2))
    with pytest.raises(ValueError, match="shape"):
        op.forward(np.zeros((op.K + 1, op.M)))
    with pytest.raises(ValueError, match="shape"):
        op.adjoint(np.zeros(op.N + 1))
    with pytest.raises(ValueError, match="rows"):
        MeasurementOperator(Dictionary(np.ones((3, 5))), dft_subspace(4, 2))


def test_basis_must_be_orthonormal():
    with pytest.raises(ValueError, match="orthonormal"):
        SubspaceBasis(np.ones((4, 2)))
    assert SubspaceBasis(np.eye(4)[:, :2]).mu_max == pytest.approx(2.0)


@pytest.mark.parametrize("ensemble", ["gaussian", "fourier"])
def test_adjoint_identity(ensemble):
    rng = np.random.default_rng(3)
    for _ in range(20):
        op = random_op(rng, ensemble=ensemble)
        X, y = crandn(rng, op.K, op.M), crandn(rng, op.N)
        lhs = np.vdot(y, op.forward(X))
        rhs = np.vdot(op.adjoint(y), X)
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(X) * np.linalg.norm(y)


@settings(max_examples=30, deadline=None)
@given(N=st.integers(2, 9), extra=st.integers(1, 6), K=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_phi_matches_forward_property(N, extra, K, seed):
    K = min(K, N)
    M = N + extra
    rng = np.random.default_rng(seed)
    op = MeasurementOperator(Dictionary(crandn(rng, N, M)), random_basis(rng, N, K))
    X = crandn(rng, K, M)
    y = op.forward(X)
    np.testing.assert_allclose(assemble_phi(op) @ vec(X), y, rtol=0, atol=1e-10 * np.linalg.norm(y))


def test_phi_small_explicit_case():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    B = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    phi = assemble_phi(MeasurementOperator(Dictionary(A), SubspaceBasis(B)))
    expected = np.column_stack([B[:, i] * A[:, j] for j in range(2) for i in range(2)])
    np.testing.assert_allclose(phi, expected, atol=1e-15)


def test_phi_constant_basis_column():
    rng = np.random.default_rng(4)
    op = MeasurementOperator(gaussian_dictionary(6, 9, rng), dft_subspace(6, 1))
    np.testing.assert_allclose(assemble_phi(op), op.A / np.sqrt(6), atol=1e-15)


def test_phi_hermitian_rows_are_kronecker():
    rng = np.random.default_rng(5)
    op = random_op(rng, N=5, M=6, K=2)
    phiH = assemble_phi(op).conj().T
    for n in range(op.N):
        np.testing.assert_allclose(phiH[:, n], np.kron(op.a_rows[:, n].conj(), op.b_rows[:, n]),
                                   atol=1e-14)


def test_phi_memory_guard():
    op = random_op(np.random.default_rng(6))
    with pytest.raises(MemoryError):
        assemble_phi(op, memory_budget=10)


def test_vec_roundtrip():
    X = np.arange(12).reshape(3, 4)
    assert vec(X)[:3].tolist() == [0, 4, 8]
    np.testing.assert_array_equal(unvec(vec(X), 3, 4), X)


def test_restrict_full_empty_and_single():
    rng = np.random.default_rng(7)
    op = random_op(rng, N=6, M=8, K=2)
    phi = assemble_phi(op)
    full, compact = restrict_support(op, range(op.M))
    np.testing.assert_array_equal(full, phi)
    np.testing.assert_array_equal(compact, phi)
    _, empty = restrict_support(op, [])
    assert empty.shape == (op.N, 0)
    _, single = restrict_support(phi, [3], K=op.K)
    np.testing.assert_array_equal(single, phi[:, [6, 7]])
    np.testing.assert_array_equal(compact_phi(op, [3]), single)


def test_restriction_consistency():
    rng = np.random.default_rng(8)
    for ensemble in ("gaussian", "fourier"):
        op = random_op(rng, N=9, M=14, K=3, ensemble=ensemble)
        T = SupportSet.of(rng.choice(op.M, 4, replace=False), op.M)
        X = crandn(rng, op.K, op.M)
        X_T = X * T.mask()
        phi_T, compact = restrict_support(op, T)
        y = op.forward(X_T)
        scale = np.linalg.norm(y)
        np.testing.assert_allclose(phi_T @ vec(X), y, atol=1e-10 * scale)
        np.testing.assert_allclose(compact @ vec(X[:, T.array]), y, atol=1e-10 * scale)
        np.testing.assert_allclose(op.restrict(T).forward(X), y, atol=1e-10 * scale)


def test_block_columns_order():
    assert block_columns(SupportSet.of([2, 0], 4), 3).tolist() == [0, 1, 2, 6, 7, 8]


def test_support_set_validation():
    with pytest.raises(ValueError, match="duplicate"):
        SupportSet((1, 1), 4)
    with pytest.raises(ValueError, match="range"):
        SupportSet((4,), 4)
    T = SupportSet.of([3, 1], 5)
    assert T.indices == (1, 3) and len(T) == 2
    assert T.complement.tolist() == [0, 2, 4]


def test_lift_consistency():
    rng = np.random.default_rng(9)
    op = random_op(rng)
    X = crandn(rng, op.K, op.M)
    G = lift_to_G(X, op.dictionary)
    y = op.forward(X)
    np.testing.assert_allclose(measure_G(G, op.basis), y, atol=1e-10 * np.linalg.norm(y))
    # direct evaluation of <G, b'_n e_n^H>
    direct = [np.vdot(np.outer(op.b_rows[:, n], np.eye(op.N)[n]), G) for n in range(op.N)]
    np.testing.assert_allclose(direct, y, atol=1e-10 * np.linalg.norm(y))


def test_lift_zero_and_rank_one():
    rng = np.random.default_rng(10)
    A = crandn(rng, 4, 6)
    assert not np.any(lift_to_G(np.zeros((2, 6)), A))
    X = np.zeros((2, 6), dtype=complex)
    X[:, 2] = [1.0, 2j]
    np.testing.assert_allclose(lift_to_G(X, A), np.outer(X[:, 2], A[:, 2]), atol=1e-15)


def test_operator_norm_orthonormal_columns():
    # K = 1, A = first columns of a unitary: Phi has orthonormal columns
    rng = np.random.default_rng(11)
    N = 8
    U, _ = np.linalg.qr(crandn(rng, N, N))
    B = np.ones((N, 1)) / np.sqrt(N)
    op = MeasurementOperator(Dictionary(np.sqrt(N) * U[:, :5]), SubspaceBasis(B))
    est = operator_norm_estimate(op)
    assert est.converged
    assert est.value == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize("ensemble", ["gaussian", "fourier"])
def test_operator_norm_matches_svd(ensemble):
    rng = np.random.default_rng(12)
    for _ in range(5):
        op = random_op(rng, N=10, M=16, K=3, ensemble=ensemble)
        est = operator_norm_estimate(op, tol=1e-12, max_iter=100000)
        svd = np.linalg.norm(assemble_phi(op), 2)
        assert est.value == pytest.approx(svd, rel=1e-8)


def test_operator_norm_unconverged_flag():
    op = random_op(np.random.default_rng(13))
    est = operator_norm_estimate(op, tol=1e-30, max_iter=3)
    assert not est.converged and est.iterations == 3 and est.value > 0


def test_gram_matches_phi():
    rng = np.random.default_rng(14)
    op = random_op(rng, N=6, M=9, K=2)
    g = op.gram()
    phi = assemble_phi(op)
    G = (g.eigvecs * g.eigvals) @ g.eigvecs.conj().T
    np.testing.assert_allclose(G, phi @ phi.conj().T, atol=1e-10)


def test_matrix_text_roundtrip():
    rng = np.random.default_rng(15)
    X = crandn(rng, 3, 4)
    buf = io.StringIO()
    write_matrix(buf, X, {"K": 3, "note": "x"})
    text = buf.getvalue()
    assert "# 3 4 complex" in text
    Y, meta = read_matrix(io.StringIO(text))
    np.testing.assert_array_equal(X, Y)
    assert meta == {"K": "3", "note": "x"}


def test_matrix_text_errors():
    with pytest.raises(ValueError, match="header"):
        read_matrix(io.StringIO("1,0 2,0\n"))
    with pytest.raises(ValueError, match="header says"):
        read_matrix(io.StringIO("# 2 2 complex\n1,0 2,0\n"))
