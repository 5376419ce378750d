import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porebingham.constitutive import (
    BoundaryVectors,
    ConstitutiveDomainError,
    MaterialParams,
    SymTensor,
    check_scalar_constraints,
    check_slip_constraints,
    monotonicity_gap,
    regularized_slip_traction,
    regularized_stress_extra,
    slip_traction_exact,
    slip_velocity_exact,
    strain_from_stress_exact,
    stress_from_strain_exact,
    yield_stress,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
# zero, or far enough from underflow that squared norms stay normal
nonneg = st.just(0.0) | st.floats(1e-100, 1e3, allow_nan=False, allow_infinity=False)
positive = st.floats(1e-3, 1e3, allow_nan=False, allow_infinity=False)


def sym3(entries):
    return SymTensor(np.asarray(entries, dtype=float), dim=3)


tensors = st.lists(finite, min_size=6, max_size=6).map(sym3)


def dev_diag():
    return sym3([1, -1, 0, 0, 0, 0]).scale(1 / np.sqrt(2))


# ---- SymTensor ----------------------------------------------------------


@given(tensors)
def test_matrix_is_symmetric_and_norm_is_frobenius(A):
    M = A.matrix()
    assert np.array_equal(M, M.T)
    assert A.norm() == pytest.approx(np.sqrt(np.sum(M * M)), rel=1e-14, abs=1e-300)


@given(tensors, tensors)
def test_ddot_matches_matrix_contraction(A, B):
    assert A.ddot(B) == pytest.approx(np.sum(A.matrix() * B.matrix()), rel=1e-12, abs=1e-9)


def test_from_matrix_round_trip_2d():
    M = np.array([[1.0, 2.0], [2.0, -3.0]])
    A = SymTensor.from_matrix(M)
    assert A.dim == 2
    assert np.array_equal(A.matrix(), M)


def test_norm_zero_iff_zero():
    assert SymTensor.zeros(dim=2).norm() == 0.0
    assert sym3([0, 0, 0, 0, 0, 1e-150]).norm() > 0.0


# ---- parameters ---------------------------------------------------------


def test_defaults_follow_the_normalisation():
    p = MaterialParams()
    assert (p.rho_star, 2 * p.nu_star, p.gamma_star, p.K, p.q_star) == (1.0, 1.0, 1.0, 1.0, 1.0)


@pytest.mark.parametrize("name,value", [("rho_star", 0.0), ("nu_star", -1.0), ("q_star", -1.0), ("K", -0.1),
                                        ("s_star", 0.0), ("gamma_star", -1.0), ("epsilon", 0.0),
                                        ("epsilon", float("nan"))])
def test_invalid_parameter_is_named(name, value):
    with pytest.raises(ValueError, match=name):
        MaterialParams(**{name: value})


# ---- yield stress -------------------------------------------------------


@pytest.mark.parametrize("p_s,p_f,q,expected", [(2, 0.5, 1, 1.5), (2, 3, 1, 0.0), (0, 0, 5, 0.0)])
def test_yield_stress_examples(p_s, p_f, q, expected):
    assert yield_stress(p_s, p_f, q) == expected


def test_yield_stress_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        yield_stress(np.inf, 0.0, 1.0)


@given(finite, finite, nonneg)
def test_yield_stress_nonnegative(p_s, p_f, q):
    assert yield_stress(p_s, p_f, q) >= 0.0


# ---- exact law ----------------------------------------------------------


def test_stress_from_strain_unit_example():
    S = stress_from_strain_exact(dev_diag(), 1.0, 0.5)
    np.testing.assert_allclose(S.entries, dev_diag().scale(2.0).entries, rtol=1e-15)
    assert S.norm() == pytest.approx(2.0, rel=1e-15)


def test_stress_from_strain_newtonian_limit():
    D = sym3([0.3, -0.1, 0.2, 1.0, -2.0, 0.5])
    np.testing.assert_allclose(stress_from_strain_exact(D, 0.0, 0.7).entries, D.scale(1.4).entries)


def test_stress_from_strain_rejects_rigid_state():
    with pytest.raises(ConstitutiveDomainError, match="rigid"):
        stress_from_strain_exact(SymTensor.zeros(dim=3), 1.0, 0.5)


@given(tensors, nonneg, positive)
def test_stress_norm_identity(D, tau, nu):
    if D.norm() == 0:
        return
    S = stress_from_strain_exact(D, tau, nu)
    assert S.norm() == pytest.approx(tau + 2 * nu * D.norm(), rel=1e-12)


def test_sub_yield_stress_gives_rigid_state():
    S = dev_diag().scale(0.9)
    assert np.all(strain_from_stress_exact(S, 1.0, 0.5).entries == 0.0)


def test_zero_over_zero_convention():
    assert np.all(strain_from_stress_exact(SymTensor.zeros(dim=3), 0.0, 0.5).entries == 0.0)


def test_tie_goes_to_rigid_branch():
    S = dev_diag()
    assert np.all(strain_from_stress_exact(S, 1.0, 0.5).entries == 0.0)


def test_strain_from_stress_inverts_example():
    D = strain_from_stress_exact(dev_diag().scale(2.0), 1.0, 0.5)
    np.testing.assert_allclose(D.entries, dev_diag().entries, rtol=1e-15)


@given(tensors, nonneg, positive)
def test_round_trip_strain_stress_strain(D, tau, nu):
    if D.norm() < 1e-6:
        return
    back = strain_from_stress_exact(stress_from_strain_exact(D, tau, nu), tau, nu)
    np.testing.assert_allclose(back.entries, D.entries, rtol=0, atol=1e-12 * max(1.0, D.norm()) * (1 + tau / nu))


def test_frame_indifference():
    rng = np.random.default_rng(3)
    for _ in range(50):
        Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        A = rng.normal(size=(3, 3))
        D = SymTensor.from_matrix(A + A.T)
        tau = rng.uniform(0, 3)
        lhs = stress_from_strain_exact(SymTensor.from_matrix(Q @ D.matrix() @ Q.T), tau, 0.5).matrix()
        rhs = Q @ stress_from_strain_exact(D, tau, 0.5).matrix() @ Q.T
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# ---- scalar constraints -------------------------------------------------


def test_constraints_accept_exact_pairs():
    D = sym3([0.2, -0.5, 0.3, 0.1, 0.0, -0.7])
    S = stress_from_strain_exact(D, 1.3, 0.5)
    ok, (r1, r2) = check_scalar_constraints(S, D, 1.3, 0.5)
    assert ok and abs(r1) <= 1e-12 and abs(r2) <= 1e-12


def test_constraints_accept_rigid_pairs():
    ok, (r1, r2) = check_scalar_constraints(dev_diag().scale(0.5), SymTensor.zeros(dim=3), 1.0, 0.5)
    assert ok and r1 <= 0 and r2 == 0


def test_constraints_reject_zero_stress_with_flow():
    D = dev_diag()
    ok, (_, r2) = check_scalar_constraints(SymTensor.zeros(dim=3), D, 1.0, 0.5)
    assert not ok
    assert r2 == pytest.approx(1.0 * 1.0 + 2 * 0.5 * 1.0)


# ---- regularised law ----------------------------------------------------


def test_regularized_zero_strain_gives_zero():
    Z = regularized_stress_extra(SymTensor.zeros(dim=3), 2.0, 0.0, MaterialParams())
    assert np.all(Z.entries == 0.0)


def test_regularized_plug_in_value():
    Z = regularized_stress_extra(dev_diag(), 1.0, 0.0, MaterialParams(epsilon=1.0))
    assert Z.norm() == pytest.approx(0.5, rel=1e-15)


@given(tensors, nonneg, st.floats(1e-6, 10.0))
def test_regularized_is_bounded_and_dissipative(D, tau, eps):
    params = MaterialParams(epsilon=eps)
    Z = regularized_stress_extra(D, tau, 0.0, params)
    n = D.norm()
    assert Z.norm() <= tau * n / (n + eps) * (1 + 1e-14) + 1e-300
    if tau > 0:
        assert Z.norm() < tau
    assert Z.ddot(D) == pytest.approx(tau * n * n / (n + eps), rel=1e-12, abs=1e-300)
    assert Z.ddot(D) >= 0


@pytest.mark.parametrize("n", [10, 100, 1000])
def test_regularization_defect_closed_form(n):
    D = sym3([0.4, -0.1, 0.3, 0.2, -0.6, 0.1])
    tau, eps = 1.7, 1.0 / n
    Z = regularized_stress_extra(D, tau, 0.0, MaterialParams(epsilon=eps))
    gap = (Z - D.scale(tau / D.norm())).norm()
    assert gap == pytest.approx(tau * eps / (D.norm() + eps), rel=1e-13)


# ---- monotonicity -------------------------------------------------------


@given(tensors, tensors, finite, finite, st.floats(1e-6, 10.0))
@settings(max_examples=300)
def test_monotonicity_gap_nonnegative(D1, D2, p_s, p_f, eps):
    params = MaterialParams(epsilon=eps)
    gap = monotonicity_gap(D1, D2, p_s, p_f, params)
    scale = max(1.0, yield_stress(p_s, p_f, 1.0) * (D1.norm() + D2.norm()))
    assert gap >= -1e-13 * scale
    Z1 = regularized_stress_extra(D1, p_s, p_f, params)
    Z2 = regularized_stress_extra(D2, p_s, p_f, params)
    assert (Z1 - Z2).ddot(D1 - D2) >= -1e-13 * scale


def test_monotonicity_trivial_cases():
    D = sym3([1, 2, 3, 4, 5, 6])
    assert monotonicity_gap(D, D, 2.0, 0.0, MaterialParams()) == 0.0
    assert monotonicity_gap(D, sym3([0, 1, 0, 2, 0, 1]), 0.0, 1.0, MaterialParams()) == 0.0


# ---- boundary law -------------------------------------------------------


def test_slip_traction_examples():
    np.testing.assert_allclose(slip_traction_exact([1.0, 0.0], 1.0, 1.0), [2.0, 0.0])
    np.testing.assert_allclose(slip_traction_exact([0.0, 3.0], 1.0, 0.0), [0.0, 1.0])


def test_slip_traction_rejects_stick_state():
    with pytest.raises(ConstitutiveDomainError, match="stick"):
        slip_traction_exact([0.0, 0.0], 1.0, 1.0)


def test_slip_velocity_examples():
    np.testing.assert_allclose(slip_velocity_exact([2.0, 0.0], 1.0, 1.0), [1.0, 0.0])
    np.testing.assert_array_equal(slip_velocity_exact([0.5, 0.5], 1.0, 1.0), [0.0, 0.0])
    np.testing.assert_array_equal(slip_velocity_exact([0.0, 0.0], 1.0, 1.0), [0.0, 0.0])


def test_slip_velocity_needs_friction():
    with pytest.raises(ConstitutiveDomainError):
        slip_velocity_exact([2.0, 0.0], 1.0, 0.0)


vectors = st.lists(st.floats(-100, 100), min_size=2, max_size=2).map(np.array)


@given(vectors, positive, positive)
def test_slip_round_trip(v, s_star, gamma):
    if np.linalg.norm(v) < 1e-6:
        return
    s = slip_traction_exact(v, s_star, gamma)
    assert np.linalg.norm(s) == pytest.approx(s_star + gamma * np.linalg.norm(v), rel=1e-12)
    np.testing.assert_allclose(slip_velocity_exact(s, s_star, gamma), v, rtol=0,
                               atol=1e-12 * max(1.0, np.linalg.norm(v)) * (1 + s_star / gamma))
    ok, _ = check_slip_constraints(s, v, s_star, gamma)
    assert ok


def test_slip_constraints_examples():
    ok, _ = check_slip_constraints([0.5, 0.0], [0.0, 0.0], 1.0, 1.0)
    assert ok
    ok, (_, r2) = check_slip_constraints([0.0, 0.0], [1.0, 0.0], 1.0, 1.0)
    assert not ok and r2 > 0


def test_regularized_slip_examples():
    np.testing.assert_array_equal(regularized_slip_traction([0.0, 0.0], 2.0, 0.1), [0.0, 0.0])
    z = regularized_slip_traction([0.1, 0.0], 2.0, 0.1)
    assert np.linalg.norm(z) == pytest.approx(1.0)


@pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-3])
def test_regularized_slip_defect_is_linear(eps):
    v = np.array([0.3, -0.4])
    z = regularized_slip_traction(v, 1.5, eps)
    gap = np.linalg.norm(z - 1.5 * v / np.linalg.norm(v))
    assert gap == pytest.approx(1.5 * eps / (0.5 + eps), rel=1e-13)
    assert np.linalg.norm(z) < 1.5


def test_boundary_vectors_tangency():
    n = np.array([0.0, 0.0, 1.0])
    bv = BoundaryVectors.from_traction([1.0, 2.0, 0.0], [0.5, 0.5, 0.0], 1.0, normal=n)
    np.testing.assert_allclose(bv.z_vec, [-0.5, -1.5, 0.0])
    with pytest.raises(ValueError):
        BoundaryVectors.from_traction([1.0, 2.0, 0.1], [0.5, 0.5, 0.0], 1.0, normal=n)
