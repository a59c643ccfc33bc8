import math

import numpy as np
import pytest

from cr_forchheimer.cases import (
    CaseError,
    case1,
    case2,
    constant_data_case,
    derive_case,
    validate_compatibility,
)
from cr_forchheimer.mesh import generate_structured_mesh

PI = math.pi
MESH = generate_structured_mesh(6, 6, (-1.0, 1.0, -1.0, 1.0))


def test_case1_point_values():
    case = case1()
    np.testing.assert_allclose(case.u_exact(0.0, 0.0), [0.0, 1.0], atol=1e-15)
    assert case.p_exact(0.0, 0.0) == 0.0


def test_case1_bottom_neumann_value():
    case = case1()
    x = np.linspace(-0.9, 0.9, 7)
    np.testing.assert_allclose(case.g_N(x, -np.ones_like(x), 0.0 * x, -np.ones_like(x)), 1.0, atol=1e-14)
    np.testing.assert_allclose(case.g_N(x, np.ones_like(x), 0.0 * x, np.ones_like(x)), -1.0, atol=1e-14)


@pytest.mark.parametrize("alpha,beta", [(3.0, 10.0), (2.2, 1.0), (5.0, 100.0)])
def test_case1_self_check(alpha, beta):
    case = case1(alpha, beta)
    r = case.residuals()
    assert r["momentum"] <= 1e-10 and r["divergence"] <= 1e-10 and r["neumann"] <= 1e-10
    assert validate_compatibility(case, MESH).passed


def test_case1_notes_record_replaced_data():
    notes = " ".join(case1().notes)
    assert "published f" in notes and "published b" in notes
    assert "g_N" not in notes  # the per-side Neumann values are consistent with u . n


def test_case1_divergence_matches_finite_differences():
    case = case1()
    x, y = np.random.default_rng(0).uniform(-0.9, 0.9, (2, 20))
    h = 1e-6
    fd = ((case.u_exact(x + h, y)[0] - case.u_exact(x - h, y)[0])
          + (case.u_exact(x, y + h)[1] - case.u_exact(x, y - h)[1])) / (2 * h)
    np.testing.assert_allclose(case.b(x, y), fd, atol=1e-7)
    np.testing.assert_allclose(case.b(x, y), PI * np.cos(PI * x) - PI * np.sin(PI * y), atol=1e-13)


def test_case2_source_at_origin():
    case = case2(3.0, 10.0)
    np.testing.assert_allclose(case.f(0.0, 0.0), [1 + 10 * math.sqrt(2), -1 - 10 * math.sqrt(2)], atol=1e-13)
    alpha, beta = 4.0, 7.0
    s = 2 ** ((alpha - 2) / 2) * beta
    np.testing.assert_allclose(case2(alpha, beta).f(0.5, -0.5), [1 + s + 0.75, -1 - s + 0.75], atol=1e-13)


def test_case2_divergence_free_and_weight():
    case = case2()
    x, y = np.random.default_rng(1).uniform(-1, 1, (2, 50))
    assert not np.any(case.b(x, y))
    u = case.u_exact(x, y)
    np.testing.assert_allclose(np.hypot(u[0], u[1]) ** (3.0 - 2.0), math.sqrt(2), rtol=1e-15)
    report = validate_compatibility(case, MESH)
    assert report.int_b == 0.0 and abs(report.int_g) <= 1e-14 and report.passed


def test_case2_neumann_sides():
    case = case2()
    s = np.linspace(-0.8, 0.8, 5)
    one = np.ones_like(s)
    assert np.allclose(case.g_N(one, s, one, 0 * s), 1.0)  # right
    assert np.allclose(case.g_N(s, -one, 0 * s, -one), 1.0)  # bottom
    assert np.allclose(case.g_N(-one, s, -one, 0 * s), -1.0)  # left
    assert np.allclose(case.g_N(s, one, 0 * s, one), -1.0)  # top


def test_alpha_must_exceed_two():
    with pytest.raises(ValueError):
        case2(2.0, 1.0)
    with pytest.raises(ValueError):
        derive_case(lambda x, y: (x, y), lambda x, y: 2 + 0 * x, lambda x, y: x, lambda x, y: (1 + 0 * x, 0 * y),
                    alpha=1.5, beta=1.0)


def test_derive_curl_field_is_divergence_free():
    # u = curl(sin(x) sin(y)) = (sin x cos y, -cos x sin y)
    case = derive_case(
        lambda x, y: (np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)),
        lambda x, y: 0.0 * x,
        lambda x, y: x * y,
        lambda x, y: (y, x),
        alpha=3.0, beta=2.0,
    )
    x, y = np.random.default_rng(2).uniform(-1, 1, (2, 30))
    assert not np.any(case.b(x, y))
    assert validate_compatibility(case, MESH).passed


def test_derive_beta_zero_is_darcy():
    Kinv = np.array([[2.0, 0.5], [0.5, 1.0]])
    case = derive_case(lambda x, y: (x**2, -y), lambda x, y: 2 * x - 1, lambda x, y: np.sin(x + y),
                       lambda x, y: (np.cos(x + y), np.cos(x + y)), alpha=3.0, beta=0.0, Kinv=Kinv)
    x, y = np.random.default_rng(3).uniform(-1, 1, (2, 30))
    expected = np.stack([np.cos(x + y) + 2 * x**2 - 0.5 * y, np.cos(x + y) + 0.5 * x**2 - y])
    np.testing.assert_allclose(case.f(x, y), expected, atol=1e-14)


def test_derive_reproduces_case1_source():
    ref = case1()
    rebuilt = derive_case(ref.u_exact, ref.div_u_exact, ref.p_exact, ref.grad_p_exact, 3.0, 10.0)
    x, y = np.random.default_rng(4).uniform(-1, 1, (2, 100))
    np.testing.assert_allclose(rebuilt.f(x, y), ref.f(x, y), atol=1e-10)


def test_derive_rejects_inconsistent_divergence():
    with pytest.raises(CaseError, match="divergence"):
        derive_case(lambda x, y: (x, y), lambda x, y: 1.0 + 0 * x, lambda x, y: 0 * x,
                    lambda x, y: (0 * x, 0 * y), alpha=3.0, beta=1.0)
    with pytest.raises(CaseError, match="gradient"):
        derive_case(lambda x, y: (x, y), lambda x, y: 2.0 + 0 * x, lambda x, y: x,
                    lambda x, y: (0 * x, 0 * y), alpha=3.0, beta=1.0)


def test_incompatible_constant_data():
    report = validate_compatibility(constant_data_case(1.0, 0.0), MESH)
    assert report.difference == pytest.approx(4.0, abs=1e-12)
    assert not report.passed
