import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from viralsde import (
    EXAMPLE2,
    TABLE2,
    ModelParams,
    NoiseParams,
    StabilityMatrix,
    condition_a,
    condition_b,
    eigen2,
    stability_matrix,
    stability_report,
)

# numpy.linalg.eigvalsh of [[-1.32, -1.035], [-1.035, -1.97]]
EIG_REFERENCE = (-2.72982718, -0.56017282)

small = st.floats(-50, 50)


def test_matrix_table2():
    m = stability_matrix(TABLE2, NoiseParams(0.1, 0.1))
    # 2(0.24 - 0.795 - 0.1) - 0.01, 2*0.5 - 2*0.88 - 0.01, 0.74 - 1.775
    assert (m.d1, m.d2, m.b) == pytest.approx((-1.32, -0.77, -1.035), abs=1e-12)


def test_matrix_zero_diagonal():
    p = ModelParams(alpha=0.895, p=0.795, mu=0.1, beta=0.0088, omega=10, q=0.28, mu1=0.6)
    m = stability_matrix(p, NoiseParams())
    assert m.d1 == pytest.approx(0, abs=1e-12) and m.d2 == pytest.approx(0, abs=1e-12)


def test_conditions_table2():
    noise = NoiseParams(0.1, 0.1)
    a = condition_a(TABLE2, noise)
    assert a.lhs == pytest.approx(-1.035) and a.rhs == pytest.approx(0.01) and a.holds
    b = condition_b(TABLE2, noise)
    assert b.lhs == pytest.approx(-1.035) and b.rhs == pytest.approx(1.32 * 0.77) and b.holds


def test_conditions_example2_violated():
    noise = NoiseParams(0.1, 0.1)
    assert not condition_a(EXAMPLE2, noise).holds
    assert not condition_b(EXAMPLE2, noise).holds


def test_conditions_deterministic_specialisation():
    a = condition_a(TABLE2, NoiseParams())
    assert a.rhs == 0
    m = stability_matrix(TABLE2, NoiseParams())
    assert m.d1 == pytest.approx(2 * (0.24 - 0.795 - 0.1))


def test_eigen2_reference():
    lam = eigen2(StabilityMatrix(-1.32, -1.97, -1.035))
    assert lam == pytest.approx(EIG_REFERENCE, abs=1e-8)
    assert abs(lam[1]) / 4 == pytest.approx(0.1401, abs=1e-4)


def test_eigen2_diagonal():
    assert eigen2(StabilityMatrix(-3.0, 2.0, 0.0)) == (-3.0, 2.0)
    assert eigen2(StabilityMatrix(0.0, 0.0, 0.0)) == (0.0, 0.0)


@given(small, small, small)
def test_eigen2_against_numpy(d1, d2, b):
    lam = eigen2(StabilityMatrix(d1, d2, b))
    ref = np.linalg.eigvalsh([[d1, b], [b, d2]])
    scale = 1 + abs(d1) + abs(d2) + abs(b)
    assert lam[0] <= lam[1]
    assert np.allclose(lam, ref, atol=1e-12 * scale**2)
    assert lam[0] + lam[1] == pytest.approx(d1 + d2, rel=1e-12, abs=1e-12 * scale)
    assert lam[0] * lam[1] == pytest.approx(d1 * d2 - b * b, rel=1e-9, abs=1e-12 * scale**2)


def test_report_table2():
    r = stability_report(TABLE2, NoiseParams(0.1, 0.1), epsilon=0.1)
    assert r.condition_a.holds and r.condition_b.holds
    # the stated conditions hold while the matrix is indefinite: b^2 > d1 d2
    assert not r.negative_definite
    assert not r.condition_b_consistent
    assert r.decay_rate_bound is None
    assert r.boundedness_limit == pytest.approx(17.3205, abs=1e-4)
    assert r.chebyshev_k == pytest.approx(173.205, abs=1e-3)
    assert r.permanence_h == pytest.approx(100.0)
    assert r.permanence_rho == pytest.approx(1000.0)
    assert r.permanence_xi == pytest.approx(1 / (math.sqrt(3) * 1000))
    d = r.to_dict()
    assert d["decay_rate_bound"] is None and d["condition_a"]["holds"]


def test_report_negative_definite_case():
    p = TABLE2.replace(beta=0.001)
    r = stability_report(p, NoiseParams(0.1, 0.1))
    assert r.negative_definite and r.condition_b_consistent
    assert r.decay_rate_bound == pytest.approx(abs(r.eigenvalues[1]) / 4)


def test_report_epsilon_range():
    with pytest.raises(ValueError):
        stability_report(TABLE2, NoiseParams(), epsilon=1.0)


@given(
    st.floats(0.0, 0.05), st.floats(0.1, 2), st.floats(0.1, 2),
    st.floats(0.0, 1), st.floats(0.1, 2), st.floats(0.1, 2),
    st.floats(0, 1), st.floats(0, 1),
)
def test_squared_criterion_agrees_with_eigenvalues(beta, mu, mu1, alpha, p, q, s1, s2):
    params = ModelParams(omega=10, beta=beta, mu=mu, mu1=mu1, alpha=alpha, p=p, q=q)
    r = stability_report(params, NoiseParams(s1, s2))
    m = r.matrix
    exact = m.d1 < 0 and m.d2 < 0 and m.b**2 < m.d1 * m.d2
    margin = abs(m.d1 * m.d2 - m.b**2)
    if margin > 1e-9:
        assert exact == r.negative_definite
    if r.negative_definite:
        assert r.condition_b_consistent or not (r.condition_a.holds and r.condition_b.holds)
