import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dodesym import expr as E
from dodesym.expr import Const, evaluate, parse
from dodesym.symmetry import (
    ClosureError,
    VectorField,
    check_closure,
    invariant_count,
    jacobi_residual,
    lie_bracket,
    prolong,
    sample_jet_point,
    JET,
)


def field(xi, eta, label=""):
    return VectorField.from_text(xi, eta, label)


def assert_expr_zero(e, samples=20, seed=3):
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        pt = sample_jet_point(rng)
        assert abs(evaluate(e, pt)) < 1e-12


class TestProlong:
    def test_constant_vertical_field(self):
        pro = prolong(field("0", "1"))
        assert pro.eta_m == Const(1.0)
        for coeff in (pro.zeta1, pro.zeta1_m, pro.zeta2):
            assert coeff == Const(0.0)

    def test_uniform_scaling(self):
        # hand expansion: D(y) - dy D(x) = 0, D(0) - ddy = -ddy
        pro = prolong(field("x", "y"))
        assert pro.zeta1 == Const(0.0)
        assert_expr_zero(pro.zeta2 + E.DDY)

    def test_quadratic_vertical_field(self):
        # hand expansion of D(x^2): zeta1 = 2x, zeta2 = 2, shifted 2 xm
        pro = prolong(field("0", "x^2"))
        assert_expr_zero(pro.zeta1 - 2 * E.X)
        assert_expr_zero(pro.zeta2 - Const(2.0))
        assert_expr_zero(pro.zeta1_m - 2 * E.XM)

    def test_delayed_coefficients_are_renamed_base_coefficients(self):
        pro = prolong(field("x*y", "sin(x)+y^2"))
        rng = np.random.default_rng(5)
        for _ in range(10):
            pt = sample_jet_point(rng)
            assert evaluate(pro.xi_m, pt) == pytest.approx(
                evaluate(pro.xi, {**pt, "x": pt["xm"], "y": pt["ym"]}),
                rel=1e-14)
            assert evaluate(pro.eta_m, pt) == pytest.approx(
                evaluate(pro.eta, {**pt, "x": pt["xm"], "y": pt["ym"]}),
                rel=1e-14)

    def test_zeta1_is_infinitesimal_slope_transport(self):
        # transporting a line element through the flow of the field and
        # differencing in the group parameter reproduces zeta1
        f = field("x^2*0.5", "x*y")
        pro = prolong(f)
        rng = np.random.default_rng(11)
        eps = 1e-5
        for _ in range(15):
            pt = sample_jet_point(rng)
            x, y, dy = pt["x"], pt["y"], pt["dy"]

            def slope_after(sign):
                # first-order flow applied to the point and its direction
                xi_v = evaluate(f.xi, {"x": x, "y": y})
                eta_v = evaluate(f.eta, {"x": x, "y": y})
                dxi = (evaluate(E.diff(f.xi, "x"), {"x": x, "y": y})
                       + dy * evaluate(E.diff(f.xi, "y"), {"x": x, "y": y}))
                deta = (evaluate(E.diff(f.eta, "x"), {"x": x, "y": y})
                        + dy * evaluate(E.diff(f.eta, "y"), {"x": x, "y": y}))
                del xi_v, eta_v
                return (dy + sign * eps * deta) / (1.0 + sign * eps * dxi)

            central = (slope_after(+1) - slope_after(-1)) / (2 * eps)
            assert abs(central - evaluate(pro.zeta1, pt)) < 1e-6

    def test_rejects_jet_symbols_in_coefficients(self):
        with pytest.raises(ValueError):
            VectorField.from_text("dy", "0")


class TestBracket:
    def test_affine_pair(self):
        b = lie_bracket(field("0", "1"), field("0", "y"))
        assert b.xi == Const(0.0) and b.eta == Const(1.0)

    def test_projective_pair(self):
        b = lie_bracket(field("0", "1"), field("0", "y^2"))
        assert_expr_zero(b.eta - 2 * E.Y)

    def test_translation_against_weighted_scaling(self):
        b = lie_bracket(field("1", "0"), field("x", "a*y"))
        assert b.xi == Const(1.0)
        assert_expr_zero(E.bind_params(b.eta, {"a": 0.7}))

    @settings(max_examples=25, deadline=None)
    @given(st.sampled_from([("0", "1"), ("1", "0"), ("x", "y"), ("0", "x"),
                            ("0", "y"), ("x", "0"), ("0", "y^2")]),
           st.sampled_from([("0", "1"), ("x", "y"), ("0", "x*y"),
                            ("x^2", "x*y")]))
    def test_antisymmetry(self, spec_a, spec_b):
        a = field(*spec_a)
        b = field(*spec_b)
        ab = lie_bracket(a, b)
        ba = lie_bracket(b, a)
        assert_expr_zero(ab.xi + ba.xi, samples=10)
        assert_expr_zero(ab.eta + ba.eta, samples=10)


class TestClosure:
    def test_abelian_translations(self):
        res = check_closure([field("1", "0"), field("0", "1")])
        assert res.residual < 1e-12
        assert np.allclose(res.constants[(0, 1)], 0.0, atol=1e-12)

    def test_affine_algebra(self):
        res = check_closure([field("0", "1", "X1"), field("x", "y", "X2")])
        assert res.constant(0, 1, 0) == pytest.approx(1.0, abs=1e-10)
        assert res.constant(0, 1, 1) == pytest.approx(0.0, abs=1e-10)

    def test_projective_triple(self):
        res = check_closure([field("0", "1"), field("0", "y"),
                             field("0", "y^2")])
        assert res.constant(0, 1, 0) == pytest.approx(1.0, abs=1e-9)
        assert res.constant(0, 2, 1) == pytest.approx(2.0, abs=1e-9)
        assert res.constant(1, 2, 2) == pytest.approx(1.0, abs=1e-9)

    def test_failure_names_the_pair(self):
        with pytest.raises(ClosureError) as err:
            check_closure([field("0", "x", "A"), field("1", "0", "B")])
        assert err.value.pair == ("A", "B")

    def test_requires_two_fields(self):
        with pytest.raises(ValueError):
            check_closure([field("0", "1")])


class TestJacobi:
    @pytest.mark.parametrize("triple", [
        (("0", "1"), ("0", "y"), ("0", "y^2")),
        (("1", "0"), ("0", "1"), ("x", "a*y")),
        (("0", "1"), ("x", "y"), ("2*x*y", "y^2")),
    ])
    def test_cyclic_double_brackets_vanish(self, triple):
        fields = tuple(field(*spec) for spec in triple)
        assert jacobi_residual(fields, params={"a": 0.5}) < 1e-10


class TestInvariantCount:
    def test_single_vertical_field(self):
        report = invariant_count([field("0", "1")])
        assert report.rank_z == 1 and report.k == 6
        assert report.dim_m == 7

    def test_two_translations(self):
        report = invariant_count([field("1", "0"), field("0", "1")])
        assert report.rank_z == 2 and report.k == 5

    def test_four_dimensional_nilpotent_family(self):
        fields = [field("0", "1"), field("0", "x"), field("0", "x^2"),
                  field("1", "0")]
        report = invariant_count(fields)
        assert report.rank_z == 4 and report.k == 3

    def test_invariant_under_change_of_basis(self):
        fields = [field("0", "1"), field("0", "x"), field("0", "x^2"),
                  field("1", "0")]
        k_before = invariant_count(fields).k
        rng = np.random.default_rng(9)
        while True:
            m = rng.uniform(-2, 2, size=(4, 4))
            if abs(np.linalg.det(m)) > 0.3:
                break
        mixed = []
        for row in m:
            xi = sum((Const(float(c)) * f.xi for c, f in zip(row, fields)),
                     Const(0.0))
            eta = sum((Const(float(c)) * f.eta for c, f in zip(row, fields)),
                      Const(0.0))
            mixed.append(VectorField(E.simplify(xi), E.simplify(eta)))
        assert invariant_count(mixed).k == k_before

    def test_sample_points_respect_delay_ordering(self):
        report = invariant_count([field("0", "1")])
        for pt in report.sample_points:
            as_dict = dict(zip(JET, pt))
            assert as_dict["xm"] < as_dict["x"]
