import numpy as np
import pytest

from ordcomp.core_types import Box, MultiIndex, Point
from ordcomp.dsl import parse_expression, parse_operator
from ordcomp.errors import (DegreeTooLow, DimensionMismatch, EvalDomainError, InputError, NonpositiveViscosity,
                            UnboundParameter)
from ordcomp.pdeop import (CONVECTIVE_STANDARD, Rhs, apply_T, eval_F, eval_F_many, expr_to_poly, ns_closed_form,
                           ns_system, required_degrees)
from ordcomp.pwpoly import CellComplex, Poly, PwPoly, deriv_eval, eval_nlsc, eval_nlsc_many

NU = 0.01


def laplace():
    return parse_operator("dxx1(u) + dxx2(u) = f")


def test_laplace_jet():
    system = laplace()
    jet = np.zeros(system.jet_spec.size)
    jet[system.jet_spec.index('u', MultiIndex((2, 0)))] = 3.0
    jet[system.jet_spec.index('u', MultiIndex((0, 2)))] = 4.0
    assert eval_F(system, [0.3, 0.4], jet).tolist() == [7.0]


def ns_example_jet(system):
    spec = system.jet_spec
    jet = np.zeros(spec.size)
    for i in range(1, 4):
        jet[spec.index(f"u{i}", MultiIndex((0, 0, 0, 1)))] = -0.05
    jet[spec.index('u1', MultiIndex((1, 0, 0, 0)))] = -0.05
    return jet


def test_ns_jet_with_vanishing_velocity():
    system = ns_system(NU)
    values = eval_F(system, [0.2, 0.4, 0.6, 0.1], ns_example_jet(system))
    assert values == pytest.approx([-0.05] * 4, abs=1e-15)


def ns_residual_by_hand(system, jet, nu):
    spec = system.jet_spec
    dim = system.n_space

    def slot(unknown, *orders):
        return jet[spec.index(unknown, MultiIndex(tuple(orders)))]

    def unit(axis, order=1):
        orders = [0] * (dim + 1)
        orders[axis] = order
        return orders

    out = []
    for i in range(dim):
        ui = f"u{i + 1}"
        value = slot(ui, *unit(dim))
        value += sum(slot(f"u{j + 1}", *unit(-1, 0)) * slot(f"u{j + 1}", *unit(i)) for j in range(dim))
        value -= nu * sum(slot(ui, *unit(j, 2)) for j in range(dim))
        value += slot('p', *unit(i))
        out.append(value)
    out.append(sum(slot(f"u{j + 1}", *unit(j)) for j in range(dim)))
    return np.array(out)


def test_ns_matches_hand_coded_residual():
    rng = np.random.default_rng(17)
    system = ns_system(NU)
    points = rng.uniform(0, 1, size=(200, 4))
    jets = rng.normal(size=(200, system.jet_spec.size))
    values = eval_F_many(system, points, jets)
    for jet, value in zip(jets, values):
        assert np.allclose(value, ns_residual_by_hand(system, jet, NU), rtol=1e-12, atol=1e-12)


def test_ns_structure():
    system = ns_system(NU, dim=2, convective=CONVECTIVE_STANDARD)
    assert system.unknowns == ('p', 'u1', 'u2')
    assert system.m == 3
    assert system.rhs_names == ['f1', 'f2', '0.0']
    assert system.dim == 3
    assert required_degrees(system) == {'p': 1, 'u1': 2, 'u2': 2}


def test_ns_rejects_bad_parameters():
    with pytest.raises(NonpositiveViscosity):
        ns_system(0.0)
    with pytest.raises(InputError):
        ns_system(NU, dim=1)
    with pytest.raises(InputError):
        ns_system(NU, convective='sideways')


def test_ns_closed_form_jet():
    system = ns_system(NU)
    target = np.full(4, -0.05)
    jet = ns_closed_form(system, Point((0.5, 0.5, 0.5, 0.1)), target)
    assert np.array_equal(jet, ns_example_jet(system))
    assert eval_F(system, [0.5, 0.5, 0.5, 0.1], jet) == pytest.approx(target, abs=1e-15)


def test_ns_closed_form_needs_the_ns_shape():
    assert ns_closed_form(laplace(), Point((0.0, 0.0)), np.zeros(1)) is None


def test_eval_F_is_linear_in_linear_slots():
    rng = np.random.default_rng(3)
    system = parse_operator("dx1(u)^2 + 3*dxx1(u) - sin(x1)*u = f")
    k = system.jet_spec.index('u', MultiIndex((2,)))
    base = rng.normal(size=system.jet_spec.size)
    direction = np.zeros(system.jet_spec.size)
    direction[k] = 1.0
    steps = [eval_F(system, [0.7], base + s * direction)[0] - eval_F(system, [0.7], base)[0] for s in (0.5, 1.0, 2.0)]
    assert steps == pytest.approx([1.5, 3.0, 6.0], rel=1e-12)


def test_eval_F_shape_checks():
    system = laplace()
    with pytest.raises(DimensionMismatch):
        eval_F(system, [0.5], np.zeros(system.jet_spec.size))
    with pytest.raises(DimensionMismatch):
        eval_F(system, [0.5, 0.5], np.zeros(system.jet_spec.size + 1))


def test_unbound_parameter():
    system = parse_operator("nu*dxx1(u) = f")
    with pytest.raises(UnboundParameter) as info:
        eval_F(system, [0.5], [1.0])
    assert info.value.details['name'] == 'nu'
    assert eval_F(system.with_params(nu=2.0), [0.5], [1.0]).tolist() == [2.0]


def test_division_by_zero():
    system = parse_operator("u / dx1(u) = f")
    with pytest.raises(EvalDomainError):
        eval_F(system, [0.5], [1.0, 0.0])


def two_cell(make_piece):
    domain = Box.unit(1)
    complex_ = CellComplex.uniform(domain, [2])
    return PwPoly(complex_, [make_piece(cell, i) for i, cell in enumerate(complex_.cells)])


def test_apply_T_on_a_jump():
    system = parse_operator("dx1(u)^2 + u = g")
    v = two_cell(lambda cell, i: Poly.coordinate(cell.center, 0) ** 2 + float(i))
    residual, = apply_T(system, [v])
    assert eval_nlsc(residual, [0.25]) == pytest.approx(0.25 + 0.0625)
    # 1 + 0.25 from the left cell, 1 + 1.25 from the right
    assert eval_nlsc(residual, [0.5]) == pytest.approx(1.25)


def test_apply_T_agrees_with_eval_F_inside_cells():
    rng = np.random.default_rng(8)
    system = parse_operator("dx1(u)*u - 2*dxx1(u) + exp(x1) = g")

    def piece(cell, i):
        x = Poly.coordinate(cell.center, 0)
        a, b, c = rng.normal(size=3)
        return a * x ** 2 + b * x + c

    v = two_cell(piece)
    residual, = apply_T(system, {'u': v})
    for x in rng.uniform(0, 1, size=20):
        if abs(x - 0.5) < 1e-9:
            continue
        jet = [deriv_eval(v, [x], alpha) for _, alpha in system.jet_spec.slots]
        expected = eval_F(system, [x], jet)[0]
        assert eval_nlsc(residual, [x]) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_apply_T_needs_enough_degree():
    system = parse_operator("dxx1(u) = g")
    v = two_cell(lambda cell, i: Poly.coordinate(cell.center, 0))
    with pytest.raises(DegreeTooLow):
        apply_T(system, [v])


def test_apply_T_needs_one_function_per_unknown():
    system = parse_operator("dx1(u) + dx1(p) = g")
    v = two_cell(lambda cell, i: Poly.coordinate(cell.center, 0))
    with pytest.raises(InputError):
        apply_T(system, [v])
    with pytest.raises(InputError):
        apply_T(system, {'u': v})


def test_rhs_from_bindings():
    system = parse_operator("dx1(u) = g\nu = 2.5")
    rhs = Rhs.from_bindings(system, {'g': 'sin(x1)'})
    points = np.array([[0.0], [1.0]])
    values = rhs.evaluate_many(points)
    assert values[:, 0] == pytest.approx([0.0, np.sin(1.0)])
    assert values[:, 1].tolist() == [2.5, 2.5]
    assert rhs.labels == ['g', '2.5']


def test_rhs_missing_name():
    with pytest.raises(UnboundParameter):
        Rhs.from_bindings(parse_operator("dx1(u) = g"))


def test_rhs_rejects_jet_variables():
    with pytest.raises(InputError):
        Rhs.from_bindings(parse_operator("dx1(u) = g"), {'g': 'u + 1'})


def test_rhs_from_functions_uses_nlsc_values():
    system = parse_operator("dx1(u) = g")
    step = two_cell(lambda cell, i: Poly.constant(cell.center, float(i)))
    rhs = Rhs.from_functions(system, [step])
    points = np.array([[0.25], [0.5], [0.75]])
    assert rhs.evaluate_many(points)[:, 0].tolist() == eval_nlsc_many(step, points).tolist() == [0.0, 0.0, 1.0]


@pytest.mark.parametrize('text, is_poly', [
    ("x1^2 + 3*x1", True),
    ("x1/2 - 1", True),
    ("sin(x1)", False),
    ("1/x1", False),
])
def test_expr_to_poly(text, is_poly):
    poly = expr_to_poly(parse_expression(text), [1.0], {}, 1)
    assert (poly is not None) == is_poly
    if is_poly:
        x = 0.3
        expected = {"x1^2 + 3*x1": x * x + 3 * x, "x1/2 - 1": x / 2 - 1}[text]
        assert poly.evaluate([x]) == pytest.approx(expected)


def test_expr_to_poly_degree_cap():
    assert expr_to_poly(parse_expression("x1^3"), [0.0], {}, 1, max_degree=2) is None
    assert expr_to_poly(parse_expression("x1"), [0.0], {}, 1, max_degree=2).max_degree == 2
