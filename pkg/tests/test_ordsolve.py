import dataclasses
import math

import numpy as np
import pytest

from ordcomp.cell_processor import CellTaskProcessor
from ordcomp.core_types import Box, Point
from ordcomp.dsl import parse_operator
from ordcomp.errors import (CenterNotOnInitialFace, ConfigError, DegreeTooLow, DepthExhausted, InputError,
                            NoJetFound)
from ordcomp.ordsolve import (JetSolverCfg, SolveCfg, assemble, jet_solve, patch_with_initial, restrict_initial,
                              solution_sequence, t0_image, taylor_patch, verify, witness_sequence)
from ordcomp.pdeop import eval_F, ns_system
from ordcomp.pwpoly import CellComplex, Poly, PwPoly, eval_nlsc_many

TWO_PI = 2 * math.pi


def slope_system():
    return parse_operator("dx(u) = 1")


def cos_system():
    return parse_operator("dx(u) = g")


def cos_rhs():
    return {'g': 'cos(5*x1)'}


def test_jet_solve_linear():
    jet = jet_solve(slope_system(), [0.5], [0.95])
    assert jet == pytest.approx([0.95], abs=1e-10)


def test_jet_solve_outside_the_range():
    system = parse_operator("dx(u)^2 = g")
    with pytest.raises(NoJetFound) as info:
        jet_solve(system, [0.5], [-0.05])
    assert info.value.residual > 1e-10
    assert info.value.exit_code == 3


def test_jet_solve_uses_the_closed_form():
    system = ns_system(0.01)
    target = np.full(4, -0.05)
    jet = jet_solve(system, [0.5, 0.5, 0.5, 0.1], target)
    assert np.count_nonzero(jet) == 4
    assert eval_F(system, [0.5, 0.5, 0.5, 0.1], jet) == pytest.approx(target, abs=1e-15)


def test_jet_solve_without_the_closed_form():
    system = ns_system(0.01)
    target = np.full(4, -0.05)
    jet = jet_solve(system, [0.5, 0.5, 0.5, 0.1], target, JetSolverCfg(use_closed_form=False))
    assert eval_F(system, [0.5, 0.5, 0.5, 0.1], jet) == pytest.approx(target, abs=1e-9)


def test_taylor_patch_realizes_the_jet():
    system = parse_operator("dx1(u) + dxx2(u) + u = g")
    spec = system.jet_spec
    jet = np.array([0.3, -1.2, 2.5])
    center = Point((0.2, 0.7))
    polys = taylor_patch(jet, center, spec, degree=2)
    for value, (unknown, alpha) in zip(jet, spec.slots):
        assert polys[unknown].derivative(alpha).evaluate(center) == pytest.approx(value)
    with pytest.raises(DegreeTooLow):
        taylor_patch(jet, center, spec, degree=1)


def test_patch_with_initial_keeps_the_initial_values():
    system = parse_operator("dt(u) = f", n_space=1)
    u0 = {'u': Poly.constant([0.5, 0.0], 0.0)}
    polys = patch_with_initial([-0.05], [0.5, 0.0], u0, system.jet_spec, 1)
    points = np.array([[0.1, 0.0], [0.9, 0.0], [0.3, 0.4]])
    assert polys['u'].evaluate_many(points).tolist() == pytest.approx([0.0, 0.0, -0.02])


def test_patch_with_initial_needs_a_face_center():
    system = parse_operator("dt(u) = f", n_space=1)
    with pytest.raises(CenterNotOnInitialFace):
        patch_with_initial([-0.05], [0.5, 0.1], {}, system.jet_spec, 1)


def test_constant_slope_solution():
    sol = assemble(slope_system(), None, cfg=SolveCfg(Box.unit(1), eps=0.1))
    certificate = sol.certificate
    assert certificate.passed
    assert len(sol.complex) == 1
    assert certificate.worst_margin == pytest.approx(0.05, abs=1e-9)
    assert certificate.depth_histogram == {0: 1}
    assert certificate.cells[0].edge_margin == pytest.approx(0.05, abs=1e-9)
    assert certificate.to_dict()['pass'] is True
    u = sol.w['u']
    assert eval_nlsc_many(u, np.array([[0.0], [1.0]])).tolist() == pytest.approx([-0.475, 0.475])


def test_constant_slope_verifies_at_any_density():
    sol = assemble(slope_system(), None, cfg=SolveCfg(Box.unit(1), eps=0.1))
    for density in (1, 7, 30):
        certificate = verify(sol, density, seed=density)
        assert certificate.passed
        assert certificate.worst_margin == pytest.approx(0.05, abs=1e-9)


def test_no_jet_on_a_cell():
    system = parse_operator("dx(u)^2 = -1")
    with pytest.raises(NoJetFound) as info:
        assemble(system, None, cfg=SolveCfg(Box.unit(1), eps=0.1))
    assert info.value.cell is not None


def test_oscillating_rhs_needs_many_cells():
    cfg = SolveCfg(Box.from_bounds([0.0], [TWO_PI]), eps=0.1)
    sol = assemble(cos_system(), cos_rhs(), cfg=cfg)
    assert sol.certificate.passed
    assert len(sol.complex) > 8
    for low, high in sol.certificate.deviation_ranges:
        assert -0.1 < low <= high < 0.0
    coarser = assemble(cos_system(), cos_rhs(), cfg=SolveCfg(cfg.domain, eps=0.4))
    assert len(coarser.complex) < len(sol.complex)


@pytest.mark.parametrize('eps', [0.05, 0.01])
def test_oscillating_rhs_at_small_bands(eps):
    cfg = SolveCfg(Box.from_bounds([0.0], [TWO_PI]), eps=eps)
    sol = assemble(cos_system(), cos_rhs(), cfg=cfg)
    assert sol.certificate.passed
    for low, high in sol.certificate.deviation_ranges:
        assert -eps < low <= high < 0.0
    check = verify(sol, 2 * cfg.samples, seed=1009)
    assert check.passed
    for low, high in check.deviation_ranges:
        assert -eps < low <= high < 0.0


def test_depth_exhausted():
    cfg = SolveCfg(Box.from_bounds([0.0], [TWO_PI]), eps=0.01, max_depth=2)
    with pytest.raises(DepthExhausted) as info:
        assemble(cos_system(), cos_rhs(), cfg=cfg)
    assert info.value.worst_margin <= 0


def test_worker_count_does_not_change_the_solution():
    cfg = SolveCfg(Box.from_bounds([0.0], [TWO_PI]), eps=0.2)
    with CellTaskProcessor(max_workers=1) as one, CellTaskProcessor(max_workers=4) as four:
        a = assemble(cos_system(), cos_rhs(), cfg=cfg, processor=one)
        b = assemble(cos_system(), cos_rhs(), cfg=cfg, processor=four)
    assert a.complex == b.complex
    assert a.w['u'].pieces == b.w['u'].pieces
    assert a.certificate.to_dict() == b.certificate.to_dict()


def test_neighbor_matching_still_certifies():
    cfg = SolveCfg(Box.from_bounds([0.0], [TWO_PI]), eps=0.2)
    sol = assemble(cos_system(), cos_rhs(), cfg=cfg, jcfg=JetSolverCfg(neighbor_matching=True))
    assert sol.certificate.passed


def test_verify_is_deterministic():
    sol = assemble(cos_system(), cos_rhs(), cfg=SolveCfg(Box.from_bounds([0.0], [TWO_PI]), eps=0.2))
    first = verify(sol, 3, seed=11, keep_samples=True)
    second = verify(sol, 3, seed=11, keep_samples=True)
    assert first.to_dict() == second.to_dict()
    assert np.array_equal(first.samples, second.samples)
    # x, component, residual, band low, band high
    assert first.samples.shape == (3 * len(sol.complex), 5)
    with pytest.raises(InputError):
        verify(sol, 0, seed=1)


def test_heat_equation_with_initial_data():
    system = parse_operator("dt(u) - dxx1(u) = 0")
    cfg = SolveCfg(Box.from_bounds([0.0, 0.0], [1.0, 0.2]), eps=0.1, cells_per_axis=[2, 2], degree=2)
    sol = assemble(system, None, {'u': 'x1^2'}, cfg=cfg)
    assert sol.certificate.passed
    assert sol.certificate.initial_defect <= 1e-12
    face = restrict_initial(sol.w, ['u'])['u']
    xs = np.array([[0.1], [0.37], [0.5], [0.93]])
    assert eval_nlsc_many(face, xs) == pytest.approx(xs[:, 0] ** 2, abs=1e-12)
    assert verify(sol, 5, seed=2).initial_defect <= 1e-12
    residuals, initial = t0_image(sol)
    inside = np.array([[0.3, 0.07], [0.8, 0.13], [0.6, 0.19]])
    values = eval_nlsc_many(residuals[0], inside)
    assert np.all((values >= -0.1) & (values < 0.0))
    assert eval_nlsc_many(initial['u'], xs) == pytest.approx(xs[:, 0] ** 2, abs=1e-12)


def test_time_ode_keeps_linear_initial_data():
    system = parse_operator("dt(u) = 1", n_space=1)
    cfg = SolveCfg(Box.from_bounds([0.0, 0.0], [1.0, 1.0]), eps=0.1)
    sol = assemble(system, None, {'u': 'x1'}, cfg=cfg)
    assert sol.certificate.passed
    assert sol.certificate.initial_defect <= 1e-14
    face = restrict_initial(sol.w, ['u'])['u']
    xs = np.array([[0.0], [0.25], [0.6], [1.0]])
    assert eval_nlsc_many(face, xs) == pytest.approx(xs[:, 0], abs=1e-14)
    check = verify(sol, 8, seed=17)
    assert check.passed
    assert check.initial_defect <= 1e-14


def test_initial_data_needs_time_to_start_at_zero():
    system = parse_operator("dt(u) - dxx1(u) = 0")
    cfg = SolveCfg(Box.from_bounds([0.0, 0.5], [1.0, 1.0]), eps=0.1, degree=2)
    with pytest.raises(CenterNotOnInitialFace):
        assemble(system, None, {'u': 'x1^2'}, cfg=cfg)


def test_initial_data_on_a_stationary_system():
    with pytest.raises(InputError):
        assemble(slope_system(), None, {'u': 0.0}, cfg=SolveCfg(Box.unit(1), eps=0.1))


def test_navier_stokes_demo():
    system = ns_system(0.01, dim=2)
    cfg = SolveCfg(Box.from_bounds([0.0, 0.0, 0.0], [1.0, 1.0, 0.25]), eps=0.25, max_depth=3, samples=3,
                   cells_per_axis=[2, 2, 1], degree=2)
    u0 = {'u1': '0.1*x2', 'u2': '-0.1*x1'}
    sol = assemble(system, {'f1': 0.0, 'f2': 0.0}, u0, cfg=cfg)
    assert sol.certificate.passed
    face = restrict_initial(sol.w, ['u1', 'u2'])
    points = np.array([[0.2, 0.3], [0.8, 0.6]])
    assert eval_nlsc_many(face['u1'], points) == pytest.approx(0.1 * points[:, 1], abs=1e-12)
    assert eval_nlsc_many(face['u2'], points) == pytest.approx(-0.1 * points[:, 0], abs=1e-12)


def test_restrict_initial_sets_time_to_the_face():
    domain = Box.from_bounds([0.0, 0.0], [1.0, 1.0])
    complex_ = CellComplex.uniform(domain, [2, 2])
    pieces = []
    for cell in complex_.cells:
        x, t = Poly.coordinate(cell.center, 0), Poly.coordinate(cell.center, 1)
        pieces.append(1.0 + 2.0 * t + 3.0 * x * t + t ** 2)
    face = restrict_initial({'u': PwPoly(complex_, pieces)})['u']
    assert len(face.complex) == 2
    xs = np.array([[0.1], [0.7]])
    assert eval_nlsc_many(face, xs).tolist() == pytest.approx([1.0, 1.0])


def test_restrict_initial_needs_space():
    w = {'u': PwPoly.constant(Box.unit(1), 1.0)}
    with pytest.raises(InputError):
        restrict_initial(w)


def test_solution_sequence_pinches_at_g():
    cfg = SolveCfg(Box.unit(1))
    result = solution_sequence(slope_system(), None, None, [2, 4, 8], cfg)
    assert [s.eps for s in result.solutions] == [0.5, 0.25, 0.125]
    assert all(s.certificate.passed for s in result.solutions)
    assert result.converged
    verdict, = result.verdicts
    assert verdict.converged
    chain, = result.chains
    assert chain.pinched
    assert chain.midpoint == pytest.approx(1.0 - 1.0 / 16)
    as_dict = result.to_dict()
    assert as_dict['n_list'] == [2, 4, 8]
    assert len(as_dict['certificates']) == 3


def test_oscillating_sequence_pinches_at_g():
    cfg = SolveCfg(Box.from_bounds([0.0], [TWO_PI]))
    result = solution_sequence(cos_system(), cos_rhs(), None, [2, 4, 8, 16, 32], cfg)
    assert all(s.certificate.passed for s in result.solutions)
    assert result.converged
    verdict, = result.verdicts
    assert verdict.converged
    assert all(chain.pinched for chain in result.chains)
    assert result.chains[0].gap <= 1.0 / 32 * (1 + 1e-6)


def test_sequence_terms_must_stay_in_their_band():
    result = solution_sequence(slope_system(), None, None, [2, 4, 8], SolveCfg(Box.unit(1)))
    steep = {'u': PwPoly(CellComplex.single(Box.unit(1)), [Poly.coordinate([0.5], 0) * 2.0])}
    solutions = list(result.solutions)
    solutions[1] = dataclasses.replace(solutions[1], w=steep)
    broken = witness_sequence(solutions, [2, 4, 8])
    assert not broken.converged
    verdict, = broken.verdicts
    assert 'u_2 > mu_2' in verdict.reason

    solutions = list(result.solutions)
    solutions[2] = dataclasses.replace(solutions[2],
                                       certificate=dataclasses.replace(solutions[2].certificate, passed=False))
    assert not witness_sequence(solutions, [2, 4, 8]).converged
    assert witness_sequence(result.solutions, [2, 4, 8]).converged
    with pytest.raises(InputError):
        witness_sequence(result.solutions, [2, 4])


def test_short_sequence_has_no_verdict():
    result = solution_sequence(slope_system(), None, None, [1, 2], SolveCfg(Box.unit(1)))
    assert result.verdicts == [None]


@pytest.mark.parametrize('n_list', [[], [0, 1], [3, 2], [2, 2]])
def test_solution_sequence_rejects_bad_n_lists(n_list):
    with pytest.raises(InputError):
        solution_sequence(slope_system(), None, None, n_list, SolveCfg(Box.unit(1)))


@pytest.mark.parametrize('kwargs', [
    {'eps': 0.0},
    {'theta': 1.0},
    {'max_depth': -1},
    {'samples': 0},
    {'degree': -1},
    {'cells_per_axis': [1, 1]},
])
def test_solve_cfg_validation(kwargs):
    with pytest.raises(ConfigError):
        SolveCfg(Box.unit(1), **kwargs)


@pytest.mark.parametrize('kwargs', [
    {'tol': 0.0},
    {'max_iter': 0},
    {'damping': -1.0},
    {'damping_up': 1.0},
    {'damping_down': 1.5},
])
def test_jet_solver_cfg_validation(kwargs):
    with pytest.raises(ConfigError):
        JetSolverCfg(**kwargs)


def test_residuals_of_the_solution_stay_in_the_band():
    sol = assemble(cos_system(), cos_rhs(), cfg=SolveCfg(Box.from_bounds([0.0], [TWO_PI]), eps=0.2))
    residual, = sol.residuals()
    rng = np.random.default_rng(4)
    cells = sol.complex.cells
    for index in rng.choice(len(cells), size=10, replace=False):
        center = cells[index].center.as_array()[None, :]
        g = np.cos(5 * center[0, 0])
        value = eval_nlsc_many(residual, center)[0]
        assert g - 0.2 < value < g
