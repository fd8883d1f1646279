import math

import numpy as np
import pytest

from ordcomp.core_types import Box
from ordcomp.errors import EmptyFamily, InputError, NotNearlyFinite, NotNested
from ordcomp.gridfn import Grid, GridFn
from ordcomp.lattice import (MODE_EXACT, MODE_GRID, IntervalChain, LatticeCfg, OrderInterval, SampleFrame,
                             chain_check, dedekind_inf, dedekind_sup, distributivity_check, join, leq, meet,
                             order_converges)
from ordcomp.pwpoly import CellComplex, Poly, PwPoly, eval_nlsc, eval_nlsc_many


def linear_pieces(edges, slopes_offsets):
    """1D PwPoly with piece a*x + b on each interval"""
    cells = [Box.from_bounds([a], [b]) for a, b in zip(edges, edges[1:])]
    pieces = [Poly.coordinate(c.center, 0) * a + b for c, (a, b) in zip(cells, slopes_offsets)]
    return PwPoly(CellComplex(Box.from_bounds([edges[0]], [edges[-1]]), cells), pieces)


def constant(value, domain=None):
    return PwPoly.constant(domain or Box.unit(1), value)


def power(k, domain=None):
    domain = domain or Box.unit(1)
    return PwPoly(CellComplex.single(domain), [Poly.coordinate(domain.center, 0) ** k])


def tent(n):
    """max(0, 1 - n|x|) on [-1, 1]"""
    if n == 1:
        return linear_pieces([-1.0, 0.0, 1.0], [(1.0, 1.0), (-1.0, 1.0)])
    w = 1.0 / n
    return linear_pieces([-1.0, -w, 0.0, w, 1.0], [(0.0, 0.0), (n, 1.0), (-n, 1.0), (0.0, 0.0)])


def samples_of(*functions, density=5):
    frame = SampleFrame(list(functions), MODE_EXACT, LatticeCfg(density=density))
    return frame.points, [frame.values(f) for f in functions]


def test_sup_of_tents_is_the_widest_tent():
    family = [tent(n) for n in (1, 2, 4)]
    result = dedekind_sup(family)
    points, (values, widest) = samples_of(result, tent(1))
    assert np.allclose(values, widest)
    assert eval_nlsc(result, [0.0]) == pytest.approx(1.0)


@pytest.mark.parametrize('op', [dedekind_sup, dedekind_inf])
def test_singleton_family(op):
    c = constant(2.5)
    assert op([c]) is c


def test_empty_family():
    with pytest.raises(EmptyFamily):
        dedekind_sup([])
    with pytest.raises(EmptyFamily):
        distributivity_check([], constant(0.0))


def test_grid_sup_not_nearly_finite():
    grid = Grid(Box.unit(1), (9,))
    family = [GridFn.constant(grid, float(k)) for k in range(1, 4)] + [GridFn.constant(grid, math.inf)]
    with pytest.raises(NotNearlyFinite):
        dedekind_sup(family)


def test_inf_of_x_and_x_squared():
    result = dedekind_inf([power(1), power(2)])
    points, (values, square) = samples_of(result, power(2))
    assert np.allclose(values, square)


def test_sup_and_inf_bound_every_member():
    rng = np.random.default_rng(31)
    for _ in range(20):
        family = [linear_pieces([0.0, float(s), 1.0], rng.normal(size=(2, 2)))
                  for s in rng.uniform(0.1, 0.9, size=3)]
        sup, inf = dedekind_sup(family), dedekind_inf(family)
        for member in family:
            assert leq(member, sup)
            assert leq(inf, member)


def random_edges(rng):
    """Cell edges on [0, 1] with breaks on multiples of 1/16"""
    breaks = np.sort(rng.choice(np.arange(1, 16), size=int(rng.integers(1, 5)), replace=False)) / 16
    return [0.0, *breaks.tolist(), 1.0]


def step_function(rng):
    """Random step function and its plateau values"""
    edges = random_edges(rng)
    levels = rng.normal(size=len(edges) - 1)
    return linear_pieces(edges, [(0.0, float(b)) for b in levels]), levels


def test_sup_is_below_every_upper_bound():
    rng = np.random.default_rng(32)
    for _ in range(10):
        family, levels = zip(*[step_function(rng) for _ in range(3)])
        sup = dedekind_sup(list(family))
        top = max(float(np.max(v)) for v in levels)
        for c in rng.uniform(top - 1.0, top + 1.0, size=100):
            assert bool(leq(sup, constant(c))) == (c >= top)


def test_inf_is_above_every_lower_bound():
    rng = np.random.default_rng(33)
    for _ in range(10):
        family, levels = zip(*[step_function(rng) for _ in range(3)])
        inf = dedekind_inf(list(family))
        bottom = min(float(np.min(v)) for v in levels)
        for c in rng.uniform(bottom - 1.0, bottom + 1.0, size=100):
            assert bool(leq(constant(c), inf)) == (c <= bottom)


FINE = Grid(Box.unit(1), (513,))


def window(values, r, reduce):
    padded = np.pad(values, r, mode='edge')
    return reduce(np.lib.stride_tricks.sliding_window_view(padded, 2 * r + 1), axis=-1)


def closing(values, r_inner=1, r_outer=2):
    return window(window(values, r_inner, np.max), r_outer, np.min)


def random_family(rng):
    """Up to five step or piecewise-linear functions"""
    family = []
    for _ in range(int(rng.integers(1, 6))):
        if rng.uniform() < 0.5:
            family.append(step_function(rng)[0])
        else:
            edges = random_edges(rng)
            family.append(linear_pieces(edges, rng.normal(size=(len(edges) - 1, 2))))
    return family


def test_grid_sup_matches_a_windowed_oracle():
    rng = np.random.default_rng(41)
    cfg = LatticeCfg(grid=FINE)
    nodes = FINE.nodes()
    for _ in range(200):
        family = random_family(rng)
        result = dedekind_sup(family, MODE_GRID, cfg)
        pointwise = np.max([eval_nlsc_many(f, nodes) for f in family], axis=0)
        assert np.allclose(result.flat(), closing(pointwise), rtol=0.0, atol=1e-12)


def test_grid_inf_matches_a_windowed_oracle():
    rng = np.random.default_rng(42)
    cfg = LatticeCfg(grid=FINE)
    nodes = FINE.nodes()
    for _ in range(200):
        family = random_family(rng)
        result = dedekind_inf(family, MODE_GRID, cfg)
        pointwise = np.min([eval_nlsc_many(f, nodes) for f in family], axis=0)
        assert np.allclose(result.flat(), closing(window(pointwise, 1, np.min)), rtol=0.0, atol=1e-12)


def test_exact_and_grid_results_agree_away_from_jumps():
    rng = np.random.default_rng(43)
    cfg = LatticeCfg(grid=FINE)
    nodes = FINE.nodes()
    # windows reach 4 nodes; jumps sit every 32 nodes
    offset = np.arange(FINE.shape[0]) % 32
    far = (offset > 4) & (offset < 28)
    for _ in range(50):
        family = [step_function(rng)[0] for _ in range(int(rng.integers(2, 6)))]
        for op in (dedekind_sup, dedekind_inf):
            exact = eval_nlsc_many(op(family), nodes)
            grid = op(family, MODE_GRID, cfg).flat()
            assert np.array_equal(exact[far], grid[far])


def test_grid_mode_sup_inf():
    grid = Grid(Box.unit(1), (5,))
    u = GridFn(grid, [0.0, 0.0, 5.0, 0.0, 0.0])
    zero = GridFn.constant(grid, 0.0)
    assert dedekind_sup([u, zero]).flat().tolist() == [0.0] * 5
    v = GridFn(grid, [1.0, 1.0, 0.0, 1.0, 1.0])
    assert dedekind_inf([v, GridFn.constant(grid, 2.0)]).flat().tolist() == [0.0] * 5


def test_grid_mode_on_piecewise_inputs_needs_a_grid():
    with pytest.raises(InputError):
        dedekind_sup([power(1), power(2)], MODE_GRID)
    cfg = LatticeCfg(grid=Grid(Box.unit(1), (11,)))
    result = dedekind_sup([power(1), power(2)], MODE_GRID, cfg)
    assert isinstance(result, GridFn)


def test_mixed_family_rejected():
    grid = Grid(Box.unit(1), (5,))
    with pytest.raises(InputError):
        dedekind_sup([power(1), GridFn.constant(grid, 0.0)])


def test_leq_dispatch():
    assert leq(power(2), power(1))
    result = leq(power(1), power(2), LatticeCfg(density=1))
    assert not result and result.gap == pytest.approx(0.25)
    grid = Grid(Box.unit(1), (4,))
    assert leq(GridFn.constant(grid, 0.0), GridFn.constant(grid, 1.0))


def test_meet_and_join():
    lo, hi = power(2), power(1)
    points, (m, j, a, b) = samples_of(meet(lo, hi), join(lo, hi), lo, hi)
    assert np.allclose(m, a)
    assert np.allclose(j, b)


def geometric(n_terms):
    """u_n = x^2 + 2^-n"""
    return [PwPoly(CellComplex.single(Box.unit(1)), [Poly.coordinate([0.5], 0) ** 2 + 2.0 ** -n])
            for n in range(1, n_terms + 1)]


def test_converging_sequence():
    verdict = order_converges(geometric(30), power(2))
    assert verdict.converged
    witness = verdict.witness
    assert len(witness.lambda_seq) == 29
    assert witness.residual <= 1e-7
    assert all(a >= b for a, b in zip(witness.gaps, witness.gaps[1:]))


def test_constant_sequence_converges():
    verdict = order_converges([constant(1.5)] * 4, constant(1.5))
    assert verdict.converged
    assert verdict.witness.gaps == [0.0, 0.0, 0.0]


def test_alternating_sequence_does_not_converge():
    seq = [constant((-1.0) ** n) for n in range(1, 11)]
    verdict = order_converges(seq, constant(0.0))
    assert not verdict.converged
    assert 'final gap' in verdict.reason
    assert verdict.to_dict()['verdict'] == 'NotConverged'


def test_wrong_candidate():
    verdict = order_converges(geometric(30), constant(0.0))
    assert not verdict.converged
    assert 'candidate' in verdict.reason


def test_powers_on_a_grid_do_not_pinch_at_truncation():
    # x^n -> 0 in order, but at truncation N the last tail gap is about 1/(eN)
    grid = Grid(Box.unit(1), (101,))
    seq = [GridFn.from_function(grid, lambda p, k=k: p[:, 0] ** k) for k in range(1, 33)]
    verdict = order_converges(seq, GridFn.constant(grid, 0.0))
    assert not verdict.converged
    assert verdict.point is not None


def test_explicit_bounds_must_hold_the_terms():
    n_list = [2, 4, 8]
    bounds = [OrderInterval(constant(1.0 - 1.0 / n), constant(1.0)) for n in n_list]
    cfg = LatticeCfg(gap_tol=(1.0 / 8) * (1 + 1e-6))
    inside = [constant(1.0 - 0.5 / n) for n in n_list]
    assert order_converges(inside, constant(1.0), cfg, bounds=bounds)
    verdict = order_converges([constant(100.0)] * 3, constant(1.0), cfg, bounds=bounds)
    assert not verdict.converged
    assert 'u_1 > mu_1' in verdict.reason
    slightly_out = [constant(1.0 + 1e-8)] * 3
    assert not order_converges(slightly_out, constant(1.0), cfg, bounds=bounds)
    assert order_converges(slightly_out, constant(1.0), cfg, bounds=bounds, sandwich_tol=1e-7)


def test_convergence_needs_three_terms():
    with pytest.raises(InputError):
        order_converges([constant(0.0)] * 2, constant(0.0))


def test_shift_stability():
    seq = geometric(30)
    expected = order_converges(seq, power(2)).converged
    for k in range(0, 15, 3):
        assert order_converges(seq[k:], power(2)).converged == expected


def chain(pairs):
    return IntervalChain.of([(constant(lo), constant(hi)) for lo, hi in pairs])


def test_chain_pinches():
    result, = chain_check([chain([(-2.0 ** -n, 2.0 ** -n) for n in range(1, 31)])], [Box.unit(1)])
    assert result.pinched
    assert result.midpoint == pytest.approx(0.0, abs=1e-8)
    assert result.to_dict()['verdict'] == 'Pinched'


def test_chain_gap():
    result, = chain_check([chain([(0.0, 1.0 + 1.0 / n) for n in range(1, 31)])], [Box.unit(1)])
    assert not result.pinched
    assert result.gap == pytest.approx(1.0 + 1.0 / 30)
    assert Box.unit(1).contains_interior(result.point)


def test_degenerate_chain():
    result, = chain_check([chain([(0.7, 0.7)] * 3)], [Box.from_bounds([0.2], [0.4])])
    assert result.pinched
    assert result.midpoint == pytest.approx(0.7)


def test_chain_not_nested():
    with pytest.raises(NotNested):
        chain_check([chain([(0.0, 1.0), (-1.0, 1.0)])], [Box.unit(1)])


def test_chain_gap_never_grows():
    pairs = [(-1.0 / n, 1.0 / n ** 2) for n in range(1, 12)]
    gaps = [chain_check([chain(pairs[:k])], [Box.unit(1)])[0].gap for k in range(1, len(pairs) + 1)]
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))


def test_chain_empty_test_box():
    with pytest.raises(InputError):
        chain_check([chain([(0.0, 1.0)])], [Box.from_bounds([0.5], [0.5])])


def test_distributivity_constants():
    assert distributivity_check([constant(0.0), constant(1.0)], constant(0.5))


def test_distributivity_steps():
    up = linear_pieces([0.0, 0.5, 1.0], [(0.0, 0.0), (0.0, 1.0)])
    down = linear_pieces([0.0, 0.5, 1.0], [(0.0, 1.0), (0.0, 0.0)])
    result = distributivity_check([up, down], constant(1.0))
    assert result.holds
    assert result.to_dict()['verdict'] == 'Holds'


def test_distributivity_random_families():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        size = int(rng.integers(1, 4))
        family = [linear_pieces([0.0, float(rng.uniform(0.1, 0.9)), 1.0], rng.normal(size=(2, 2)))
                  for _ in range(size)]
        v = linear_pieces([0.0, float(rng.uniform(0.1, 0.9)), 1.0], rng.normal(size=(2, 2)))
        assert distributivity_check(family, v, LatticeCfg(density=3))
