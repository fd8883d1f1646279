#!/usr/bin/env python3
"""
ordcomp Command Line Interface

Subcommands: regularize, sup, inf, leq, converge, chain-check, solve,
verify and demo-ns. Settings come from an optional key = value config file
overridden by flags. Exit codes: 0 pass, 2 input error, 3 solve failure,
4 internal invariant violation.
"""

import argparse
import logging
import sys
import time
import traceback
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import RunConfig
from .core_types import Box
from .dsl import parse_operator
from .errors import ConfigError, InputError, OrdCompError, SolveError
from .formats import (SolutionFile, dumps_json, read_function, read_gridfn, read_solutions, solution_to_dict,
                      write_function, write_gridfn, write_json, write_samples, write_solution)
from .gridfn import GridFn, changed_nodes, nlsc_regularize
from .lattice import (MODE_GRID, IntervalChain, SampleFrame, chain_check, dedekind_inf, dedekind_sup, leq,
                      order_converges, resolve_mode)
from .log_utils import get_logger, set_verbosity
from .ordsolve import ApproxSolution, InitialData, SolveCfg, as_rhs, assemble, solution_sequence, verify
from .pdeop import Rhs, ns_system
from .pwpoly import to_gridfn

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_SOLVE = 3
EXIT_INTERNAL = 4


def _assignment(text: str) -> Tuple[str, str]:
    if '=' not in text:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    name, value = text.split('=', 1)
    return name.strip(), value.strip()


def _csv_floats(text: str) -> List[float]:
    return [float(v) for v in text.split(',') if v.strip()]


def _csv_strings(text: str) -> List[str]:
    return [v.strip() for v in text.split(',') if v.strip()]


def _csv_ints(text: str) -> List[int]:
    return [int(v) for v in text.split(',') if v.strip()]


def _parse_box(text: str) -> Box:
    """`lo1,lo2:hi1,hi2`"""
    if ':' not in text:
        raise ConfigError(f"Box must be written lo1,..:hi1,.., got {text!r}")
    lo, hi = text.split(':', 1)
    try:
        return Box.from_bounds(_csv_floats(lo), _csv_floats(hi))
    except ValueError:
        raise ConfigError(f"Bad box {text!r}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', '-c', help='key = value config file; flags override it')
    parser.add_argument('--output', '-o', help='Output file')
    parser.add_argument('--report', help='JSON report file')
    parser.add_argument('--threads', type=int, help='Worker threads (default: ORDCOMP_THREADS or 1)')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    verbosity.add_argument('--quiet', '-q', action='store_true', help='Warnings only')


def _add_lattice(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--mode', choices=['exact-pw', 'grid'], help='Representation (default: from inputs)')
    parser.add_argument('--gap-tol', dest='gap_tol', type=float, help='Pinch / final-gap tolerance')
    parser.add_argument('--tol', type=float, help='Comparison tolerance')
    parser.add_argument('--density', type=int, help='Samples per axis per cell')
    parser.add_argument('--grid-nodes', dest='grid_nodes', type=int,
                        help='Nodes per axis when sampling piecewise inputs in grid mode')
    parser.add_argument('--r-inner', dest='r_inner', type=int, help='Inner window radius')
    parser.add_argument('--r-outer', dest='r_outer', type=int, help='Outer window radius')
    parser.add_argument('--r', type=int, help='Window radius of the lower regularization')


def _add_solver(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--operator', help='Operator DSL text (equations separated by ;)')
    parser.add_argument('--operator-path', dest='operator_path', help='Operator DSL file')
    parser.add_argument('--n-space', dest='n_space', type=int, help='Number of spatial axes')
    time_axis = parser.add_mutually_exclusive_group()
    time_axis.add_argument('--has-time', dest='has_time', action='store_const', const=True,
                           help='Last axis is time (default: whether t or dt appears)')
    time_axis.add_argument('--no-time', dest='has_time', action='store_const', const=False,
                           help='All axes are spatial')
    parser.add_argument('--rhs', action='append', type=_assignment, help='Right-hand side NAME=EXPR')
    parser.add_argument('--u0', action='append', type=_assignment, help='Initial data UNKNOWN=EXPR')
    parser.add_argument('--param', action='append', type=_assignment, help='Parameter NAME=VALUE')
    parser.add_argument('--unknowns', type=_csv_strings, help='Unknown names (default: u, u1, u2, ... and p)')
    parser.add_argument('--domain-lo', dest='domain_lo', type=_csv_floats, help='Domain lower corner')
    parser.add_argument('--domain-hi', dest='domain_hi', type=_csv_floats, help='Domain upper corner')
    parser.add_argument('--cells', type=_csv_ints, help='Initial cells per axis')
    parser.add_argument('--eps', type=float, help='Band width')
    parser.add_argument('--theta', type=float, help='Target offset fraction in (0, 1)')
    parser.add_argument('--n-list', dest='n_list', type=_csv_ints, help='Ascending n for eps = 1/n')
    parser.add_argument('--max-depth', dest='max_depth', type=int, help='Maximum bisection depth')
    parser.add_argument('--samples', type=int, help='Certificate samples per axis per cell')
    parser.add_argument('--degree', type=int, help='Patch degree')
    parser.add_argument('--initial-tol', dest='initial_tol', type=float, help='Allowed initial defect')
    parser.add_argument('--seed', type=int, help='Seed of the verification samples')
    parser.add_argument('--verify-density', dest='verify_density', type=int, help='Verification density')
    parser.add_argument('--samples-out', dest='samples_out', help='Sample dump CSV')
    parser.add_argument('--neighbor-matching', dest='neighbor_matching', action='store_const', const=True,
                        help='Bias free zeroth-order slots toward solved neighbors')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ordcomp', description='Order-completion toolkit for nonlinear PDEs')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('regularize', help='NLSC regularization (I∘S) of a grid function')
    p.add_argument('inputs', nargs=1, help='GridFn CSV')
    p.add_argument('--r-inner', dest='r_inner', type=int, help='Inner window radius')
    p.add_argument('--r-outer', dest='r_outer', type=int, help='Outer window radius')
    _add_common(p)

    for name, text in (('sup', 'Dedekind supremum of a family'), ('inf', 'Dedekind infimum of a family')):
        p = sub.add_parser(name, help=text)
        p.add_argument('inputs', nargs='+', help='PwPoly JSON or GridFn CSV files')
        _add_lattice(p)
        _add_common(p)

    p = sub.add_parser('leq', help='Sampled order test f <= g')
    p.add_argument('inputs', nargs=2, help='f and g')
    _add_lattice(p)
    _add_common(p)

    p = sub.add_parser('converge', help='Order convergence of a finite sequence prefix')
    p.add_argument('inputs', nargs='+', help='Sequence terms in order')
    p.add_argument('--candidate', required=False, help='Proposed limit')
    _add_lattice(p)
    _add_common(p)

    p = sub.add_parser('chain-check', help='Pinch test of one interval chain')
    p.add_argument('inputs', nargs='+', help='lo1 hi1 lo2 hi2 ...')
    p.add_argument('--box', dest='boxes', action='append', help='Open test box lo1,..:hi1,.. (default: domain)')
    _add_lattice(p)
    _add_common(p)

    p = sub.add_parser('solve', help='Certified approximate solution of T u = g')
    _add_solver(p)
    _add_common(p)

    p = sub.add_parser('verify', help='Re-check a stored solution on fresh samples')
    p.add_argument('inputs', nargs=1, help='Solution JSON')
    p.add_argument('--eps', dest='check_eps', type=float, help='Band width to check against (default: the stored one)')
    p.add_argument('--density', type=int, help='Samples per axis per cell')
    p.add_argument('--seed', type=int, help='Sample seed')
    p.add_argument('--rhs', action='append', type=_assignment, help='Right-hand side NAME=EXPR')
    p.add_argument('--samples-out', dest='samples_out', help='Sample dump CSV')
    _add_common(p)

    p = sub.add_parser('demo-ns', help='Navier-Stokes demonstration')
    _add_solver(p)
    p.add_argument('--nu', type=float, help='Viscosity')
    p.add_argument('--dim', type=int, help='Spatial dimension')
    p.add_argument('--convective', choices=['printed', 'standard'], help='Convective term form')
    _add_common(p)
    return parser


def demo_defaults(config: RunConfig) -> RunConfig:
    """Navier-Stokes demo settings, before any file or flag"""
    config.eps = 0.25
    config.max_depth = 3
    config.samples = 3
    config.nu = 0.01
    config.dim = 3
    return config


def _flag_values(args: argparse.Namespace) -> Dict[str, Any]:
    values = dict(vars(args))
    for key in ('config', 'verbose', 'quiet', 'command'):
        values.pop(key, None)
    for key in ('rhs', 'u0'):
        if values.get(key):
            values[key] = dict(values[key])
    if values.get('param'):
        try:
            values['param'] = {name: float(v) for name, v in values['param']}
        except ValueError:
            raise ConfigError("Parameter values must be numbers")
    return values


def load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig(command=args.command)
    if args.command == 'demo-ns':
        demo_defaults(config)
    if args.config:
        RunConfig.from_file(args.config, config)
    config.override(_flag_values(args))
    if config.command == 'demo-ns':
        _demo_geometry(config)
    return config


def _demo_geometry(config: RunConfig) -> None:
    dim = config.dim
    if not config.domain_lo:
        config.domain_lo = [0.0] * (dim + 1)
    if not config.domain_hi:
        config.domain_hi = [1.0] * dim + [0.25]
    if not config.cells:
        config.cells = [2] * (dim + 1)
    if not config.u0 and dim >= 2:
        config.u0 = {f"u{i}": '0' for i in range(1, dim + 1)}
        config.u0['u1'] = '0.1*x2'
        config.u0['u2'] = '-0.1*x1'
    for i in range(1, dim + 1):
        config.rhs.setdefault(f"f{i}", '0')


def _emit(config: RunConfig, report: Dict[str, Any]) -> None:
    if config.report:
        write_json(config.report, report)
    else:
        print(dumps_json(report))


def _functions(paths: Sequence[str]) -> List[Any]:
    if not paths:
        raise InputError("No input files given")
    return [read_function(path) for path in paths]


def _lattice_cfg(config: RunConfig, functions: Sequence[Any]):
    box = functions[0].grid.box if isinstance(functions[0], GridFn) else functions[0].domain
    return config.lattice_cfg(box)


def cmd_regularize(config: RunConfig) -> int:
    u = read_gridfn(config.inputs[0])
    result = nlsc_regularize(u, config.r_inner, config.r_outer)
    if config.output:
        write_gridfn(config.output, result)
    print(f"regularized {u.grid.size} nodes, {changed_nodes(u, result)} changed")
    return EXIT_OK


def _family_report(config: RunConfig, functions: Sequence[Any], result: Any, cfg, mode: str,
                   reduce) -> Dict[str, Any]:
    frame = SampleFrame(list(functions) + [result], mode, cfg)
    pointwise = reduce([frame.values(f) for f in functions])
    values = frame.values(result)
    with np.errstate(invalid='ignore'):
        residual = np.where(np.isnan(pointwise - values), 0.0, np.abs(pointwise - values))
    return {
        'command': config.command,
        'mode': mode,
        'inputs': list(config.inputs),
        'samples': int(frame.points.shape[0]),
        'max_regularization_residual': float(np.max(residual)),
        'config': config.to_dict(),
    }


def cmd_dedekind(config: RunConfig) -> int:
    functions = _functions(config.inputs)
    cfg = _lattice_cfg(config, functions)
    mode = resolve_mode(functions, config.mode, cfg)
    if config.command == 'sup':
        result, reduce = dedekind_sup(functions, mode, cfg), np.maximum.reduce
    else:
        result, reduce = dedekind_inf(functions, mode, cfg), np.minimum.reduce
    if config.output:
        write_function(config.output, result)
    if mode == MODE_GRID:
        functions = [f if isinstance(f, GridFn) else to_gridfn(f, cfg.grid) for f in functions]
    _emit(config, _family_report(config, functions, result, cfg, mode, reduce))
    return EXIT_OK


def cmd_leq(config: RunConfig) -> int:
    f, g = _functions(config.inputs)
    cfg = _lattice_cfg(config, [f, g])
    result = leq(f, g, cfg, config.mode)
    _emit(config, dict(result.to_dict(), config=config.to_dict()))
    return EXIT_OK


def cmd_converge(config: RunConfig) -> int:
    if not config.candidate:
        raise ConfigError("converge needs --candidate")
    seq = _functions(config.inputs)
    candidate = read_function(config.candidate)
    cfg = _lattice_cfg(config, seq)
    verdict = order_converges(seq, candidate, cfg, config.mode)
    _emit(config, dict(verdict.to_dict(), run=config.to_dict()))
    return EXIT_OK


def cmd_chain_check(config: RunConfig) -> int:
    if len(config.inputs) % 2:
        raise InputError("chain-check needs lo/hi file pairs")
    ends = _functions(config.inputs)
    chain = IntervalChain.of(zip(ends[0::2], ends[1::2]))
    cfg = _lattice_cfg(config, ends)
    if config.boxes:
        boxes = [_parse_box(text) for text in config.boxes]
    else:
        boxes = [ends[0].grid.box if isinstance(ends[0], GridFn) else ends[0].domain]
    results = chain_check([chain], boxes, cfg, config.mode)
    _emit(config, {'results': [r.to_dict() for r in results], 'config': config.to_dict()})
    return EXIT_OK


def _system(config: RunConfig):
    return parse_operator(config.operator_text(), config.n_space, config.has_time, config.param,
                          config.unknowns or None)


def _solution_summary(sol: ApproxSolution, certificate) -> str:
    ranges = ', '.join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in certificate.deviation_ranges)
    return (f"{'pass' if certificate.passed else 'fail'}: {len(sol.complex)} cells, "
            f"worst margin {certificate.worst_margin:.6g}, initial defect {certificate.initial_defect:.3g}, "
            f"residual - g in {ranges}")


def _run_solve(config: RunConfig, system) -> int:
    try:
        return _solve_and_check(config, system)
    except SolveError as e:
        if config.report:
            write_json(config.report, {'error': e.to_dict(), 'config': config.to_dict()})
        raise


def _solve_and_check(config: RunConfig, system) -> int:
    domain = config.domain()
    cfg = config.solve_cfg(domain)
    jcfg = config.jet_cfg()
    rhs = Rhs.from_bindings(system, config.rhs)
    u0 = InitialData(system, config.u0) if config.u0 else None
    provenance = config.to_dict()
    seed = config.seed
    density = config.verify_density or 2 * config.samples

    if config.n_list:
        result = solution_sequence(system, rhs, u0, config.n_list, cfg, jcfg, config.lattice_cfg(domain))
        checks = [verify(sol, density, seed) for sol in result.solutions]
        for sol, check in zip(result.solutions, checks):
            print(_solution_summary(sol, check))
        if config.output:
            write_json(config.output, {
                'solutions': [solution_to_dict(sol, config.rhs, config.u0, provenance) for sol in result.solutions],
                'sequence': result.to_dict(),
            })
        report = dict(result.to_dict(), verify=[c.to_dict() for c in checks], config=provenance)
        if config.report:
            write_json(config.report, report)
        print(f"order convergence: {'Converged' if result.converged else 'NotConverged'}")
        passed = all(c.passed for c in checks) and result.converged
        return EXIT_OK if passed else EXIT_SOLVE

    sol = assemble(system, rhs, u0, cfg, jcfg, config=provenance)
    check = verify(sol, density, seed, keep_samples=bool(config.samples_out))
    if config.output:
        write_solution(config.output, sol, config.rhs, config.u0, provenance)
    if config.samples_out:
        write_samples(config.samples_out, system, check.samples)
    if config.report:
        write_json(config.report, {'certificate': sol.certificate.to_dict(), 'verify': check.to_dict(),
                                   'config': provenance})
    print(_solution_summary(sol, check))
    return EXIT_OK if sol.certificate.passed and check.passed else EXIT_SOLVE


def cmd_solve(config: RunConfig) -> int:
    return _run_solve(config, _system(config))


def cmd_demo_ns(config: RunConfig) -> int:
    system = ns_system(config.nu, config.dim, config.convective)
    started = time.time()
    code = _run_solve(config, system)
    print(f"wall time {time.time() - started:.1f} s")
    return code


def _rebuild(stored: SolutionFile, config: RunConfig) -> ApproxSolution:
    rhs_values = dict(stored.rhs)
    rhs_values.update(config.rhs)
    rhs = as_rhs(stored.system, rhs_values)
    initial = InitialData(stored.system, stored.u0) if stored.u0 else None
    domain = next(iter(stored.w.values())).domain
    solve = stored.solve
    cfg = SolveCfg(domain, eps=stored.eps, theta=solve.get('theta', 0.5), degree=solve.get('degree'),
                   initial_tol=solve.get('initial_tol', 1e-12))
    return ApproxSolution(stored.w, stored.eps, stored.system, None, rhs, initial, cfg)


def cmd_verify(config: RunConfig) -> int:
    stored = read_solutions(config.inputs[0])
    checks = []
    rows = []
    for entry in stored:
        sol = _rebuild(entry, config)
        check = verify(sol, config.density, config.seed, config.check_eps, keep_samples=bool(config.samples_out))
        print(_solution_summary(sol, check))
        checks.append(check)
        if check.samples is not None:
            rows.append(check.samples)
    if config.samples_out and rows:
        write_samples(config.samples_out, stored[0].system, np.vstack(rows))
    if config.report:
        write_json(config.report, {'verify': [c.to_dict() for c in checks], 'config': config.to_dict()})
    return EXIT_OK if all(c.passed for c in checks) else EXIT_SOLVE


COMMANDS = {
    'regularize': cmd_regularize,
    'sup': cmd_dedekind,
    'inf': cmd_dedekind,
    'leq': cmd_leq,
    'converge': cmd_converge,
    'chain-check': cmd_chain_check,
    'solve': cmd_solve,
    'verify': cmd_verify,
    'demo-ns': cmd_demo_ns,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main function"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        set_verbosity(logging.DEBUG)
    elif args.quiet:
        set_verbosity(logging.WARNING)
    else:
        set_verbosity(logging.INFO)
    try:
        config = load_config(args)
        return COMMANDS[config.command](config)
    except OrdCompError as e:
        print(f"Error: {e.message}")
        return e.exit_code
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == '__main__':
    sys.exit(main())
