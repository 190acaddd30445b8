#!/usr/bin/env python
"""
Epinet Main Module

Command-line entry point. Each subcommand loads a model config, runs one
analysis or simulation, and writes its outputs with a run manifest.
"""

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from epinet import __version__
from epinet.analysis.ldp import population_exit_cost, sir_exit_cost
from epinet.analysis.ode import (
    DeterministicState, find_endemic_equilibrium, integrate_sir_ode, linear_flow,
)
from epinet.analysis.outbreak import acceleration_sweep, analyze, extinction_probs, major_outbreak_prob
from epinet.analysis.spectral import build_A, check_subcritical, equilibrium_population
from epinet.config.settings import load_config
from epinet.extractors.config_extractor import ConfigExtractor
from epinet.extractors.csv_extractor import CsvExtractor
from epinet.models.network import dump_model
from epinet.reports.report_generator import ReportGenerator, RunManifest
from epinet.simulation import montecarlo
from epinet.simulation.ssa import (
    OutbreakClassifier, simulate_branching, simulate_coupled, simulate_population, simulate_sir,
)
from epinet.transformers.calibration import (
    MOVEMENT_COLUMNS, NODE_COLUMNS, NetworkCalibrator, calibration_summary, synth_network,
)
from epinet.utils.errors import EpinetError, InconclusiveError, ModelValidationError
from epinet.utils.logging_config import configure_logging
from epinet.utils.rng import RngSpec

logger = logging.getLogger('epinet')

EXPERIMENTS = ('outbreak', 'stationary', 'lln', 'offspring', 'scaling', 'growth', 'exit')
PROCESSES = ('population', 'sir', 'branching', 'coupled')
DENOMINATORS = {'total': 'current_total', 'zstar': 'z_star'}
RUNTIME_FLAGS = ('command', 'output_dir', 'stem', 'out', 'log_level', 'workers')


class CliParser(argparse.ArgumentParser):
    """Argument parser reporting usage errors with the validation exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ModelValidationError.exit_code, f"epinet:error:UsageError: {message}\n")


def _float_list(text):
    try:
        return [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _scaled(config, N):
    """Config scaling with N overridden from the command line."""
    if N is None:
        return config.scaling
    return type(config.scaling)(N, config.scaling.x0, config.scaling.I0)


def cmd_analyze(args, settings):
    config = ConfigExtractor(args.config).extract()
    analysis = analyze(config.model, config.scaling, **settings['outbreak'])
    return config.sha256, analysis.to_dict(), {}


def cmd_outbreak_prob(args, settings):
    config = ConfigExtractor(args.config).extract()
    model = config.model
    iteration = {'tol': args.tol, 'max_iter': args.max_iter}
    I0 = config.scaling.I0
    if args.seed_node is not None:
        if not 0 <= args.seed_node < model.n:
            raise ModelValidationError(f"--seed-node must be in [0, {model.n - 1}], got {args.seed_node}")
        I0 = np.eye(1, model.n, args.seed_node, dtype=np.int64)[0]
    result = extinction_probs(model, **iteration)
    report = {
        'q': result.q,
        'p': result.p,
        'I0': I0,
        'p_I0': major_outbreak_prob(result.q, I0),
        'iterations': result.iterations,
        'gap': result.gap,
        'rate_estimate': result.rate_estimate,
    }
    tables = {}
    if args.sweep:
        tables['sweep'] = acceleration_sweep(model, args.sweep, **iteration)
    return config.sha256, report, tables


def cmd_simulate(args, settings):
    config = ConfigExtractor(args.config).extract()
    model, scaling = config.model, _scaled(config, args.N)
    rng = RngSpec(args.seed, args.stream)
    event_cap = settings['event_cap']
    if args.process == 'population':
        trajectory = simulate_population(model, scaling.N, scaling.x0, args.t_end, rng, event_cap)
    elif args.process == 'sir':
        classifier = OutbreakClassifier.for_model(model, scaling, **settings['classifier'])
        trajectory = simulate_sir(model, scaling, args.t_end, rng, event_cap, classifier=classifier)
    elif args.process == 'branching':
        trajectory = simulate_branching(model, scaling.I0, args.cap, rng, args.t_end, event_cap)
    else:
        sir, branching, divergence = simulate_coupled(model, scaling, args.t_end, rng, args.cap, event_cap)
        report = {'divergence_time': divergence, 'sir': sir.stats(), 'branching': branching.stats()}
        return config.sha256, report, {'': sir.to_frame(), 'branching': branching.to_frame()}
    return config.sha256, trajectory.stats(), {'': trajectory.to_frame()}


def cmd_ensemble(args, settings):
    config = ConfigExtractor(args.config).extract()
    model, scaling = config.model, _scaled(config, args.N)
    common = {'seed': args.seed, 'workers': args.workers}
    experiment = args.experiment
    if experiment == 'outbreak':
        result = montecarlo.estimate_outbreak_prob(model, scaling, args.runs, event_cap=settings['event_cap'],
                                                   **settings['classifier'], **common)
        analytic = extinction_probs(model, **settings['outbreak'])
        result.extras['analytic'] = major_outbreak_prob(analytic.q, scaling.I0)
    elif experiment == 'stationary':
        result = montecarlo.stationary_mean_population(model, scaling.N, args.burn_in, args.horizon,
                                                       args.runs, **common)
    elif experiment == 'lln':
        result = montecarlo.lln_deviation(model, args.Ns, args.T, args.runs, x0=scaling.x0, **common)
    elif experiment == 'offspring':
        result = montecarlo.offspring_empirical(model, args.node, args.runs, **common)
    elif experiment == 'scaling':
        result = montecarlo.endemic_scaling(model, args.Ns, args.runs, t_cap=args.t_cap,
                                            I0=scaling.I0, **settings['classifier'], **common)
        if result.inconclusive:
            raise InconclusiveError(result.inconclusive)
    elif experiment == 'growth':
        result = montecarlo.growth_rate_empirical(model, scaling.I0, args.runs, cap=args.cap, **common)
    else:
        result = montecarlo.exit_cost_consistency(model, args.Ns, args.eps, args.runs,
                                                  t_cap=args.t_cap or 1e4, **common)
    tables = {'replicates': result.replicates}
    if isinstance(result, montecarlo.ExperimentReport):
        tables['summary'] = result.summary
    return config.sha256, result.to_dict(), tables


def cmd_ode(args, settings):
    config = ConfigExtractor(args.config).extract()
    model, scaling = config.model, config.scaling
    times = np.linspace(0.0, args.t_end, args.points)
    if args.mode == 'linear':
        flow = linear_flow(build_A(model), model.B, scaling.x0, times)
        frame = {'time': times, **{f"x_{k + 1}": flow[:, k] for k in range(model.n)}}
        return config.sha256, {'mode': 'linear', 'final': flow[-1]}, {'': pd.DataFrame(frame)}
    _, subcritical = check_subcritical(build_A(model))
    z_star = equilibrium_population(build_A(model), model.B) if subcritical else None
    infected = scaling.I0 / scaling.N
    init = DeterministicState(scaling.x0 - infected, infected, np.zeros(model.n))
    denominator = DENOMINATORS[args.denominator]
    trajectory = integrate_sir_ode(model, z_star, init, args.t_end, denominator, t_eval=times, **settings['ode'])
    final = {'s': trajectory.s[-1], 'i': trajectory.i[-1], 'r': trajectory.r[-1]}
    report = {'mode': 'sir', 'denominator': args.denominator, 'final': final}
    return config.sha256, report, {'': trajectory.to_frame()}


def cmd_equilibrium(args, settings):
    config = ConfigExtractor(args.config).extract()
    report = find_endemic_equilibrium(config.model, mode=DENOMINATORS[args.denominator])
    return config.sha256, report.to_dict(), {}


def cmd_exit_cost(args, settings):
    config = ConfigExtractor(args.config).extract()
    options = {'T': args.horizon, 'm': args.grid, 'restarts': args.restarts, 'rng': args.seed,
               'norm': args.norm, 'u_max': settings['ldp']['u_max']}
    if args.process == 'population':
        path = population_exit_cost(config.model, args.eps, **options)
    else:
        report = find_endemic_equilibrium(config.model)
        path = sir_exit_cost(config.model, report, args.eps, **options)
    return config.sha256, path.to_dict(), {'': path.to_frame()}


def cmd_calibrate(args, settings):
    nodes_df = CsvExtractor(args.nodes, NODE_COLUMNS).extract()
    moves_df = CsvExtractor(args.moves, MOVEMENT_COLUMNS).extract()
    digest = hashlib.sha256(Path(args.nodes).read_bytes() + Path(args.moves).read_bytes()).hexdigest()
    model = NetworkCalibrator(args.floor, args.time_unit).transform(nodes_df, moves_df)
    return digest, json.loads(dump_model(model)), {'summary': calibration_summary(model)}


def cmd_synth(args, settings):
    model = synth_network(args.n, args.density, args.seed)
    return None, json.loads(dump_model(model)), {}


COMMANDS = {
    'analyze': cmd_analyze,
    'outbreak-prob': cmd_outbreak_prob,
    'simulate': cmd_simulate,
    'ensemble': cmd_ensemble,
    'ode': cmd_ode,
    'equilibrium': cmd_equilibrium,
    'exit-cost': cmd_exit_cost,
    'calibrate': cmd_calibrate,
    'synth': cmd_synth,
}


def build_parser(settings):
    """Argument parser with one subparser per command."""
    parser = CliParser(prog='epinet', description="Open multitype SIR epidemics on trade networks")
    parser.add_argument('--version', action='version', version=f"epinet {__version__}")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument('--output-dir', default=settings['output_dir'], help="directory receiving the outputs")
    shared.add_argument('--stem', help="output file stem (default: the subcommand name)")
    shared.add_argument('--out', help="primary output file; its directory and stem replace --output-dir and --stem")
    shared.add_argument('--seed', type=int, default=settings['seed'], help="run seed (default: EPI_SEED)")
    shared.add_argument('--workers', type=int, default=settings['workers'], help="worker processes")
    shared.add_argument('--log-level', help="override LOG_LEVEL")
    with_config = argparse.ArgumentParser(add_help=False, parents=[shared])
    with_config.add_argument('--config', required=True, help="model config JSON")

    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('analyze', parents=[with_config], help="R0, lambda1, z*, extinction and outbreak probabilities")

    p = sub.add_parser('outbreak-prob', parents=[with_config], help="extinction probabilities q and p = 1 - q")
    p.add_argument('--sweep', type=_float_list, help="comma-separated factors scaling beta and gamma together")
    p.add_argument('--tol', type=float, default=settings['outbreak']['tol'],
                   help="stopping tolerance (default: EPI_TOL)")
    p.add_argument('--max-iter', type=int, default=settings['outbreak']['max_iter'],
                   help="iteration cap (default: EPI_MAX_ITER)")
    p.add_argument('--seed-node', type=int, help="0-based node k; reports p_I0 for one infective there")

    p = sub.add_parser('simulate', parents=[with_config], help="one exact sample path")
    p.add_argument('--process', choices=PROCESSES, default='sir', help="process to simulate")
    p.add_argument('--t-end', type=float, default=math.inf, help="horizon (required for population and coupled)")
    p.add_argument('--N', type=float, help="override the config scaling N")
    p.add_argument('--stream', type=int, default=0, help="replica stream under the seed")
    p.add_argument('--cap', type=int, default=10 ** 6, help="branching population cap")

    p = sub.add_parser('ensemble', parents=[with_config], help="Monte Carlo experiment")
    p.add_argument('--experiment', choices=EXPERIMENTS, required=True, help="experiment to run")
    p.add_argument('--runs', type=int, default=1000, help="replicates (per N where applicable)")
    p.add_argument('--N', type=float, help="override the config scaling N")
    p.add_argument('--Ns', type=_float_list, default=[10.0, 100.0, 1000.0], help="comma-separated N levels")
    p.add_argument('--T', type=float, default=100.0, help="horizon of the lln experiment")
    p.add_argument('--burn-in', type=float, default=100.0, help="burn-in of the stationary experiment")
    p.add_argument('--horizon', type=float, default=1000.0, help="horizon of the stationary experiment")
    p.add_argument('--node', type=int, default=0, help="0-based ancestor node of the offspring experiment")
    p.add_argument('--eps', type=float, default=0.5, help="ball radius of the exit experiment")
    p.add_argument('--t-cap', type=float, help="censoring time of the scaling and exit experiments")
    p.add_argument('--cap', type=int, default=2000, help="branching cap of the growth experiment")

    p = sub.add_parser('ode', parents=[with_config], help="deterministic SIR or linear population flow")
    p.add_argument('--t-end', type=float, default=100.0, help="final time")
    p.add_argument('--points', type=int, default=501, help="number of output times")
    p.add_argument('--mode', choices=('linear', 'sir'), default='sir',
                   help="sir system or the closed-form linear population flow")
    p.add_argument('--denominator', choices=tuple(DENOMINATORS), default='total',
                   help="infection denominator: current node total or z*")

    p = sub.add_parser('equilibrium', parents=[with_config], help="endemic equilibrium and its stability")
    p.add_argument('--denominator', choices=tuple(DENOMINATORS), default='total',
                   help="infection denominator: current node total or z*")

    p = sub.add_parser('exit-cost', parents=[with_config], help="minimum action to leave a ball around equilibrium")
    p.add_argument('--process', choices=('population', 'sir'), default='population', help="process")
    p.add_argument('--eps', type=float, required=True, help="ball radius")
    p.add_argument('--norm', choices=('inf', '2'), default='inf', help="ball norm")
    p.add_argument('--horizon', type=float, default=20.0, help="path horizon T")
    p.add_argument('--grid', type=int, default=64, help="grid steps m")
    p.add_argument('--restarts', type=int, default=4, help="descents from perturbed starts")

    p = sub.add_parser('calibrate', parents=[shared], help="build a model from census and movement CSVs")
    p.add_argument('--nodes', required=True, help="census CSV")
    p.add_argument('--moves', required=True, help="movement CSV")
    p.add_argument('--floor', type=float, help="transfer floor (default 1e-6 per year)")
    p.add_argument('--time-unit', default='days', help="unit of the calibration period")

    p = sub.add_parser('synth', parents=[shared], help="random strongly connected model")
    p.add_argument('--n', type=int, required=True, help="number of nodes")
    p.add_argument('--density', type=float, default=0.1, help="edge probability")
    return parser


def _output_location(args):
    """Output directory and file stem, honouring --out."""
    if args.out:
        out = Path(args.out)
        return str(out.parent), out.stem
    return args.output_dir, args.stem or args.command


def run(argv):
    """
    Execute one subcommand.

    Returns:
        int: 0 on success, 1 on invalid input, 2 on numerical failure, 3 on an
            inconclusive experiment
    """
    try:
        settings = load_config()
    except ValueError as e:
        print(f"epinet:error:ConfigError: {e}", file=sys.stderr)
        return 1
    try:
        args = build_parser(settings).parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 0
    if args.log_level:
        settings['logging']['level'] = args.log_level

    try:
        configure_logging(settings['logging'])
        if args.workers < 1:
            raise ModelValidationError(f"--workers must be at least 1, got {args.workers}")
        logger.info(f"Starting {args.command}")
        generator = ReportGenerator(*_output_location(args))
        digest, report, tables = COMMANDS[args.command](args, settings)
        flags = {k: v for k, v in sorted(vars(args).items()) if k not in RUNTIME_FLAGS}
        manifest = RunManifest(args.command, flags, seed=args.seed, config_sha256=digest, workers=args.workers)
        generator.generate(manifest, report, tables)
        logger.info(f"{args.command} completed successfully")
        return 0

    except EpinetError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"epinet:error:{type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code

    except (FileNotFoundError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"epinet:error:{type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main(argv=None):
    """Main entry point for the epinet command."""
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
