"""Client module for the btlab command-line.

This module define the command-line options of the client and the subsequent
list of subcommands. Each subcommand then leads to an executive function.
"""

import json
import logging
import os
from argparse import ArgumentParser
from pprint import pprint

# local imports
from .checker import (
    check_eventual_consensus,
    check_history,
    check_oracle_audit,
    format_table
)
from .config import from_env, from_yaml
from .history import History
from .oracle import read_audit
from .reduction import prune_history
from .simulation import COUNTEREXAMPLE, EP_ASYNC, STREAMLET, run

def _setup(args):
    """Read the configuration and apply the command-line overrides."""
    setup = from_yaml(args.config_file)

    logging.basicConfig(
        level=setup.get('logLevel', 'WARNING'),
        format='%(levelname)s %(name)s: %(message)s'
    )

    network = setup.setdefault('network', {})
    if args.seed is not None:
        network['seed'] = args.seed
    if args.horizon is not None:
        network['horizon'] = args.horizon

    return setup

def _given(value, default):
    """Returns the command-line value unless the option was left out."""
    return default if value is None else value

def _output():
    return from_env('BTLAB_OUTPUT', '.')

def _prune(history, args):
    if args.prune_half:
        return prune_history(history, dis=None)
    if args.prune_dis is not None:
        return prune_history(history, dis=args.prune_dis)
    return history

def _simulate(args, protocol, workload=None):
    setup = _setup(args)

    print(f'Running {protocol} simulation... ')

    trace = run(setup, protocol, workload)
    trace.history = _prune(trace.history, args)

    print('... run complete... ')

    paths = trace.write(_output(), protocol)
    for artifact, path in sorted(paths.items()):
        print(f'... {artifact} written to {path}... ')

    print('DONE')

    return None

# Actions functions

def show(args):
    """Show the values used for a scenario.

    Display the scenario configuration as a map on standard output, after
    command-line overrides. Long entries will be cut on display.

    Args:
        args: Namespace, the arguments from command line.
    """
    setup = _setup(args)

    pprint(setup, indent=1, depth=3, compact=True)

    return None

def run_ep(args):
    """Runs the eventual prefix protocol.

    Simulates asynchronous appenders sharing the oracle-guarded blocktree,
    correct and Byzantine, then writes the trace, the oracle audit log and
    the run summary to the output directory.

    Args:
        args: Namespace, the arguments from command line.
    """
    return _simulate(args, EP_ASYNC)

def run_counterexample(args):
    """Runs the alternating-branch schedule of the heaviest-chain rule.

    Replays two appenders taking the lead in turn on two branches sharing
    only the genesis block, then writes the trace, the oracle audit log and
    the crossover values to the output directory.

    Args:
        args: Namespace, the arguments from command line.
    """
    return _simulate(args, COUNTEREXAMPLE)

def run_streamlet(args):
    """Runs the majority Streamlet protocol with Byzantine exclusion.

    Simulates the protocol under the configured delivery policy, optionally
    with eventual consensus clients, then writes the trace and the run
    summary to the output directory.

    Args:
        args: Namespace, the arguments from command line.
    """
    workload = {'ecInstances': args.ec} if args.ec else None

    return _simulate(args, STREAMLET, workload)

def check(args):
    """Checks the consistency criteria of a trace.

    Decides or measures every criterion over a trace file, prints a table and
    writes the JSON report next to the other artifacts. The audit log and
    summary written with the trace are checked too when present.

    Args:
        args: Namespace, the arguments from command line.
    """
    setup = _setup(args)
    params = setup.get('checker', {})

    if not args.trace:
        raise FileNotFoundError('No trace file given, use "-t"')

    print(f'Loading trace {args.trace}... ')

    history = _prune(History.load(args.trace), args)

    print('DONE')

    print('Checking criteria... ')

    report = check_history(
        history,
        window=_given(args.window, params.get('window', 0.5)),
        cut_fraction=_given(args.cut_fraction, params.get('cutFraction', 0.5)),
        k_fractions=_given(args.k_sweep, params.get('kSweep', [0.1, 0.25, 0.5])),
        sample_every=params.get('sampleEvery', 10),
        strict=params.get('strict', False)
    )

    base = args.trace[:-len('.trace.jsonl')] \
        if args.trace.endswith('.trace.jsonl') else args.trace

    audit = f'{base}.audit.jsonl'
    if os.path.isfile(audit) and os.path.getsize(audit):
        fork_bound = history.header.get('forkBound')
        verdict = check_oracle_audit(read_audit(audit), k=fork_bound)
        report['criteria'].append(verdict.to_dict())
        print('... oracle audit checked... ')

    summary = f'{base}.summary.json'
    if os.path.isfile(summary):
        with open(summary, 'r', encoding='utf-8') as f:
            decisions = json.load(f).get('decisions')
        if decisions:
            verdict = check_eventual_consensus(decisions)
            report['criteria'].append(verdict.to_dict())
            report['metrics']['smallestKEc'] = verdict.metrics.smallest_k_ec
            print('... eventual consensus decisions checked... ')

    print('DONE')

    print(format_table(report))

    output = _output()
    os.makedirs(output, exist_ok=True)
    path = os.path.join(output, f'{os.path.basename(base)}.report.json')
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report, f, sort_keys=True, indent=2)

    print(f'Report written to {path}')

    return None

# Base client configuration

command = {
    'prog': 'btlab',
    'description': 'Simulate blocktree protocols and check their consistency.',
    'epilog': 'More help on action commands with: %(prog)s {subcommand} -h.'
}

options = {
    '-f': {'dest': 'config_file', 'help': 'Use a custom configuration file'},
    '-t': {'dest': 'trace', 'help': 'The trace file to check'},
    '--seed': {'type': int, 'help': 'Override the run seed'},
    '--horizon': {'type': int, 'help': 'Override the run horizon'},
    '--prune-dis': {
        'type': int,
        'help': 'Prune the last N blocks of every read'
    },
    '--prune-half': {
        'action': 'store_true',
        'help': 'Prune the second half of every read'
    },
    '--ec': {
        'type': int,
        'default': 0,
        'help': 'Run N eventual consensus instances over streamlet'
    },
    '--window': {'type': float, 'help': 'Eventual prefix fill window'},
    '--cut-fraction': {'type': float, 'help': 'Eventual strong prefix cut bound'},
    '--k-sweep': {
        'type': lambda value: [float(item) for item in value.split(',')],
        'help': 'Comma-separated fractions of the appends swept as k'
    }
}

sub_command = {
        'title': 'The Action Commands',
        'description': '''The different steps of the %(prog)s command. Runs
            write their artifacts to the directory named by BTLAB_OUTPUT.''',
        'help': 'Select one action.'
}

actions = [show, run_ep, run_counterexample, run_streamlet, check]

def main():
    """Main function for btlab client.

    This function parses all options and subcommands from command-line. It
    delegates the subsequent actions to specific executive function.
    """
    parser = ArgumentParser(**command)
    for option, config in options.items():
        parser.add_argument(option, **config)

    subparsers = parser.add_subparsers(**sub_command)

    for func in actions:
        docs = func.__doc__.split('\n\n')
        action_parser = subparsers.add_parser(
            func.__name__.replace('_', '-'),
            help=docs[0],
            description=docs[1]
        )
        action_parser.set_defaults(func=func)

    # Parse arguments from command line
    args = parser.parse_args()

    # Launch the subcommand function
    args.func(args)
