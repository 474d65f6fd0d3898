"""Run a protocol scenario and collect its trace artifacts.

Typical usage example:

  setup = config.from_yaml()
  trace = simulation.run(setup, 'streamlet')

  trace.write('out', 'streamlet')
"""

import logging

from . import eventual_prefix, longest_chain, streamlet
from .config import network_config, protocol_section

logger = logging.getLogger(__name__)

EP_ASYNC = 'ep-async'
COUNTEREXAMPLE = 'counterexample'
STREAMLET = 'streamlet'

PROTOCOLS = (EP_ASYNC, COUNTEREXAMPLE, STREAMLET)

SECTIONS = {
    EP_ASYNC: 'epAsync',
    COUNTEREXAMPLE: 'counterexample',
    STREAMLET: 'streamlet'
}

def run(setup, protocol, workload=None, predicate=None):
    """Execute a protocol under the configured network.

    Args:
        setup: dict, the full configuration with a `network` section and one
            section per protocol.
        protocol: str, `ep-async`, `counterexample` or `streamlet`.
        workload: dict, entries overriding the protocol section.
        predicate: ValidityPredicate, the validity predicate P.

    Returns:
        Trace, the history, audit log and summary of the run.

    Raises:
        ValueError: if the protocol is unknown or the configuration invalid.
    """
    if protocol not in PROTOCOLS:
        raise ValueError('Unknown protocol', protocol)

    section = protocol_section(setup, SECTIONS[protocol], workload)

    if protocol == COUNTEREXAMPLE:
        return longest_chain.run_counterexample(
            section.get('hTargets', [3]),
            section.get('rounds', 5),
            seed=setup.get('network', {}).get('seed', 0)
        )

    config = network_config(setup)
    logger.info('Running %s with seed %d', protocol, config.seed)

    if protocol == EP_ASYNC:
        return eventual_prefix.run(config, section, predicate)

    return streamlet.run(config, section, predicate)
