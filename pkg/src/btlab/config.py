"""Render a complete set of values for a simulation scenario.

A scenario is layered from YAML files: the default installed with the
package, then a user default, then the custom file given on the command line.
Scenario files written in JSON are valid custom files. The layered scenario
is turned into the objects a run needs: the network configuration and the
section of the chosen protocol. Environment variables complete it with the
run locations.

Typical usage example:

  setup = config.from_yaml('scenario.yaml')
  network = config.network_config(setup, seed=7)
  section = config.protocol_section(setup, 'streamlet', {'ecInstances': 3})

  output = config.from_env('BTLAB_OUTPUT', '.')
"""

import logging
from os import getenv
from os.path import isfile
from site import USER_BASE
from sys import prefix

from yaml import safe_load

from .network import NetConfig

logger = logging.getLogger(__name__)

def _override(base, update):
    """Override a dictionary entry, keys by keys subkeys by subkeys.

    Args:
        base: dict, the dictionary to be updated.
        update: dict, the dictionary that updates.

    Returns:
        dict, the updated dictionary.
    """
    for key, value in update.items():
        if key in base and isinstance(value, dict) and isinstance(base[key], dict):
            base[key] = _override(base[key], value)
        else:
            base[key] = value
    return base

def _layers(custom_config):
    """List the scenario files to read, lowest precedence first."""
    return [
        f'{prefix}/config/btlab/default.yaml',
        f'{USER_BASE}/config/btlab/default.yaml',
        custom_config
    ]

def from_yaml(custom_config=None):
    """Fetch configuration entries for a scenario.

    Args:
        custom_config: str, a user-specified scenario file. Defaults to None.

    Returns:
        dict, the full configuration for the scenario.

    Raises:
        FileNotFoundError: if the custom file is missing, or if no file at all
            is found.
    """
    if custom_config and not isfile(custom_config):
        raise FileNotFoundError('Custom configuration file not found', custom_config)

    setup = {}
    found = False
    for file in _layers(custom_config):
        if not file or not isfile(file):
            continue
        found = True
        with open(file, 'r', encoding='utf-8') as f:
            setup = _override(setup, safe_load(f) or {})
        logger.debug('Scenario layer %s read', file)

    if not found:
        raise FileNotFoundError('No default configuration file')

    return setup

def network_config(setup, seed=None, horizon=None):
    """Build the validated network configuration of a scenario.

    Args:
        setup: dict, the full configuration.
        seed: int, overrides the configured seed. Defaults to None.
        horizon: int, overrides the configured horizon. Defaults to None.

    Returns:
        NetConfig, the network configuration.

    Raises:
        ValueError: if an entry is out of range.
    """
    network = dict(setup.get('network') or {})
    if seed is not None:
        network['seed'] = seed
    if horizon is not None:
        network['horizon'] = horizon

    return NetConfig.from_dict(network).validate()

def protocol_section(setup, name, workload=None):
    """Returns a protocol section with the given entries overriding it.

    Args:
        setup: dict, the full configuration.
        name: str, the section name, `epAsync`, `counterexample` or
            `streamlet`.
        workload: dict, entries taking precedence. Defaults to None.
    """
    return _override(dict(setup.get(name) or {}), dict(workload or {}))

def from_env(name, default=None):
    """Collect a value from an environment variable.

    Args:
        name: string, the name of the environment variable.
        default: string, the value of a missing variable. Defaults to None.

    Returns:
        string, the corresponding value.

    Raises:
        KeyError, if the environment variable is missing without default.
    """
    value = getenv(name)

    if not value:
        if default is None:
            raise KeyError('Environment variable not found', name)
        return default

    return value
