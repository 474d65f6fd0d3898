import pytest

from btlab import config

def test_override_merges_nested_entries():
    base = {'network': {'n': 4, 'delta': 1}, 'logLevel': 'WARNING'}
    update = {'network': {'delta': 3}, 'checker': {'window': 0.4}}

    merged = config._override(base, update)

    assert merged == {
        'network': {'n': 4, 'delta': 3},
        'logLevel': 'WARNING',
        'checker': {'window': 0.4}
    }

def test_custom_file_overrides(tmp_path):
    custom = tmp_path / 'scenario.yaml'
    custom.write_text('network:\n  n: 7\n  seed: 42\n', encoding='utf-8')

    setup = config.from_yaml(str(custom))

    assert setup['network']['n'] == 7
    assert setup['network']['seed'] == 42

def test_json_scenario_is_valid_yaml(tmp_path):
    custom = tmp_path / 'scenario.json'
    custom.write_text('{"streamlet": {"threshold": "two-thirds"}}', encoding='utf-8')

    assert config.from_yaml(str(custom))['streamlet']['threshold'] == 'two-thirds'

def test_missing_custom_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        config.from_yaml(str(tmp_path / 'missing.yaml'))

def test_no_configuration_at_all(tmp_path, monkeypatch):
    monkeypatch.setattr(config, 'prefix', str(tmp_path))
    monkeypatch.setattr(config, 'USER_BASE', str(tmp_path))

    with pytest.raises(FileNotFoundError):
        config.from_yaml()

def test_installed_default_is_read(tmp_path, monkeypatch):
    target = tmp_path / 'config' / 'btlab'
    target.mkdir(parents=True)
    (target / 'default.yaml').write_text('network:\n  n: 4\n  delta: 1\n', encoding='utf-8')
    custom = tmp_path / 'scenario.yaml'
    custom.write_text('network:\n  delta: 2\n', encoding='utf-8')
    monkeypatch.setattr(config, 'prefix', str(tmp_path))
    monkeypatch.setattr(config, 'USER_BASE', str(tmp_path / 'nowhere'))

    assert config.from_yaml(str(custom))['network'] == {'n': 4, 'delta': 2}

def test_from_env(monkeypatch):
    monkeypatch.setenv('BTLAB_OUTPUT', '/tmp/runs')
    monkeypatch.delenv('BTLAB_MISSING', raising=False)

    assert config.from_env('BTLAB_OUTPUT') == '/tmp/runs'
    assert config.from_env('BTLAB_MISSING', '.') == '.'
    with pytest.raises(KeyError):
        config.from_env('BTLAB_MISSING')

def test_network_config_applies_overrides():
    setup = {'network': {'n': 5, 'seed': 1, 'horizon': 200, 'byzantine': {'4': 'silent'}}}

    network = config.network_config(setup, seed=9, horizon=50)

    assert (network.n, network.seed, network.horizon) == (5, 9, 50)
    assert network.byzantine == {4: 'silent'}
    assert setup['network']['seed'] == 1
    assert config.network_config({}).n == 4

def test_network_config_rejects_bad_entries():
    with pytest.raises(ValueError):
        config.network_config({'network': {'n': 4, 'byzantine': {7: 'silent'}}})
    with pytest.raises(ValueError):
        config.network_config({'network': {'gst': 20}}, horizon=10)

def test_protocol_section_takes_workload_first():
    setup = {'streamlet': {'threshold': 'majority', 'readInterval': 4}}

    section = config.protocol_section(setup, 'streamlet', {'ecInstances': 3, 'readInterval': 2})

    assert section == {'threshold': 'majority', 'readInterval': 2, 'ecInstances': 3}
    assert setup['streamlet'] == {'threshold': 'majority', 'readInterval': 4}
    assert config.protocol_section(setup, 'epAsync') == {}
