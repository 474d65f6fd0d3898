import pytest

from btlab.blocktree import Block, ValidityPredicate
from btlab.checker import check_oracle_audit
from btlab.oracle import (
    OracleThetaFk,
    OracleThetaP,
    UngrantedBlockError,
    UnknownParentError,
    read_audit,
    write_audit
)

def _candidate(oracle, creator, payload, parent=None):
    parent = parent or oracle.shared.genesis_block
    return Block.create(parent, creator, payload=payload)

def test_grant_then_attach():
    oracle = OracleThetaP()
    block = _candidate(oracle, 1, b'a')
    genesis = oracle.shared.genesis

    assert oracle.get_valid_block(genesis, block, process=1)
    siblings = oracle.set_valid_block(genesis, block, process=1)

    assert siblings == frozenset({block.id})
    assert block.id in oracle.shared
    assert oracle.version == 1

def test_set_is_idempotent():
    oracle = OracleThetaP()
    block = _candidate(oracle, 1, b'a')
    genesis = oracle.shared.genesis

    oracle.get_valid_block(genesis, block, process=1)
    oracle.set_valid_block(genesis, block, process=1)
    oracle.set_valid_block(genesis, block, process=1)

    assert oracle.version == 1
    assert len(oracle.shared) == 2

def test_set_requires_grant():
    oracle = OracleThetaP()
    block = _candidate(oracle, 1, b'a')

    with pytest.raises(UngrantedBlockError):
        oracle.set_valid_block(oracle.shared.genesis, block, process=1)

def test_unknown_parent():
    oracle = OracleThetaP()
    stray = Block.create(_candidate(oracle, 1, b'a'), 1, payload=b'b')

    with pytest.raises(UnknownParentError):
        oracle.get_valid_block(stray.parent, stray, process=1)

def test_predicate_refuses_grant():
    oracle = OracleThetaP(ValidityPredicate(lambda payload: payload != b'bad'))
    block = _candidate(oracle, 1, b'bad')

    assert not oracle.get_valid_block(oracle.shared.genesis, block, process=1)

def test_mismatched_parent_refused():
    oracle = OracleThetaP()
    genesis = oracle.shared.genesis
    first = _candidate(oracle, 1, b'a')
    oracle.get_valid_block(genesis, first, process=1)
    oracle.set_valid_block(genesis, first, process=1)

    deeper = _candidate(oracle, 1, b'b', parent=first)

    assert not oracle.get_valid_block(genesis, deeper, process=1)

def test_theta_p_allows_unbounded_forks():
    oracle = OracleThetaP()
    genesis = oracle.shared.genesis

    for creator in range(5):
        block = _candidate(oracle, creator, b'x')
        assert oracle.get_valid_block(genesis, block, process=creator)
        oracle.set_valid_block(genesis, block, process=creator)

    assert len(oracle.shared.children(genesis)) == 5

def test_theta_fk_counts_pending_grants():
    oracle = OracleThetaFk(2)
    genesis = oracle.shared.genesis
    first = _candidate(oracle, 1, b'a')
    second = _candidate(oracle, 2, b'b')
    third = _candidate(oracle, 3, b'c')

    assert oracle.get_valid_block(genesis, first, process=1)
    assert oracle.get_valid_block(genesis, second, process=2)
    assert not oracle.get_valid_block(genesis, third, process=3)

    oracle.set_valid_block(genesis, first, process=1)
    oracle.set_valid_block(genesis, second, process=2)

    assert not oracle.get_valid_block(genesis, third, process=3)
    assert len(oracle.shared.children(genesis)) == 2

def test_theta_fk_regrant_is_stable():
    oracle = OracleThetaFk(1)
    genesis = oracle.shared.genesis
    block = _candidate(oracle, 1, b'a')

    assert oracle.get_valid_block(genesis, block, process=1)
    assert oracle.get_valid_block(genesis, block, process=1)

def test_theta_fk_rejects_zero_bound():
    with pytest.raises(ValueError):
        OracleThetaFk(0)

def test_views_are_monotone():
    oracle = OracleThetaP()
    genesis = oracle.shared.genesis
    for creator in range(3):
        block = _candidate(oracle, creator, b'x')
        oracle.get_valid_block(genesis, block, process=creator)
        oracle.set_valid_block(genesis, block, process=creator)

    fresh = oracle.update_view(process=9)
    stale = oracle.update_view(process=9, lag=3)

    assert fresh.version == 3
    assert stale.version == 3
    assert oracle.update_view(process=8, lag=2).version == 1

def test_writer_sees_own_block():
    oracle = OracleThetaP()
    genesis = oracle.shared.genesis
    block = _candidate(oracle, 1, b'a')
    oracle.get_valid_block(genesis, block, process=1)
    oracle.set_valid_block(genesis, block, process=1)

    view = oracle.update_view(process=1, lag=5)

    assert block.id in view.tree

def test_audit_log_round_trip(tmp_path):
    oracle = OracleThetaFk(2)
    genesis = oracle.shared.genesis
    block = _candidate(oracle, 1, b'a')
    oracle.update_view(process=1)
    oracle.get_valid_block(genesis, block, process=1)
    oracle.set_valid_block(genesis, block, process=1)

    path = tmp_path / 'run.audit.jsonl'
    write_audit(oracle.audit, str(path))
    entries = read_audit(str(path))

    assert [entry['op'] for entry in entries] == [
        'update_view', 'get_valid_block', 'set_valid_block'
    ]
    assert entries[2]['result'] == [block.id]
    assert check_oracle_audit(entries, k=2).passed

def test_audit_check_flags_ungranted_set():
    entries = [{
        'op': 'set_valid_block',
        'process': 1,
        'parent': 'p',
        'block': 'b',
        'version': 1,
        'result': ['b']
    }]

    verdict = check_oracle_audit(entries)

    assert not verdict.passed
    assert verdict.witness['ungranted']
