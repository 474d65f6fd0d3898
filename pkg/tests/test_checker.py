import random

import pytest

from btlab import checker
from btlab.blocktree import (
    Block,
    Chain,
    ValidityPredicate,
    displacement,
    genesis_block,
    is_prefix,
    new_tree
)
from btlab.history import History

ROOT = genesis_block()
A1 = Block.create(ROOT, 1, payload=b'a1')
A2 = Block.create(A1, 1, payload=b'a2')
B1 = Block.create(ROOT, 2, payload=b'b1')
B2 = Block.create(B1, 2, payload=b'b2')

def _chain(*blocks):
    return Chain((ROOT,) + blocks)

def _history(reads, horizon=None, appends=()):
    """Record appends then reads, each as an invocation and its response."""
    history = History({'horizon': horizon} if horizon is not None else {})
    for process, tick, block in appends:
        history.invoke_append(process, block, tick)
        history.respond_append(process, True, tick)
    for process, tick, chain in reads:
        history.invoke_read(process, tick)
        history.respond_read(process, chain, tick)

    return history

def test_validity():
    good = _history([(1, 0, _chain(A1))])
    bad = _history([(1, 0, Chain([A1]))])
    picky = ValidityPredicate(lambda payload: payload != b'a1')

    assert checker.check_chain_validity(good).passed
    assert not checker.check_chain_validity(bad).passed
    assert not checker.check_chain_validity(good, picky).passed

def test_integrity():
    unexplained = _history([(1, 0, _chain(A1))])
    verdict = checker.check_chain_integrity(unexplained)

    assert not verdict.passed
    assert verdict.witness['block'] == A1.id

    explained = _history([(2, 3, _chain(A1))], appends=[(1, 3, A1)])
    assert checker.check_chain_integrity(explained).passed
    # the append returns at the tick the read starts, not strictly before
    assert not checker.check_chain_integrity(explained, strict=True).passed

    later = _history([(2, 4, _chain(A1))], appends=[(1, 3, A1)])
    assert checker.check_chain_integrity(later, strict=True).passed

def test_churn_counts_changes_per_position():
    history = _history([
        (1, 0, _chain(A1, A2)),
        (1, 1, _chain(B1, B2)),
        (1, 2, _chain(A1)),
        (2, 2, _chain(B1))
    ])

    assert checker.churn(history) == {1: 2, 2: 1}

def test_eventual_prefix_window():
    with pytest.raises(ValueError):
        checker.check_eventual_prefix(History(), window=1)

    single = _history([(1, 0, _chain(A1))], horizon=100)
    assert checker.check_eventual_prefix(single).status == checker.INCONCLUSIVE

    settled = _history([
        (1, 10, _chain(A1, A2)),
        (1, 40, _chain(B1)),
        (1, 80, _chain(A1, A2)),
        (2, 90, _chain(A1, A2))
    ], horizon=100)
    assert checker.check_eventual_prefix(settled).passed

    unsettled = _history([
        (1, 10, _chain(A1, A2)),
        (1, 80, _chain(A1, A2)),
        (2, 90, _chain(B1, B2))
    ], horizon=100)
    verdict = checker.check_eventual_prefix(unsettled)
    assert verdict.status == checker.FAIL
    assert verdict.witness['position'] == 1

def test_eventual_prefix_flags_short_late_reads():
    history = _history([
        (1, 10, _chain(A1, A2)),
        (1, 80, _chain(A1, A2)),
        (2, 90, _chain())
    ], horizon=100)

    assert checker.check_eventual_prefix(history).witness['position'] == 1

def test_ever_growing_tree_sweep():
    history = _history(
        [(1, 1, _chain(A1, A2))],
        appends=[(1, 0, A1), (1, 0, A2), (2, 0, B1)]
    )

    assert checker.successful_appends(history) == 3
    verdicts = checker.k_sweep(history, fractions=(0.5, 1.0))
    assert [verdict.params['k'] for verdict in verdicts] == [2, 3]
    assert [verdict.passed for verdict in verdicts] == [True, False]

def test_strong_prefix():
    comparable = _history([(1, 0, _chain(A1)), (2, 1, _chain()), (1, 2, _chain(A1, A2))])
    forked = _history([(1, 0, _chain(A1)), (2, 1, _chain(B1))])

    assert checker.check_strong_prefix(comparable).passed
    assert not checker.check_strong_prefix(forked).passed

def test_eventual_strong_prefix_cut():
    history = _history([
        (1, 0, _chain(A1)),
        (2, 1, _chain(B1)),
        (1, 2, _chain(B1, B2)),
        (2, 3, _chain(B1, B2))
    ])

    assert checker.minimal_cut(history)[0] == 1
    verdict = checker.check_eventual_strong_prefix(history, cut_fraction=0.5)
    assert verdict.passed
    assert verdict.metrics.min_esp_cut == 1
    assert not checker.check_eventual_strong_prefix(history, cut_fraction=0.2).passed
    assert checker.check_eventual_strong_prefix(_history([])).status == checker.INCONCLUSIVE

def test_displacement():
    history = _history([
        (1, 0, _chain(A1, A2)),
        (2, 1, _chain(A1)),
        (1, 2, _chain(B1)),
        (2, 3, _chain(B1, B2))
    ])

    verdict = checker.measure_displacement(history)
    assert verdict.status == checker.MEASURED
    assert verdict.metrics.max_displacement == 2
    assert verdict.witness['value'] == 2
    assert checker.displacement_witnesses(history, 2) is None
    earlier, later = checker.displacement_witnesses(history, 1)
    assert (earlier.eid, later.eid) == (1, 5)

def test_common_prefix_series():
    history = _history([(1, 0, _chain(A1)), (2, 5, _chain(B1))], horizon=10)

    assert checker.common_prefix_series(history, sample_every=5) == [(0, 2), (5, 1), (10, 1)]

def test_eventual_consensus():
    def decision(process, j, block, payload=b'v'):
        return {'process': process, 'j': j, 'block': block, 'payload': payload.hex()}

    agreeing_late = [
        decision(1, 1, 'x'), decision(2, 1, 'y'),
        decision(1, 2, 'z'), decision(2, 2, 'z')
    ]
    verdict = checker.check_eventual_consensus(agreeing_late)
    assert verdict.status == checker.MEASURED
    assert verdict.metrics.smallest_k_ec == 1
    assert verdict.params['terminated']
    assert not checker.check_eventual_consensus(agreeing_late, instances=3).params['terminated']

    twice = [decision(1, 1, 'x'), decision(1, 1, 'y')]
    assert checker.check_eventual_consensus(twice).witness == {'integrity': [1, 1]}

    picky = ValidityPredicate(lambda payload: payload != b'bad')
    invalid = [decision(1, 1, 'x', b'bad')]
    assert checker.check_eventual_consensus(invalid, predicate=picky).status == checker.FAIL

def test_report_and_table():
    history = _history([
        (1, 10, _chain(A1)),
        (2, 60, _chain(B1)),
        (1, 90, _chain(B1, B2))
    ], horizon=100, appends=[(1, 0, A1), (2, 0, B1), (2, 0, B2)])

    report = checker.check_history(history, k_fractions=(0.5,))
    names = [item['criterion'] for item in report['criteria']]

    assert names == [
        checker.CHAIN_VALIDITY,
        checker.CHAIN_INTEGRITY,
        checker.STRONG_PREFIX,
        checker.EVENTUAL_STRONG_PREFIX,
        checker.EVENTUAL_PREFIX,
        checker.BOUNDED_DISPLACEMENT,
        checker.EVER_GROWING_TREE
    ]
    assert report['metrics']['maxDisplacement'] == 1
    assert report['params']['kFractions'] == [0.5]

    table = checker.format_table(report)
    assert 'StrongPrefix' in table
    assert 'max displacement: 1' in table

def _random_history(rng):
    tree = new_tree()
    for index in range(rng.randint(1, 7)):
        parent = rng.choice(tree.blocks())
        if parent.height < 7:
            tree = tree.attach(Block.create(parent, rng.randrange(3), payload=bytes([index])))
    reads = [
        (rng.randrange(3), tick, tree.chain_of(rng.choice(tree.blocks()).id))
        for tick in range(rng.randint(0, 8))
    ]

    return _history(reads)

def _comparable(first, second):
    return is_prefix(first, second) or is_prefix(second, first)

@pytest.mark.parametrize('seed', range(300))
def test_matches_brute_force(seed):
    history = _random_history(random.Random(seed))
    chains = [event.chain for event in history.reads()]
    pairs = [(i, j) for i in range(len(chains)) for j in range(i + 1, len(chains))]

    strong = all(_comparable(chains[i], chains[j]) for i, j in pairs)
    cut = min(
        c for c in range(len(chains) + 1)
        if all(_comparable(chains[i], chains[j]) for i, j in pairs if i >= c)
    )
    largest = max((displacement(chains[i], chains[j]) for i, j in pairs), default=0)

    assert checker.check_strong_prefix(history).passed == strong
    assert checker.minimal_cut(history)[0] == cut
    assert checker.measure_displacement(history).metrics.max_displacement == largest

def _random_run(rng, horizon=20):
    """Interleave appends and reads over a random tree, in tick order."""
    tree = new_tree()
    operations = []
    for index in range(rng.randint(1, 7)):
        parent = rng.choice(tree.blocks())
        block = Block.create(parent, rng.randrange(3), payload=bytes([index]))
        tree = tree.attach(block)
        if rng.random() < 0.8:
            operations.append((rng.randrange(horizon), 'append', rng.randrange(3), block))
    for _ in range(rng.randint(0, 8)):
        chain = tree.chain_of(rng.choice(tree.blocks()).id)
        operations.append((rng.randrange(horizon + 1), 'read', rng.randrange(3), chain))
    operations.sort(key=lambda operation: operation[0])

    history = History({'horizon': horizon})
    for tick, kind, process, item in operations:
        if kind == 'append':
            history.invoke_append(process, item, tick)
            history.respond_append(process, True, tick)
        else:
            history.invoke_read(process, tick)
            history.respond_read(process, item, tick)

    return history, operations

@pytest.mark.parametrize('seed', range(200))
def test_integrity_and_growth_match_brute_force(seed):
    history, operations = _random_run(random.Random(seed))

    explained = True
    appended = set()
    for _, kind, _, item in operations:
        if kind == 'append':
            appended.add(item.id)
        elif any(not block.is_genesis and block.id not in appended for block in item):
            explained = False
    lengths = [len(item) for _, kind, _, item in operations if kind == 'read']

    assert checker.check_chain_integrity(history).passed == explained
    for k in range(9):
        assert checker.check_ever_growing_tree(history, k).passed == any(size > k for size in lengths)

@pytest.mark.parametrize('seed', range(200))
def test_eventual_prefix_matches_brute_force(seed):
    history, operations = _random_run(random.Random(seed))
    reads = [(tick, item) for tick, kind, _, item in operations if kind == 'read']
    filled = max((len(chain) for tick, chain in reads if tick < 10), default=0)
    late = [chain for tick, chain in reads if tick >= 15]

    if len(reads) < 2 or not late:
        expected = checker.INCONCLUSIVE
    elif all(
            len(first) >= filled and len(second) >= filled
            and first.ids[:filled] == second.ids[:filled]
            for first in late for second in late
        ):
        expected = checker.PASS
    else:
        expected = checker.FAIL

    assert checker.check_eventual_prefix(history, window=0.5).status == expected

@pytest.mark.parametrize('seed', range(200))
def test_prefix_criteria_are_ordered(seed):
    history, _ = _random_run(random.Random(seed))
    if len(history.reads()) < 2:
        return

    fractions = (0.0, 0.25, 0.5, 1.0)
    passes = [
        checker.check_eventual_strong_prefix(history, cut_fraction=fraction).passed
        for fraction in fractions
    ]

    if checker.check_strong_prefix(history).passed:
        assert checker.minimal_cut(history)[0] == 0
        assert all(passes)
    # a larger admissible cut never turns a pass into a failure
    assert passes == sorted(passes)
    assert passes[-1]
